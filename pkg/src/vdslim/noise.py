"""Five-component physics-informed sensor noise synthesis.

Components, applied in this fixed order with a final clamp to [0, 1]:
heteroscedastic shot/read noise, per-frame banding, clip-constant temporal
banding, periodic frequency-domain patterns, and quantization last.

Randomness comes from a Philox stream keyed by the seed; frame t draws from
the substream at counter offset t * 2**64, and clip-level draws (temporal
banding, optional per-channel phases) use the reserved offset 2**32. All
parameters of one corruption draw stay fixed across the clip's frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import (
    ConfigError,
    float_list,
    float_pair,
    one_bool,
    parse_kv_file,
    require_keys,
)

CLIP_STREAM_INDEX = 2 ** 32

_ORIENTATIONS = ("horizontal", "vertical")


def substream(root, index: int) -> np.random.Generator:
    """Independent Philox substream at a counter offset of the root seed."""
    if isinstance(root, np.random.SeedSequence):
        bg = np.random.Philox(seed=root)
    else:
        root = int(root)
        if root < 0:
            raise ValueError(f"seed must be non-negative, got {root}")
        bg = np.random.Philox(key=root)
    bg.advance(int(index) << 64)
    return np.random.Generator(bg)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return substream(rng, 0)


def derive_seed(*parts) -> np.random.SeedSequence:
    """Stable per-(seed, step, index, ...) sampling root."""
    return np.random.SeedSequence(tuple(int(p) for p in parts))


@dataclass
class NoiseParams:
    """The eight intensity scalars plus orientation and frequency triples."""

    sigma_s: float
    sigma_r: float
    lambda_q: float
    sigma_b: float
    sigma_bt: float
    sigma_p1: float
    sigma_p2: float
    sigma_p3: float
    banding_orientation: str = "horizontal"
    # three (f_x, f_y, phase) triples, frequencies in cycles/pixel
    periodic_freqs: tuple = ((0.125, 0.0, 0.0),) * 3
    periodic_per_channel: bool = False

    def amplitudes(self) -> tuple[float, float, float]:
        return (self.sigma_p1, self.sigma_p2, self.sigma_p3)

    def validate(self) -> None:
        for name in ("sigma_s", "sigma_r", "lambda_q", "sigma_b", "sigma_bt",
                     "sigma_p1", "sigma_p2", "sigma_p3"):
            if getattr(self, name) < 0:
                raise ValueError(f"NoiseParams.{name} must be >= 0")
        if self.banding_orientation not in _ORIENTATIONS:
            raise ValueError(f"banding_orientation must be one of {_ORIENTATIONS}")
        if len(self.periodic_freqs) != 3:
            raise ValueError("periodic_freqs needs exactly three (f_x, f_y, phase) triples")
        for fx, fy, _ in self.periodic_freqs:
            _check_frequency(fx, fy)


def _check_frequency(fx: float, fy: float) -> None:
    dominant = max(abs(fx), abs(fy))
    if not (0.0 < dominant <= 0.5):
        raise ValueError(
            f"periodic frequency ({fx}, {fy}) outside (0, 0.5] cycles/pixel"
        )


@dataclass
class ParamRanges:
    """Uniform sampling intervals for one corruption draw.

    The shipped defaults are visually plausible placeholders and are fully
    overridable through the config file; they are not published values.
    """

    sigma_s: tuple = (0.0, 0.04)
    sigma_r: tuple = (0.0, 0.06)
    lambda_q_choices: tuple = (0.0, 1.0 / 255.0, 1.0 / 64.0)
    sigma_b: tuple = (0.0, 0.02)
    sigma_bt: tuple = (0.0, 0.02)
    sigma_p1: tuple = (0.0, 0.02)
    sigma_p2: tuple = (0.0, 0.02)
    sigma_p3: tuple = (0.0, 0.02)
    orientation: str = "both"
    freq: tuple = (0.05, 0.5)
    periodic_per_channel: bool = False

    def validate(self) -> None:
        for name in ("sigma_s", "sigma_r", "sigma_b", "sigma_bt",
                     "sigma_p1", "sigma_p2", "sigma_p3"):
            lo, hi = getattr(self, name)
            if not (0.0 <= lo <= hi):
                raise ValueError(f"ParamRanges.{name}: need 0 <= min <= max, got ({lo}, {hi})")
        if not self.lambda_q_choices:
            raise ValueError("ParamRanges.lambda_q_choices must not be empty")
        if any(v < 0 for v in self.lambda_q_choices):
            raise ValueError("ParamRanges.lambda_q_choices must be >= 0")
        if self.orientation not in ("both",) + _ORIENTATIONS:
            raise ValueError("ParamRanges.orientation must be both, horizontal, or vertical")
        lo, hi = self.freq
        if not (0.0 < lo <= hi <= 0.5):
            raise ValueError(f"ParamRanges.freq: need 0 < lo <= hi <= 0.5, got ({lo}, {hi})")


_RANGE_KEYS = {
    "sigma_s", "sigma_r", "lambda_q", "sigma_b", "sigma_bt",
    "sigma_p1", "sigma_p2", "sigma_p3", "orientation", "freq",
    "periodic_per_channel",
}


def load_param_ranges(path) -> ParamRanges:
    entries = parse_kv_file(path)
    require_keys(entries, _RANGE_KEYS, path=path)
    defaults = ParamRanges()
    orientation = defaults.orientation
    if "orientation" in entries:
        toks = entries["orientation"]
        if len(toks) != 1:
            raise ConfigError(f"{path}: orientation expects one value")
        orientation = toks[0]
    ranges = ParamRanges(
        sigma_s=float_pair(entries, "sigma_s", defaults.sigma_s, path),
        sigma_r=float_pair(entries, "sigma_r", defaults.sigma_r, path),
        lambda_q_choices=float_list(entries, "lambda_q", defaults.lambda_q_choices, path),
        sigma_b=float_pair(entries, "sigma_b", defaults.sigma_b, path),
        sigma_bt=float_pair(entries, "sigma_bt", defaults.sigma_bt, path),
        sigma_p1=float_pair(entries, "sigma_p1", defaults.sigma_p1, path),
        sigma_p2=float_pair(entries, "sigma_p2", defaults.sigma_p2, path),
        sigma_p3=float_pair(entries, "sigma_p3", defaults.sigma_p3, path),
        orientation=orientation,
        freq=float_pair(entries, "freq", defaults.freq, path),
        periodic_per_channel=one_bool(
            entries, "periodic_per_channel", defaults.periodic_per_channel, path
        ),
    )
    ranges.validate()
    return ranges


def sample_params(ranges: ParamRanges, rng) -> NoiseParams:
    """Draw one NoiseParams uniformly from the given intervals.

    Draw order is fixed: the seven sigma intervals, the lambda_q choice,
    orientation, then per component (magnitude, angle, phase).
    """
    ranges.validate()
    rng = _as_generator(rng)
    vals = {}
    for name in ("sigma_s", "sigma_r", "sigma_b", "sigma_bt",
                 "sigma_p1", "sigma_p2", "sigma_p3"):
        lo, hi = getattr(ranges, name)
        vals[name] = float(rng.uniform(lo, hi))
    lam = float(ranges.lambda_q_choices[rng.integers(len(ranges.lambda_q_choices))])
    if ranges.orientation == "both":
        orientation = _ORIENTATIONS[int(rng.integers(2))]
    else:
        orientation = ranges.orientation
    freqs = []
    for _ in range(3):
        mag = float(rng.uniform(ranges.freq[0], ranges.freq[1]))
        angle = float(rng.uniform(0.0, 2.0 * np.pi))
        fx, fy = mag * np.cos(angle), mag * np.sin(angle)
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        freqs.append((float(fx), float(fy), phase))
    params = NoiseParams(
        sigma_s=vals["sigma_s"],
        sigma_r=vals["sigma_r"],
        lambda_q=lam,
        sigma_b=vals["sigma_b"],
        sigma_bt=vals["sigma_bt"],
        sigma_p1=vals["sigma_p1"],
        sigma_p2=vals["sigma_p2"],
        sigma_p3=vals["sigma_p3"],
        banding_orientation=orientation,
        periodic_freqs=tuple(freqs),
        periodic_per_channel=ranges.periodic_per_channel,
    )
    params.validate()
    return params


def _check_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"frame must be (H, W, 3), got {frame.shape}")
    return frame


def add_heteroscedastic(frame, sigma_s: float, sigma_r: float, rng) -> np.ndarray:
    """Add n ~ N(0, sigma_s * x + sigma_r^2): shot noise plus read noise."""
    if sigma_s < 0 or sigma_r < 0:
        raise ValueError(f"negative noise coefficient: sigma_s={sigma_s}, sigma_r={sigma_r}")
    frame = _check_frame(frame)
    if frame.min() < 0.0 or frame.max() > 1.0:
        raise ValueError("heteroscedastic noise needs signal values in [0, 1]")
    rng = _as_generator(rng)
    var = sigma_s * frame + sigma_r * sigma_r
    noise = rng.standard_normal(frame.shape) * np.sqrt(var)
    return (frame + noise.astype(np.float32)).astype(np.float32)


def add_quantization(frame, lambda_q: float, rng) -> np.ndarray:
    """Add u ~ Uniform(-lambda_q/2, +lambda_q/2) per pixel (ADC model)."""
    if lambda_q < 0:
        raise ValueError(f"lambda_q must be >= 0, got {lambda_q}")
    frame = _check_frame(frame)
    rng = _as_generator(rng)
    u = rng.uniform(-lambda_q / 2.0, lambda_q / 2.0, size=frame.shape)
    return (frame + u.astype(np.float32)).astype(np.float32)


def make_banding(h: int, w: int, sigma: float, orientation: str, rng) -> np.ndarray:
    """One N(0, sigma^2) offset per row (horizontal) or column (vertical)."""
    if sigma < 0:
        raise ValueError(f"banding sigma must be >= 0, got {sigma}")
    if orientation not in _ORIENTATIONS:
        raise ValueError(f"orientation must be one of {_ORIENTATIONS}, got {orientation!r}")
    rng = _as_generator(rng)
    if orientation == "horizontal":
        offsets = rng.normal(0.0, sigma, size=h).astype(np.float32)
        return np.broadcast_to(offsets[:, None], (h, w)).copy()
    offsets = rng.normal(0.0, sigma, size=w).astype(np.float32)
    return np.broadcast_to(offsets[None, :], (h, w)).copy()


def periodic_pattern(h: int, w: int, amplitudes, freqs, channel_phases=None) -> np.ndarray:
    """Sum of three sinusoidal plaids, (H, W) or (H, W, 3) when per-channel."""
    if len(amplitudes) != 3 or len(freqs) != 3:
        raise ValueError("periodic noise takes exactly three components")
    for fx, fy, _ in freqs:
        _check_frequency(fx, fy)
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    if channel_phases is None:
        pattern = np.zeros((h, w), dtype=np.float64)
        for amp, (fx, fy, phase) in zip(amplitudes, freqs):
            pattern += amp * np.sin(2.0 * np.pi * (fx * x + fy * y) + phase)
        return pattern.astype(np.float32)
    pattern = np.zeros((h, w, 3), dtype=np.float64)
    for c in range(3):
        for i, (amp, (fx, fy, phase)) in enumerate(zip(amplitudes, freqs)):
            pattern[:, :, c] += amp * np.sin(
                2.0 * np.pi * (fx * x + fy * y) + phase + channel_phases[c][i]
            )
    return pattern.astype(np.float32)


def add_periodic(frame, amplitudes, freqs, rng=None, channel_phases=None) -> np.ndarray:
    """Add the periodic plaid; shared across channels unless phases differ."""
    frame = _check_frame(frame)
    pattern = periodic_pattern(frame.shape[0], frame.shape[1], amplitudes, freqs,
                               channel_phases=channel_phases)
    if pattern.ndim == 2:
        pattern = pattern[:, :, None]
    return (frame + pattern).astype(np.float32)


def _check_clip(clip: np.ndarray) -> np.ndarray:
    clip = np.asarray(clip, dtype=np.float32)
    if clip.ndim != 4 or clip.shape[3] != 3:
        raise ValueError(f"clip must be (T, H, W, 3), got {clip.shape}")
    if clip.min() < 0.0 or clip.max() > 1.0:
        raise ValueError("clip values must lie in [0, 1]")
    return clip


def corrupt_clip(clip, params: NoiseParams, seed) -> np.ndarray:
    """Apply all five components with per-clip parameter consistency.

    Heteroscedastic noise, per-frame banding, and quantization draw fresh
    randomness per frame; the temporal banding pattern and the periodic
    phases are fixed for the whole clip. Output is clamped to [0, 1].
    """
    clip = _check_clip(clip)
    params.validate()
    t_count, h, w, _ = clip.shape

    clip_rng = substream(seed, CLIP_STREAM_INDEX)
    banding_t = make_banding(h, w, params.sigma_bt, params.banding_orientation, clip_rng)
    channel_phases = None
    if params.periodic_per_channel:
        channel_phases = clip_rng.uniform(0.0, 2.0 * np.pi, size=(3, 3))
    pattern = periodic_pattern(h, w, params.amplitudes(), params.periodic_freqs,
                               channel_phases=channel_phases)
    if pattern.ndim == 2:
        pattern = pattern[:, :, None]

    out = np.empty_like(clip)
    for t in range(t_count):
        rng = substream(seed, t)
        frame = add_heteroscedastic(clip[t], params.sigma_s, params.sigma_r, rng)
        frame = frame + make_banding(h, w, params.sigma_b, params.banding_orientation, rng)[:, :, None]
        frame = frame + banding_t[:, :, None]
        frame = frame + pattern
        frame = add_quantization(frame, params.lambda_q, rng)
        out[t] = frame
    return np.clip(out, 0.0, 1.0)


def corrupt_clip_awgn(clip, sigma: float, seed) -> np.ndarray:
    """Additive white Gaussian noise at std sigma/255 on [0, 1] data."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    clip = _check_clip(clip)
    std = sigma / 255.0
    out = np.empty_like(clip)
    for t in range(clip.shape[0]):
        rng = substream(seed, t)
        out[t] = clip[t] + (rng.standard_normal(clip[t].shape) * std).astype(np.float32)
    return np.clip(out, 0.0, 1.0)
