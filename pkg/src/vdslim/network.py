"""Declarative cascade denoiser: spec tables, builder, counter, forward pass.

A network is two identical-shape denoising blocks. Stage 1 applies block one
to the frame triplets (1,2,3), (2,3,4), (3,4,5); stage 2 applies block two to
the three intermediate frames and returns the denoised center frame. Each
block is a 3-scale encoder-decoder over 16 conv layers with additive skips
and a residual connection from the center input frame.
"""

from __future__ import annotations

import copy as _copy
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import ops
from .tensor import Tensor

VALID_KINDS = ("conv", "strided_conv", "upsample_conv", "output_conv")

_LAYER_KEYS = {"name", "kind", "in", "out", "kernel", "skip_from", "prunable"}
_BLOCK_KEYS = {"name", "layers"}
_TOP_KEYS = {"name", "noise_map_input", "blocks"}


class SpecValidationError(ValueError):
    """A network spec violated one of its invariants."""


@dataclass
class LayerSpec:
    name: str
    kind: str
    in_channels: int
    out_channels: int
    kernel: int = 3
    skip_from: str | None = None
    prunable: bool = True


@dataclass
class BlockSpec:
    name: str
    layers: list[LayerSpec]


@dataclass
class NetworkSpec:
    name: str
    noise_map_input: bool
    blocks: list[BlockSpec]
    stage_count: int = 2
    frames_per_block: int = 3


def effective_out(layer: LayerSpec) -> int:
    """Channels seen by the next layer (pixel shuffle folds 4 into space)."""
    if layer.kind == "upsample_conv":
        return layer.out_channels // 4
    return layer.out_channels


def _block_input_channels(spec: NetworkSpec) -> int:
    per_frame = 4 if spec.noise_map_input else 3
    return spec.frames_per_block * per_frame


def validate_spec(spec: NetworkSpec) -> None:
    """Raise SpecValidationError naming the offending layer on any violation."""
    if spec.stage_count != 2:
        raise SpecValidationError(f"stage_count is fixed at 2, got {spec.stage_count}")
    if spec.frames_per_block != 3:
        raise SpecValidationError(f"frames_per_block is fixed at 3, got {spec.frames_per_block}")
    if len(spec.blocks) != spec.stage_count:
        raise SpecValidationError(
            f"expected {spec.stage_count} blocks, got {len(spec.blocks)}"
        )
    cin = _block_input_channels(spec)
    for block in spec.blocks:
        if not block.layers:
            raise SpecValidationError(f"block {block.name!r} has no layers")
        seen: dict[str, LayerSpec] = {}
        for idx, layer in enumerate(block.layers):
            where = f"{block.name}.{layer.name}"
            if layer.kind not in VALID_KINDS:
                raise SpecValidationError(f"{where}: unknown kind {layer.kind!r}")
            if layer.name in seen:
                raise SpecValidationError(f"{where}: duplicate layer name")
            if layer.in_channels <= 0 or layer.out_channels <= 0:
                raise SpecValidationError(f"{where}: channel widths must be positive")
            if layer.kernel <= 0 or layer.kernel % 2 == 0:
                raise SpecValidationError(f"{where}: kernel must be odd and positive")
            if layer.kind == "upsample_conv" and layer.out_channels % 4 != 0:
                raise SpecValidationError(f"{where}: upsample_conv needs out divisible by 4")
            if layer.kind == "output_conv":
                if idx != len(block.layers) - 1:
                    raise SpecValidationError(f"{where}: output_conv must be the final layer")
                if layer.out_channels != 3:
                    raise SpecValidationError(f"{where}: output_conv must have 3 channels")
                if layer.prunable:
                    raise SpecValidationError(f"{where}: output_conv must not be prunable")
            expected_in = cin if idx == 0 else effective_out(block.layers[idx - 1])
            if layer.in_channels != expected_in:
                raise SpecValidationError(
                    f"{where}: in={layer.in_channels} but producer supplies {expected_in}"
                )
            if layer.skip_from is not None:
                if layer.skip_from not in seen:
                    raise SpecValidationError(
                        f"{where}: skip_from {layer.skip_from!r} is not an earlier layer"
                    )
                skip_ch = effective_out(seen[layer.skip_from])
                prev_ch = effective_out(block.layers[idx - 1])
                if skip_ch != prev_ch:
                    raise SpecValidationError(
                        f"{where}: skip addition joins {skip_ch} and {prev_ch} channels"
                    )
            seen[layer.name] = layer
        if block.layers[-1].kind != "output_conv":
            raise SpecValidationError(
                f"{block.name}: final layer must be an output_conv with 3 channels"
            )


def count_params(spec: NetworkSpec) -> int:
    """Sum over layers of out*in*k^2 + out (weights plus bias)."""
    total = 0
    for block in spec.blocks:
        for layer in block.layers:
            k2 = layer.kernel * layer.kernel
            total += layer.out_channels * layer.in_channels * k2 + layer.out_channels
    return total


def standard_block_table(cin: int, a: int, c0: int, c1: int, c2: int, b: int) -> list[LayerSpec]:
    """The 16-layer encoder-decoder table used by all shipped specs."""
    L = LayerSpec
    return [
        L("enc0_a", "conv", cin, a),
        L("enc0_b", "conv", a, c0),
        L("down1", "strided_conv", c0, c1),
        L("enc1_a", "conv", c1, c1),
        L("enc1_b", "conv", c1, c1),
        L("down2", "strided_conv", c1, c2),
        L("enc2_a", "conv", c2, c2),
        L("enc2_b", "conv", c2, c2),
        L("dec2_a", "conv", c2, c2),
        L("dec2_b", "conv", c2, c2),
        L("up2", "upsample_conv", c2, 4 * c1),
        L("dec1_a", "conv", c1, c1, skip_from="enc1_b"),
        L("dec1_b", "conv", c1, c1),
        L("up1", "upsample_conv", c1, 4 * c0),
        L("dec0", "conv", c0, b, skip_from="enc0_b"),
        L("out", "output_conv", b, 3, prunable=False),
    ]


def make_cascade_spec(name: str, widths, noise_map_input: bool) -> NetworkSpec:
    """Build a two-block spec from block widths (a, c0, c1, c2, b)."""
    a, c0, c1, c2, b = widths
    cin = 12 if noise_map_input else 9
    spec = NetworkSpec(
        name=name,
        noise_map_input=noise_map_input,
        blocks=[
            BlockSpec("stage1", standard_block_table(cin, a, c0, c1, c2, b)),
            BlockSpec("stage2", standard_block_table(cin, a, c0, c1, c2, b)),
        ],
    )
    validate_spec(spec)
    return spec


def builtin_spec_path(name: str) -> str:
    """Path of a bundled spec ('baseline', 'pruned', 'student', 'mini16', ...)."""
    import os

    path = os.path.join(os.path.dirname(__file__), "specs", f"{name}.yaml")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no bundled spec named {name!r}")
    return path


def resolve_spec(name_or_path) -> NetworkSpec:
    """Load a spec from a file path or a bundled spec name."""
    import os

    text = str(name_or_path)
    if os.path.exists(text):
        return load_network_spec(text)
    if text.endswith((".yaml", ".yml")) or os.sep in text:
        raise FileNotFoundError(f"spec file {text!r} does not exist")
    return load_network_spec(builtin_spec_path(text))


def load_network_spec(path) -> NetworkSpec:
    """Read a spec file; unknown keys are rejected."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise SpecValidationError(f"{path}: spec file must be a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise SpecValidationError(f"{path}: unknown keys {sorted(unknown)}")
    for key in _TOP_KEYS:
        if key not in raw:
            raise SpecValidationError(f"{path}: missing key {key!r}")
    blocks = []
    for braw in raw["blocks"]:
        unknown = set(braw) - _BLOCK_KEYS
        if unknown:
            raise SpecValidationError(f"{path}: unknown block keys {sorted(unknown)}")
        layers = []
        for lraw in braw["layers"]:
            unknown = set(lraw) - _LAYER_KEYS
            if unknown:
                raise SpecValidationError(
                    f"{path}: layer {lraw.get('name', '?')!r} has unknown keys {sorted(unknown)}"
                )
            for key in ("name", "kind", "in", "out"):
                if key not in lraw:
                    raise SpecValidationError(
                        f"{path}: layer {lraw.get('name', '?')!r} missing key {key!r}"
                    )
            kind = lraw["kind"]
            layers.append(
                LayerSpec(
                    name=str(lraw["name"]),
                    kind=str(kind),
                    in_channels=int(lraw["in"]),
                    out_channels=int(lraw["out"]),
                    kernel=int(lraw.get("kernel", 3)),
                    skip_from=lraw.get("skip_from"),
                    prunable=bool(lraw.get("prunable", kind != "output_conv")),
                )
            )
        blocks.append(BlockSpec(name=str(braw["name"]), layers=layers))
    spec = NetworkSpec(
        name=str(raw["name"]),
        noise_map_input=bool(raw["noise_map_input"]),
        blocks=blocks,
    )
    validate_spec(spec)
    return spec


def save_network_spec(spec: NetworkSpec, path) -> None:
    doc = {
        "name": spec.name,
        "noise_map_input": spec.noise_map_input,
        "blocks": [
            {
                "name": block.name,
                "layers": [
                    {
                        key: val
                        for key, val in (
                            ("name", layer.name),
                            ("kind", layer.kind),
                            ("in", layer.in_channels),
                            ("out", layer.out_channels),
                            ("kernel", layer.kernel),
                            ("skip_from", layer.skip_from),
                            ("prunable", layer.prunable),
                        )
                        if not (key == "skip_from" and val is None)
                    }
                    for layer in block.layers
                ],
            }
            for block in spec.blocks
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


class Model:
    """A spec plus its weight tensors, keyed '<block>.<layer>.<weight|bias>'."""

    def __init__(self, spec: NetworkSpec, weights: dict[str, Tensor]):
        self.spec = spec
        self.weights = weights
        for block in spec.blocks:
            for layer in block.layers:
                w = weights[f"{block.name}.{layer.name}.weight"]
                expect = (
                    layer.out_channels,
                    layer.in_channels,
                    layer.kernel,
                    layer.kernel,
                )
                if tuple(w.shape) != expect:
                    raise SpecValidationError(
                        f"{block.name}.{layer.name}: weight shape {tuple(w.shape)} "
                        f"does not match spec {expect}"
                    )
                b = weights[f"{block.name}.{layer.name}.bias"]
                if tuple(b.shape) != (layer.out_channels,):
                    raise SpecValidationError(
                        f"{block.name}.{layer.name}: bias shape {tuple(b.shape)} "
                        f"does not match {layer.out_channels} channels"
                    )

    def params(self) -> dict[str, Tensor]:
        return self.weights

    def prunable_weight_names(self) -> list[str]:
        names = []
        for block in self.spec.blocks:
            for layer in block.layers:
                if layer.prunable:
                    names.append(f"{block.name}.{layer.name}.weight")
        return names

    def copy(self) -> "Model":
        weights = {
            name: Tensor(t.data.copy(), requires_grad=t.requires_grad)
            for name, t in self.weights.items()
        }
        return Model(_copy.deepcopy(self.spec), weights)


def build(spec: NetworkSpec, seed: int) -> Model:
    """Initialize weights fan-in-scaled from a seeded Philox stream.

    Weights are uniform in +-sqrt(6/fan_in) with fan_in = in*k*k; biases are
    uniform in +-1/sqrt(fan_in). Same seed gives a bit-identical model.
    """
    validate_spec(spec)
    rng = np.random.Generator(np.random.Philox(key=seed))
    weights: dict[str, Tensor] = {}
    for block in spec.blocks:
        for layer in block.layers:
            fan_in = layer.in_channels * layer.kernel * layer.kernel
            bound = float(np.sqrt(6.0 / fan_in))
            shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
            w = rng.uniform(-bound, bound, size=shape).astype(np.float32)
            bb = 1.0 / float(np.sqrt(fan_in))
            b = rng.uniform(-bb, bb, size=layer.out_channels).astype(np.float32)
            weights[f"{block.name}.{layer.name}.weight"] = Tensor(w, requires_grad=True)
            weights[f"{block.name}.{layer.name}.bias"] = Tensor(b, requires_grad=True)
    return Model(spec, weights)


def _assemble_input(spec: NetworkSpec, frames, noise_map):
    if spec.noise_map_input:
        if noise_map is None:
            raise ValueError("this spec requires a noise map input")
        parts = []
        for f in frames:
            parts.extend((f, noise_map))
        return ops.concat(parts, axis=1)
    if noise_map is not None:
        raise ValueError("this spec does not accept a noise map input")
    return ops.concat(list(frames), axis=1)


def forward_block(model: Model, block_index: int, frames, noise_map=None) -> Tensor:
    """Run one denoising block on a frame triplet.

    Returns center frame + learned residual. Inputs whose H or W is not a
    multiple of 4 are reflect-padded for the strided path and cropped after.
    """
    if len(frames) != 3:
        raise ValueError(f"forward_block expects 3 frames, got {len(frames)}")
    block = model.spec.blocks[block_index]
    x = _assemble_input(model.spec, frames, noise_map)
    n, _, h, w = x.shape
    pad_b = (-h) % 4
    pad_r = (-w) % 4
    if pad_b or pad_r:
        x = ops.reflect_pad(x, (0, pad_b, 0, pad_r))
    produced: dict[str, Tensor] = {}
    prev = x
    for layer in block.layers:
        inp = prev
        if layer.skip_from is not None:
            inp = ops.add(prev, produced[layer.skip_from])
        wt = model.weights[f"{block.name}.{layer.name}.weight"]
        bt = model.weights[f"{block.name}.{layer.name}.bias"]
        stride = 2 if layer.kind == "strided_conv" else 1
        y = ops.conv2d(inp, wt, bt, stride=stride, padding=layer.kernel // 2)
        if layer.kind in ("conv", "strided_conv"):
            y = ops.relu(y)
        elif layer.kind == "upsample_conv":
            y = ops.pixel_shuffle(y, 2)
        produced[layer.name] = y
        prev = y
    residual = prev
    if pad_b or pad_r:
        residual = ops.crop(residual, 0, 0, h, w)
    return ops.add(frames[1], residual)


def forward_cascade(model: Model, frames, noise_map=None) -> Tensor:
    """Two-stage cascade over a 5-frame clip; returns the denoised center."""
    if len(frames) != 5:
        raise ValueError(f"forward_cascade expects 5 frames, got {len(frames)}")
    mid = [
        forward_block(model, 0, frames[i:i + 3], noise_map=noise_map)
        for i in range(3)
    ]
    return forward_block(model, 1, mid, noise_map=noise_map)


def clip_to_frames(clips: np.ndarray) -> list[Tensor]:
    """(B, 5, H, W, 3) array in [0,1] to five (B, 3, H, W) tensors."""
    arr = np.asarray(clips, dtype=np.float32)
    if arr.ndim == 4:
        arr = arr[None]
    if arr.ndim != 5 or arr.shape[1] != 5 or arr.shape[4] != 3:
        raise ValueError(f"expected (B, 5, H, W, 3) clip batch, got {arr.shape}")
    return [
        Tensor(np.ascontiguousarray(arr[:, t].transpose(0, 3, 1, 2)))
        for t in range(5)
    ]


def frame_to_array(frame: Tensor) -> np.ndarray:
    """(B, 3, H, W) tensor back to (B, H, W, 3) float32."""
    return np.ascontiguousarray(frame.data.transpose(0, 2, 3, 1))


def constant_noise_map(batch: int, h: int, w: int, level: float) -> Tensor:
    return Tensor(np.full((batch, 1, h, w), level, dtype=np.float32))


def denoise_clip(model: Model, clip: np.ndarray, noise_level: float | None = None) -> np.ndarray:
    """Inference on one (5, H, W, 3) clip; output clamped to [0, 1].

    ``noise_level`` fills a constant noise map for specs that take one.
    """
    frames = clip_to_frames(clip)
    nmap = None
    if model.spec.noise_map_input:
        if noise_level is None:
            raise ValueError("model takes a noise map: pass noise_level")
        b, _, h, w = frames[0].shape
        nmap = constant_noise_map(b, h, w, noise_level)
    out = forward_cascade(model, frames, noise_map=nmap)
    return np.clip(frame_to_array(out)[0], 0.0, 1.0)
