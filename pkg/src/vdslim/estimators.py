"""Estimator wrappers over the functional core, scikit-learn style.

Each estimator keeps its constructor arguments untouched (so get_params and
set_params work), learns state in fit as trailing-underscore attributes, and
validates inputs through the shared batch checkers.  X is always a batch of
5-frame clips, y the matching clean center frames, so corruptors, denoisers,
and compressors compose in a Pipeline.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import distill as _distill
from . import metrics as _metrics
from . import noise as _noise
from . import pruning as _pruning
from . import sparsity as _sparsity
from .network import Model, NetworkSpec, build, denoise_clip, resolve_spec


def check_clip_batch(X) -> np.ndarray:
    """Validate and return (N, 5, H, W, 3) float32 clips in [0, 1]."""
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 4:
        arr = arr[None]
    if arr.ndim != 5 or arr.shape[1] != 5 or arr.shape[4] != 3:
        raise ValueError(f"expected clips of shape (N, 5, H, W, 3), got {np.shape(X)}")
    if arr.size == 0:
        raise ValueError("clip batch is empty")
    if float(arr.min()) < 0.0 or float(arr.max()) > 1.0:
        raise ValueError("clip values must lie in [0, 1]")
    return arr


def check_frame_batch(y, clips: np.ndarray) -> np.ndarray:
    """Validate center frames (N, H, W, 3) matching a clip batch."""
    arr = np.asarray(y, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    n, _, h, w, _ = clips.shape
    if arr.shape != (n, h, w, 3):
        raise ValueError(
            f"expected frames of shape ({n}, {h}, {w}, 3) to match the clips, "
            f"got {np.shape(y)}"
        )
    return arr


def _index_batches(n: int, batch_size: int, seed: int):
    def indices(step: int) -> np.ndarray:
        rng = np.random.Generator(np.random.Philox(_noise.derive_seed(seed, step)))
        return rng.integers(0, n, size=batch_size)

    return indices


class ClipCorruptor(BaseEstimator, TransformerMixin):
    """Applies the five-component sensor noise model clip by clip.

    Parameters are freshly sampled per clip from ``ranges`` (defaults when
    None), keyed by (seed, clip position), so transform is deterministic.
    """

    def __init__(self, ranges: _noise.ParamRanges | None = None, seed: int = 0):
        self.ranges = ranges
        self.seed = seed

    def fit(self, X, y=None):
        check_clip_batch(X)
        ranges = self.ranges if self.ranges is not None else _noise.ParamRanges()
        ranges.validate()
        self.ranges_ = ranges
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self)
        clips = check_clip_batch(X)
        out = np.empty_like(clips)
        for i, clip in enumerate(clips):
            params = _noise.sample_params(
                self.ranges_, _noise.derive_seed(self.seed, 0, i)
            )
            out[i] = _noise.corrupt_clip(clip, params, _noise.derive_seed(self.seed, 1, i))
        return out


class _DenoiserBase(BaseEstimator):
    """Shared predict/score for estimators that end up holding a model_."""

    noise_level: float | None = None

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self)
        clips = check_clip_batch(X)
        return np.stack([
            denoise_clip(self.model_, clip, noise_level=self.noise_level)
            for clip in clips
        ])

    def score(self, X, y) -> float:
        """Mean PSNR (dB) of predictions against clean frames."""
        clips = check_clip_batch(X)
        frames = check_frame_batch(y, clips)
        preds = self.predict(clips)
        return float(np.mean([
            _metrics.psnr(p, f) for p, f in zip(preds, frames)
        ]))


class CascadeDenoiser(_DenoiserBase):
    """Supervised training of a cascade spec on (noisy clips, clean frames)."""

    def __init__(
        self,
        spec="mini16",
        lr: float = 1e-3,
        batch_size: int = 8,
        total_steps: int = 200,
        eps: float = 1e-4,
        seed: int = 0,
        noise_level: float | None = None,
    ):
        self.spec = spec
        self.lr = lr
        self.batch_size = batch_size
        self.total_steps = total_steps
        self.eps = eps
        self.seed = seed
        self.noise_level = noise_level

    def _resolve_spec(self) -> NetworkSpec:
        if isinstance(self.spec, NetworkSpec):
            return self.spec
        return resolve_spec(self.spec)

    def fit(self, X, y):
        clips = check_clip_batch(X)
        frames = check_frame_batch(y, clips)
        spec = self._resolve_spec()
        if spec.noise_map_input:
            raise ValueError(
                "supervised fit supports map-free specs only; "
                "train map specs through the train-sparse path"
            )
        model = build(spec, seed=self.seed)
        cfg = _distill.DistillConfig(
            alpha=0.0, eps=self.eps, lr=self.lr,
            batch_size=self.batch_size, total_steps=self.total_steps,
        )
        pick = _index_batches(len(clips), self.batch_size, self.seed)

        def batch_fn(step):
            idx = pick(step)
            return clips[idx], frames[idx], None

        self.history_ = _distill.train_supervised(model, batch_fn, cfg)
        self.model_ = model
        return self


class SparsityPruner(_DenoiserBase):
    """Sparse-trains a spec, then plans and applies channel pruning.

    After fit, ``model_`` is the pruned model, ``profile_`` the measured
    sparsity, ``plan_`` the channel plan, and ``dense_model_`` the trained
    unpruned network.
    """

    def __init__(
        self,
        spec="mini16",
        config: _sparsity.SparsityConfig | None = None,
        zero_tol: float = 0.0,
        seed: int = 0,
    ):
        self.spec = spec
        self.config = config
        self.zero_tol = zero_tol
        self.seed = seed

    def fit(self, X, y):
        clips = check_clip_batch(X)
        frames = check_frame_batch(y, clips)
        spec = self.spec if isinstance(self.spec, NetworkSpec) else resolve_spec(self.spec)
        if spec.noise_map_input:
            raise ValueError("sparse fit supports map-free specs only")
        cfg = self.config if self.config is not None else _sparsity.SparsityConfig()
        cfg.validate()
        model = build(spec, seed=self.seed)
        pick = _index_batches(len(clips), cfg.batch_size, self.seed)

        def batch_fn(step):
            idx = pick(step)
            return clips[idx], frames[idx]

        self.history_ = _sparsity.train_sparse(model, batch_fn, cfg)
        self.dense_model_ = model
        self.profile_ = _pruning.analyze_sparsity(model, zero_tol=self.zero_tol)
        self.plan_ = _pruning.plan_channels(self.profile_, spec)
        self.model_ = _pruning.apply_plan(model, self.plan_)
        return self


class DistillStudent(_DenoiserBase):
    """Trains a student against a teacher plus ground truth.

    The default teacher is the oracle (ground truth), which makes fit
    equivalent to supervised training; pass a NetworkTeacher or FileTeacher
    to distill from an actual model.
    """

    def __init__(
        self,
        spec="student",
        teacher: _distill.Teacher | None = None,
        alpha: float = 0.5,
        eps: float = 1e-4,
        lr: float = 1e-3,
        batch_size: int = 32,
        total_steps: int = 2000,
        seed: int = 0,
    ):
        self.spec = spec
        self.teacher = teacher
        self.alpha = alpha
        self.eps = eps
        self.lr = lr
        self.batch_size = batch_size
        self.total_steps = total_steps
        self.seed = seed

    def fit(self, X, y):
        clips = check_clip_batch(X)
        frames = check_frame_batch(y, clips)
        spec = self.spec if isinstance(self.spec, NetworkSpec) else resolve_spec(self.spec)
        cfg = _distill.DistillConfig(
            alpha=self.alpha, eps=self.eps, lr=self.lr,
            batch_size=self.batch_size, total_steps=self.total_steps,
        )
        teacher = self.teacher if self.teacher is not None else _distill.OracleTeacher()
        student = build(spec, seed=self.seed)
        pick = _index_batches(len(clips), self.batch_size, self.seed)

        def batch_fn(step):
            idx = pick(step)
            return clips[idx], frames[idx], [int(i) for i in idx]

        self.history_ = _distill.train_distill(student, teacher, batch_fn, cfg)
        self.model_ = student
        return self
