"""Knowledge distillation: alpha-weighted teacher-matching plus ground truth.

The student minimizes alpha * charbonnier(student, teacher) +
(1 - alpha) * charbonnier(student, ground truth).  Teachers are pluggable:
a built network, a directory of precomputed outputs keyed by clip id, or an
oracle that hands back the ground truth (useful for controlled runs, since
the loss then collapses to plain supervision).  Teacher outputs are computed
outside the tape; only the student receives gradients.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import config as _cfg
from . import noise as _noise
from . import ops
from .network import Model, clip_to_frames, denoise_clip, forward_cascade
from .optim import AdamState, adam_step
from .tensor import GradTape, Tensor


@dataclass
class DistillConfig:
    alpha: float = 0.5
    eps: float = 1e-4
    lr: float = 1e-3
    batch_size: int = 32
    total_steps: int = 2000
    teacher: str | None = None

    def validate(self) -> None:
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")


_CONFIG_KEYS = {"alpha", "eps", "lr", "batch_size", "total_steps", "teacher"}


def load_distill_config(path) -> DistillConfig:
    entries = _cfg.parse_kv_file(path)
    _cfg.require_keys(entries, _CONFIG_KEYS, path=path)
    base = DistillConfig()
    teacher = base.teacher
    if "teacher" in entries:
        if len(entries["teacher"]) != 1:
            raise _cfg.ConfigError(f"{path}: teacher takes one token")
        teacher = entries["teacher"][0]
    cfg = DistillConfig(
        alpha=_cfg.one_float(entries, "alpha", base.alpha, path),
        eps=_cfg.one_float(entries, "eps", base.eps, path),
        lr=_cfg.one_float(entries, "lr", base.lr, path),
        batch_size=_cfg.one_int(entries, "batch_size", base.batch_size, path),
        total_steps=_cfg.one_int(entries, "total_steps", base.total_steps, path),
        teacher=teacher,
    )
    cfg.validate()
    return cfg


class Teacher:
    """Denoises one 5-frame clip to a center frame; deterministic per clip."""

    def denoise(self, clip: np.ndarray, clip_id=None, ground_truth=None) -> np.ndarray:
        raise NotImplementedError


class NetworkTeacher(Teacher):
    """A built model acting as teacher; weights are never touched."""

    def __init__(self, model: Model, noise_level: float | None = None):
        self.model = model
        self.noise_level = noise_level

    def denoise(self, clip, clip_id=None, ground_truth=None) -> np.ndarray:
        level = self.noise_level if self.model.spec.noise_map_input else None
        return denoise_clip(self.model, clip, noise_level=level)


class FileTeacher(Teacher):
    """Precomputed teacher outputs: one single-frame clip file per clip id."""

    def __init__(self, directory):
        self.directory = str(directory)
        if not os.path.isdir(self.directory):
            raise FileNotFoundError(f"teacher directory {self.directory!r} does not exist")

    def denoise(self, clip, clip_id=None, ground_truth=None) -> np.ndarray:
        from .clipio import read_clip

        if clip_id is None:
            raise ValueError("file teacher needs a clip id")
        path = os.path.join(self.directory, f"{clip_id}.pdvd")
        if not os.path.exists(path):
            raise KeyError(f"file teacher has no output for clip {clip_id!r}")
        frames = read_clip(path)
        if frames.shape[0] != 1:
            raise ValueError(
                f"teacher file for clip {clip_id!r} holds {frames.shape[0]} frames, "
                "expected exactly 1"
            )
        return frames[0]


class OracleTeacher(Teacher):
    """Returns the ground truth; distillation then equals supervision."""

    def denoise(self, clip, clip_id=None, ground_truth=None) -> np.ndarray:
        if ground_truth is None:
            raise ValueError("oracle teacher needs the ground-truth frame")
        return np.asarray(ground_truth, dtype=np.float32)


def distill_loss(student_out, teacher_out, gt, alpha: float, eps: float):
    """(total, l_teacher, l_gt) with total = alpha*l_teacher + (1-alpha)*l_gt."""
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    s = student_out if isinstance(student_out, Tensor) else Tensor(student_out)
    t = teacher_out if isinstance(teacher_out, Tensor) else Tensor(teacher_out)
    g = gt if isinstance(gt, Tensor) else Tensor(gt)
    if s.shape != t.shape or s.shape != g.shape:
        raise ValueError(
            f"distill_loss shapes differ: student {s.shape}, teacher {t.shape}, "
            f"ground truth {g.shape}"
        )
    l_teacher = ops.charbonnier(s, t, eps=eps)
    l_gt = ops.charbonnier(s, g, eps=eps)
    total = ops.add(ops.scale(l_teacher, alpha), ops.scale(l_gt, 1.0 - alpha))
    return total, l_teacher, l_gt


def teacher_batch(teacher: Teacher, noisy: np.ndarray, gt: np.ndarray, clip_ids=None) -> np.ndarray:
    """Teacher outputs for a batch, as a (B, 3, H, W) constant array."""
    outs = []
    for i in range(noisy.shape[0]):
        cid = None if clip_ids is None else clip_ids[i]
        out = teacher.denoise(noisy[i], clip_id=cid, ground_truth=gt[i])
        if out.shape != gt[i].shape:
            raise ValueError(
                f"teacher output shape {out.shape} does not match frame {gt[i].shape}"
            )
        outs.append(np.asarray(out, dtype=np.float32))
    return np.stack(outs).transpose(0, 3, 1, 2)


@dataclass
class DistillRecord:
    step: int
    loss_total: float
    loss_teacher: float
    loss_gt: float


def _check_batch(noisy: np.ndarray, gt: np.ndarray) -> None:
    if noisy.ndim != 5 or noisy.shape[1] != 5 or noisy.shape[4] != 3:
        raise ValueError(f"noisy batch must have shape (B, 5, H, W, 3), got {noisy.shape}")
    b, _, h, w, _ = noisy.shape
    if gt.shape != (b, h, w, 3):
        raise ValueError(
            f"ground-truth batch must have shape ({b}, {h}, {w}, 3), got {gt.shape}"
        )


def distill_train_step(
    student: Model,
    batch,
    teacher: Teacher,
    config: DistillConfig,
    state: AdamState,
    step: int = 0,
) -> DistillRecord:
    """One Adam step on the distillation loss; the teacher is never updated.

    ``batch`` is (noisy clips (B,5,H,W,3), gt center frames (B,H,W,3),
    clip ids or None).
    """
    if student.spec.noise_map_input:
        raise ValueError("distillation student must not take a noise map input")
    noisy, gt, clip_ids = batch
    noisy = np.asarray(noisy, dtype=np.float32)
    gt = np.asarray(gt, dtype=np.float32)
    _check_batch(noisy, gt)

    t_out = Tensor(teacher_batch(teacher, noisy, gt, clip_ids))
    g_out = Tensor(gt.transpose(0, 3, 1, 2))
    params = student.params()
    with GradTape() as tape:
        s_out = forward_cascade(student, clip_to_frames(noisy))
        total, l_teacher, l_gt = distill_loss(s_out, t_out, g_out, config.alpha, config.eps)
        grads = tape.backward(total, list(params.values()))
    adam_step(params, {n: grads[p] for n, p in params.items()}, state, lr=config.lr)
    return DistillRecord(step, float(total.data), float(l_teacher.data), float(l_gt.data))


def supervised_train_step(
    student: Model,
    batch,
    config: DistillConfig,
    state: AdamState,
    step: int = 0,
) -> DistillRecord:
    """Control run: plain Charbonnier against ground truth, same plumbing."""
    noisy, gt, _ = batch
    noisy = np.asarray(noisy, dtype=np.float32)
    gt = np.asarray(gt, dtype=np.float32)
    _check_batch(noisy, gt)
    params = student.params()
    with GradTape() as tape:
        s_out = forward_cascade(student, clip_to_frames(noisy))
        loss = ops.charbonnier(s_out, Tensor(gt.transpose(0, 3, 1, 2)), eps=config.eps)
        grads = tape.backward(loss, list(params.values()))
    adam_step(params, {n: grads[p] for n, p in params.items()}, state, lr=config.lr)
    val = float(loss.data)
    return DistillRecord(step, val, math.nan, val)


def train_distill(
    student: Model,
    teacher: Teacher,
    batch_fn,
    config: DistillConfig,
    progress=None,
) -> list[DistillRecord]:
    """Run config.total_steps distillation steps; batch_fn(step) -> batch."""
    config.validate()
    state = AdamState()
    history = []
    for step in range(config.total_steps):
        rec = distill_train_step(student, batch_fn(step), teacher, config, state, step)
        history.append(rec)
        if progress is not None:
            progress(rec)
    return history


def train_supervised(
    student: Model,
    batch_fn,
    config: DistillConfig,
    progress=None,
) -> list[DistillRecord]:
    config.validate()
    state = AdamState()
    history = []
    for step in range(config.total_steps):
        rec = supervised_train_step(student, batch_fn(step), config, state, step)
        history.append(rec)
        if progress is not None:
            progress(rec)
    return history


def history_to_csv(history: list[DistillRecord]) -> str:
    lines = ["step,loss_total,loss_teacher,loss_gt"]
    for r in history:
        lines.append(
            f"{r.step},{r.loss_total:.8g},{r.loss_teacher:.8g},{r.loss_gt:.8g}"
        )
    return "\n".join(lines) + "\n"


_SELECT_TAG = 0
_PARAMS_TAG = 1
_CORRUPT_TAG = 2


def corrupting_batch_fn(
    patches: np.ndarray,
    batch_size: int,
    ranges: _noise.ParamRanges,
    seed: int,
):
    """Batches of on-the-fly corrupted clips from clean 5-frame patches.

    Every clip in every batch gets freshly sampled noise parameters; draws
    are keyed by (seed, step, position in batch) so a run is reproducible
    and no two clips share a stream.  Returns batch_fn(step) ->
    (noisy (B,5,H,W,3), clean center frames (B,H,W,3), patch indices).
    """
    patches = np.asarray(patches, dtype=np.float32)
    if patches.ndim != 5 or patches.shape[1] != 5 or patches.shape[4] != 3:
        raise ValueError(f"patches must have shape (N, 5, H, W, 3), got {patches.shape}")
    if patches.shape[0] < 1:
        raise ValueError("need at least one clean patch")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")

    def batch_fn(step: int):
        sel = np.random.Generator(
            np.random.Philox(_noise.derive_seed(seed, _SELECT_TAG, step))
        )
        idx = sel.integers(0, patches.shape[0], size=batch_size)
        noisy = np.empty_like(patches[idx])
        for bi, i in enumerate(idx):
            params = _noise.sample_params(
                ranges, _noise.derive_seed(seed, _PARAMS_TAG, step, bi)
            )
            noisy[bi] = _noise.corrupt_clip(
                patches[i], params, _noise.derive_seed(seed, _CORRUPT_TAG, step, bi)
            )
        clean = patches[idx][:, 2]
        return noisy, clean, [int(i) for i in idx]

    return batch_fn
