"""Reconstruction losses and quality metrics: Charbonnier, PSNR, SSIM."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import ops
from .tensor import Tensor

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def charbonnier(x, y, eps: float = 1e-4):
    """Mean Charbonnier penalty sqrt((x - y)^2 + eps^2).

    Differentiable everywhere; on Tensor inputs this participates in the
    gradient tape, on arrays it returns a plain float.
    """
    if isinstance(x, Tensor) or isinstance(y, Tensor):
        return ops.charbonnier(x, y, eps)
    return float(ops.charbonnier(Tensor(x), Tensor(y), eps).item())


def _check_pair(x, y, range_check=True):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if range_check:
        for name, arr in (("first", x), ("second", y)):
            if arr.min() < -1e-6 or arr.max() > 1.0 + 1e-6:
                raise ValueError(f"{name} input has values outside [0, 1]")
    return x, y


def psnr(x, y) -> float:
    """10*log10(1/MSE) on [0, 1] data, capped at 100 dB for identical inputs."""
    x, y = _check_pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / mse)))


def _gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_channel(x: np.ndarray, y: np.ndarray, kernel: np.ndarray) -> float:
    # valid-window local statistics under the Gaussian weighting
    wx = sliding_window_view(x, kernel.shape)
    wy = sliding_window_view(y, kernel.shape)
    mu_x = np.einsum("ijkl,kl->ij", wx, kernel)
    mu_y = np.einsum("ijkl,kl->ij", wy, kernel)
    xx = np.einsum("ijkl,kl->ij", wx * wx, kernel)
    yy = np.einsum("ijkl,kl->ij", wy * wy, kernel)
    xy = np.einsum("ijkl,kl->ij", wx * wy, kernel)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


def ssim(x, y) -> float:
    """Mean local SSIM, 11x11 Gaussian window sigma 1.5, per-channel average."""
    x, y = _check_pair(x, y)
    if x.ndim == 2:
        x = x[:, :, None]
        y = y[:, :, None]
    if x.ndim != 3:
        raise ValueError(f"ssim expects (H, W) or (H, W, C) frames, got {x.shape}")
    h, w = x.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"frame {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    kernel = _gaussian_kernel()
    scores = [_ssim_channel(x[:, :, c], y[:, :, c], kernel) for c in range(x.shape[2])]
    return float(np.mean(scores))


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    per_frame: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"psnr_db = {self.psnr_db:.6f}", f"ssim = {self.ssim:.6f}"]
        for i, (p, s) in enumerate(self.per_frame):
            lines.append(f"frame_{i:03d}_psnr_db = {p:.6f}")
            lines.append(f"frame_{i:03d}_ssim = {s:.6f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["frame,psnr_db,ssim"]
        for i, (p, s) in enumerate(self.per_frame):
            lines.append(f"{i},{p:.6f},{s:.6f}")
        lines.append(f"all,{self.psnr_db:.6f},{self.ssim:.6f}")
        return "\n".join(lines) + "\n"


def evaluate(a, b) -> MetricReport:
    """Compare two frames or two clips; clip PSNR uses the global MSE."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        return MetricReport(psnr_db=psnr(a, b), ssim=ssim(a, b),
                            per_frame=[(psnr(a, b), ssim(a, b))])
    if a.ndim != 4:
        raise ValueError(f"expected (H, W, C) frame or (T, H, W, C) clip, got {a.shape}")
    per_frame = [(psnr(a[t], b[t]), ssim(a[t], b[t])) for t in range(a.shape[0])]
    return MetricReport(
        psnr_db=psnr(a, b),
        ssim=float(np.mean([s for _, s in per_frame])),
        per_frame=per_frame,
    )
