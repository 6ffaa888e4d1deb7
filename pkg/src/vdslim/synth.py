"""Synthetic clean clips: smooth low-frequency fields for tests and demos.

Real footage is deliberately not bundled; these clips give the trainers and
metrics something denoisable with known ground truth.  Each clip is a
bilinear blow-up of a coarse random grid, static across its five frames, so
temporal fusion has aligned content to average.
"""

from __future__ import annotations

import numpy as np

from .noise import derive_seed


def _bilinear_upsample(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    """(g, g, C) -> (h, w, C) with corner-aligned bilinear interpolation."""
    g = grid.shape[0]
    ys = np.linspace(0.0, g - 1.0, h)
    xs = np.linspace(0.0, g - 1.0, w)
    y0 = np.clip(np.floor(ys).astype(int), 0, g - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, g - 2)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    tl = grid[y0][:, x0]
    tr = grid[y0][:, x0 + 1]
    bl = grid[y0 + 1][:, x0]
    br = grid[y0 + 1][:, x0 + 1]
    top = tl * (1 - fx) + tr * fx
    bot = bl * (1 - fx) + br * fx
    return top * (1 - fy) + bot * fy


def smooth_clip(h: int, w: int, seed, grid: int = 4, lo: float = 0.1, hi: float = 0.9) -> np.ndarray:
    """One static (5, h, w, 3) float32 clip with values in [lo, hi]."""
    if grid < 2:
        raise ValueError(f"grid must be >= 2, got {grid}")
    if not 0 <= lo < hi <= 1:
        raise ValueError(f"need 0 <= lo < hi <= 1, got ({lo}, {hi})")
    rng = np.random.Generator(np.random.Philox(seed))
    coarse = rng.uniform(lo, hi, size=(grid, grid, 3))
    frame = _bilinear_upsample(coarse, h, w).astype(np.float32)
    return np.broadcast_to(frame, (5, h, w, 3)).copy()


def smooth_clips(n: int, h: int, w: int, seed: int, grid: int = 4) -> np.ndarray:
    """(n, 5, h, w, 3) float32 stack of independent smooth clips."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return np.stack([
        smooth_clip(h, w, derive_seed(seed, i), grid=grid) for i in range(n)
    ])
