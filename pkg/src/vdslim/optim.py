"""Adam optimizer with bias correction, operating on named parameter dicts."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    def __init__(self):
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One in-place Adam update over every entry of ``params``.

    ``grads`` must hold one array per parameter name, shape-matched. The
    state must be fresh or come from the same parameter set.
    """
    if state.m and set(state.m) != set(params):
        raise ValueError("adam_step: state belongs to a different parameter set")
    for name, p in params.items():
        if name not in grads:
            raise ValueError(f"adam_step: missing gradient for {name!r}")
        if grads[name].shape != p.data.shape:
            raise ValueError(
                f"adam_step: gradient shape {grads[name].shape} does not match "
                f"parameter {name!r} shape {p.data.shape}"
            )

    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name].astype(p.data.dtype, copy=False)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state
