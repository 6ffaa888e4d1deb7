"""Minimal reverse-mode tensor core.

Tensors wrap numpy arrays (float32 by default, NCHW layout for image data).
Operations executed inside a ``GradTape`` context append backward closures to
the tape; ``GradTape.backward`` replays them once, in reverse order, and
returns a gradient map keyed by parameter tensor.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)

# Stack of open tapes; ops record onto the innermost one. Single-threaded.
_TAPE_STACK: list["GradTape"] = []


class Tensor:
    """A numpy-backed value, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def active_tape():
    """The innermost open tape, or None outside any ``with GradTape()``."""
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class GradTape:
    """Ordered record of executed operations and their backward closures."""

    def __init__(self):
        # Each record is (output, inputs, backward_fn). backward_fn maps the
        # output gradient to one gradient per input (None for non-tensors).
        self._records = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def record(self, output: Tensor, inputs, backward_fn):
        self._records.append((output, tuple(inputs), backward_fn))

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor, params) -> dict:
        """Accumulate d(loss)/d(param) for every tensor in ``params``.

        The tape is walked exactly once in reverse execution order. Unused
        parameters receive zero gradients of their own shape.
        """
        if not isinstance(loss, Tensor):
            raise TypeError("loss must be a Tensor")
        if loss.size != 1:
            raise ValueError(f"loss must be scalar, got shape {tuple(loss.shape)}")
        params = list(params)
        for p in params:
            if not isinstance(p, Tensor):
                raise TypeError("params must be Tensors")
            if not p.requires_grad:
                raise ValueError("queried a detached tensor: requires_grad is False")
        if not any(out is loss for out, _, _ in self._records):
            raise ValueError("loss was not produced on this tape")

        grads: dict[int, np.ndarray] = {
            id(loss): np.ones_like(loss.data)
        }
        for out, inputs, backward_fn in reversed(self._records):
            g = grads.get(id(out))
            if g is None:
                continue
            input_grads = backward_fn(g)
            for inp, ig in zip(inputs, input_grads):
                if ig is None or not isinstance(inp, Tensor):
                    continue
                if not inp.requires_grad:
                    continue
                acc = grads.get(id(inp))
                if acc is None:
                    grads[id(inp)] = ig
                else:
                    grads[id(inp)] = acc + ig

        result = {}
        for p in params:
            g = grads.get(id(p))
            if g is None:
                g = np.zeros_like(p.data)
            result[p] = np.ascontiguousarray(g, dtype=p.data.dtype)
        return result
