"""Shared helpers: gradient checking and exact-arithmetic model fixtures."""

import numpy as np
import pytest

from vdslim import network as net
from vdslim import pruning
from vdslim.tensor import GradTape, Tensor


def philox(seed):
    return np.random.Generator(np.random.Philox(key=seed))


def assert_grad_matches(make_loss, tensors, rtol=1e-4, h=1e-5):
    """Compare tape gradients against float64 central differences.

    ``make_loss`` must rebuild the scalar loss from the tensors' current
    contents, so perturbing ``t.data`` in place and calling it again yields
    the finite-difference quotient. Fixtures must hold float64 data: the
    whole forward then runs in float64 and the quotient is good to ~1e-10,
    leaving the tolerance to catch real gradient bugs only.
    """
    for t in tensors:
        assert t.data.dtype == np.float64, "gradcheck fixtures must be float64"
    with GradTape() as tape:
        loss = make_loss()
        grads = tape.backward(loss, list(tensors))
    for t in tensors:
        got = np.asarray(grads[t], dtype=np.float64)
        num = np.zeros(t.data.shape, dtype=np.float64)
        flat = t.data.reshape(-1)
        nf = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = float(make_loss().data)
            flat[i] = orig - h
            lm = float(make_loss().data)
            flat[i] = orig
            nf[i] = (lp - lm) / (2.0 * h)
        scale = max(1.0, float(np.abs(num).max()))
        worst = float((np.abs(got - num) / scale).max())
        assert worst < rtol, f"gradient off by {worst:.3e} (rtol {rtol})"


def offset_target(rng, reference):
    """A target a safe distance from ``reference``.

    Charbonnier's derivative is smooth but its curvature blows up as the
    difference approaches zero; keeping |pred - target| >= 0.2 keeps the
    finite-difference quotient honest at h=1e-5.
    """
    sign = np.where(rng.random(reference.shape) < 0.5, -1.0, 1.0)
    return reference + sign * rng.uniform(0.2, 1.0, size=reference.shape)


def safe_relu_input(rng, shape):
    """Values in +-[5e-3, 2], away from the kink at zero."""
    mag = rng.uniform(5e-3, 2.0, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


# ---------------------------------------------------------------------------
# Exact-arithmetic fixtures for lossless pruning checks.
#
# Every filter gets at most two nonzero taps of +-1/2 and biases are
# multiples of 1/4. A dot product with two nonzero terms has a single
# possible rounding regardless of how a BLAS blocks the accumulation
# (float addition is commutative and adding exact zeros is exact), so the
# forward pass is bit-reproducible across matmul shapes. That is what lets
# a pruned model, whose matmuls run at different sizes, reproduce the
# original outputs bit for bit once the dropped channels are exactly zero.
# ---------------------------------------------------------------------------


def lattice_fill(model, seed):
    rng = philox(seed)
    half = np.array([-0.5, 0.5], dtype=np.float32)
    for name, t in model.weights.items():
        if name.endswith(".weight"):
            w = np.zeros(t.data.shape, dtype=np.float32)
            for o in range(w.shape[0]):
                flat = w[o].reshape(-1)
                taps = int(rng.integers(1, 3))
                idx = rng.choice(flat.size, size=taps, replace=False)
                flat[idx] = rng.choice(half, size=taps)
            t.data[...] = w
        else:
            t.data[...] = rng.integers(-2, 3, size=t.data.shape).astype(np.float32) / 4.0


def lattice_clips(n, h, w, seed):
    """Clips on the 1/16 grid in [0, 1]: every value is float32-exact."""
    rng = philox(seed)
    raw = rng.integers(0, 17, size=(n, 5, h, w, 3))
    return (raw / 16.0).astype(np.float32)


def _consumers(spec):
    """Map each prunable layer to the layers that read its channels."""
    out = {}
    for block in spec.blocks:
        for i, layer in enumerate(block.layers[:-1]):
            if layer.prunable:
                out[f"{block.name}.{layer.name}"] = [
                    f"{block.name}.{block.layers[i + 1].name}"
                ]
    for block in spec.blocks:
        for layer in block.layers:
            if layer.skip_from is not None:
                # the skip source feeds the consumer through an addition, so
                # the consumer's columns are shared with the main path
                out[f"{block.name}.{layer.skip_from}"].append(
                    f"{block.name}.{layer.name}"
                )
    return out


def make_lossless_case(spec, keep_fraction=0.5, seed=301):
    """Build (model, plan) where dropping planned channels loses nothing.

    Kept sets are chosen per layer (skip partners share one set), dropped
    filters and biases are zeroed, and so are the columns through which any
    consumer reads the dropped channels. Applying the returned plan must
    then reproduce the original outputs exactly.
    """
    model = net.build(spec, seed=seed)
    lattice_fill(model, seed + 1)
    rng = philox(seed + 2)

    prunable = {}
    for block in spec.blocks:
        for layer in block.layers:
            if layer.prunable:
                prunable[f"{block.name}.{layer.name}"] = layer

    groups = {}
    for block in spec.blocks:
        for i, layer in enumerate(block.layers):
            if layer.skip_from is None:
                continue
            a = f"{block.name}.{block.layers[i - 1].name}"
            b = f"{block.name}.{layer.skip_from}"
            groups[a] = b

    originals, targets, keep = {}, {}, {}
    for name, layer in prunable.items():
        eff = net.effective_out(layer)
        originals[name] = eff
        partner = groups.get(name)
        if partner is not None and partner in keep:
            keep[name] = keep[partner]
        else:
            count = max(1, int(round(eff * keep_fraction)))
            ks = np.sort(rng.choice(eff, size=count, replace=False))
            keep[name] = tuple(int(k) for k in ks)
        targets[name] = len(keep[name])
    for name, partner in groups.items():
        keep[name] = keep[partner]
        targets[name] = len(keep[name])
    for block in spec.blocks:
        for layer in block.layers:
            if not layer.prunable:
                name = f"{block.name}.{layer.name}"
                originals[name] = layer.out_channels
                targets[name] = layer.out_channels

    consumers = _consumers(spec)
    for name, layer in prunable.items():
        dropped = sorted(set(range(originals[name])) - set(keep[name]))
        if not dropped:
            continue
        w = model.weights[f"{name}.weight"].data
        b = model.weights[f"{name}.bias"].data
        if layer.kind == "upsample_conv":
            rows = np.array([4 * d + j for d in dropped for j in range(4)])
        else:
            rows = np.array(dropped)
        w[rows] = 0.0
        b[rows] = 0.0
        for consumer in consumers[name]:
            model.weights[f"{consumer}.weight"].data[:, dropped] = 0.0

    plan = pruning.PruningPlan(
        spec_name=spec.name, originals=originals, targets=targets, keep=keep,
    )
    return model, plan


@pytest.fixture(scope="session")
def mini16_spec():
    return net.resolve_spec("mini16")


@pytest.fixture(scope="session")
def student_spec():
    return net.resolve_spec("student")


@pytest.fixture(scope="session")
def baseline_spec():
    return net.resolve_spec("baseline")
