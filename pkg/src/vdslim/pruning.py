"""Structured channel pruning: sparsity analysis, planning, and slicing.

Planning turns per-layer nonzero ratios into power-of-two out-channel
targets: raw target r_l * C, rounded to the geometrically nearest power of
two (ties round down), floored at 4 channels, with each block's first and
last prunable layer allowed to drop at most one power-of-two step below its
original width.  Layers joined by an additive skip must stay channel-aligned,
so such pairs are reconciled to the larger target and later share one kept
set.

All targets and kept-channel sets live in effective (post-shuffle) units:
an upsample layer whose weight has 4c rows counts as c channels here, and
each kept effective channel keeps its 4 consecutive weight rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import (
    BlockSpec,
    LayerSpec,
    Model,
    NetworkSpec,
    count_params,
    effective_out,
    validate_spec,
)
from .tensor import Tensor

MIN_CHANNELS = 4


@dataclass
class LayerSparsity:
    layer: str
    nonzero: int
    total: int

    def __post_init__(self):
        if self.total <= 0:
            raise ValueError(f"{self.layer}: total weight count must be positive")
        if not 0 <= self.nonzero <= self.total:
            raise ValueError(
                f"{self.layer}: nonzero count {self.nonzero} outside [0, {self.total}]"
            )

    @property
    def ratio(self) -> float:
        return self.nonzero / self.total


def analyze_sparsity(model: Model, zero_tol: float = 0.0) -> list[LayerSparsity]:
    """Nonzero ratio of every prunable layer's weight, in spec order.

    A weight counts as nonzero when |w| > zero_tol; the default 0 counts
    exact zeros only, which is what proximal training produces.
    """
    if zero_tol < 0:
        raise ValueError(f"zero_tol must be >= 0, got {zero_tol}")
    profile = []
    for block in model.spec.blocks:
        for layer in block.layers:
            if not layer.prunable:
                continue
            name = f"{block.name}.{layer.name}"
            w = model.weights[f"{name}.weight"].data
            nz = int(np.count_nonzero(np.abs(w) > zero_tol))
            profile.append(LayerSparsity(name, nz, int(w.size)))
    return profile


def profile_to_csv(profile: list[LayerSparsity]) -> str:
    lines = ["layer,nonzero,total,ratio"]
    for e in profile:
        lines.append(f"{e.layer},{e.nonzero},{e.total},{e.ratio:.6f}")
    return "\n".join(lines) + "\n"


def parse_profile_csv(text: str) -> list[LayerSparsity]:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "layer,nonzero,total,ratio":
        raise ValueError("profile CSV must start with 'layer,nonzero,total,ratio'")
    profile = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 4:
            raise ValueError(f"bad profile row: {ln!r}")
        entry = LayerSparsity(parts[0], int(parts[1]), int(parts[2]))
        stated = float(parts[3])
        if abs(stated - entry.ratio) > 1e-4:
            raise ValueError(
                f"{entry.layer}: stated ratio {stated} does not match "
                f"{entry.nonzero}/{entry.total}"
            )
        profile.append(entry)
    return profile


def write_profile(profile: list[LayerSparsity], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(profile_to_csv(profile))


def read_profile(path) -> list[LayerSparsity]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_profile_csv(fh.read())


@dataclass
class PruningPlan:
    """Per-layer effective out-channel targets plus optional kept sets."""

    spec_name: str
    originals: dict[str, int]
    targets: dict[str, int]
    keep: dict[str, tuple[int, ...]] = field(default_factory=dict)
    predicted_params: int = 0

    @property
    def is_identity(self) -> bool:
        return all(self.targets[k] == self.originals[k] for k in self.targets)


def nearest_pow2(raw: float) -> int:
    """Geometrically nearest power of two; exact midpoints round down."""
    if raw <= 0:
        return 1
    e = math.log2(raw)
    k = math.floor(e)
    if e - k > 0.5:
        k += 1
    return 2 ** max(k, 0)


def _one_step_below(channels: int) -> int:
    k = max(math.ceil(math.log2(channels)) - 1, 0)
    return 2 ** k


def _layer_index(spec: NetworkSpec) -> dict[str, tuple[BlockSpec, LayerSpec]]:
    index = {}
    for block in spec.blocks:
        for layer in block.layers:
            index[f"{block.name}.{layer.name}"] = (block, layer)
    return index


def _skip_groups(spec: NetworkSpec) -> list[set[str]]:
    """Channel-aligned layer groups: producer and skip source of each merge."""
    parent: dict[str, str] = {}

    def find(x):
        while parent.get(x, x) != x:
            parent[x] = parent.get(parent[x], parent[x])
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    for block in spec.blocks:
        for idx, layer in enumerate(block.layers):
            if layer.skip_from is not None:
                producer = f"{block.name}.{block.layers[idx - 1].name}"
                source = f"{block.name}.{layer.skip_from}"
                union(producer, source)
    groups: dict[str, set[str]] = {}
    for block in spec.blocks:
        for layer in block.layers:
            name = f"{block.name}.{layer.name}"
            groups.setdefault(find(name), set()).add(name)
    return [g for g in groups.values() if len(g) > 1]


def plan_channels(profile: list[LayerSparsity], spec: NetworkSpec) -> PruningPlan:
    """Turn a sparsity profile into power-of-two channel targets.

    Kept-channel sets are left unresolved; they need weights, which
    apply_plan reads from the model it prunes.
    """
    validate_spec(spec)
    if not profile:
        raise ValueError("empty sparsity profile")
    ratios: dict[str, float] = {}
    for entry in profile:
        if entry.layer in ratios:
            raise ValueError(f"duplicate profile entry for {entry.layer}")
        ratios[entry.layer] = entry.ratio

    originals: dict[str, int] = {}
    targets: dict[str, int] = {}
    prunable_names = set()
    for block in spec.blocks:
        prunable = [l for l in block.layers if l.prunable]
        boundary = {prunable[0].name, prunable[-1].name} if prunable else set()
        for layer in block.layers:
            name = f"{block.name}.{layer.name}"
            c_orig = effective_out(layer)
            originals[name] = c_orig
            if not layer.prunable:
                targets[name] = c_orig
                continue
            prunable_names.add(name)
            if name not in ratios:
                raise ValueError(f"profile is missing prunable layer {name}")
            target = max(nearest_pow2(ratios[name] * c_orig), MIN_CHANNELS)
            if layer.name in boundary:
                target = max(target, _one_step_below(c_orig))
            targets[name] = min(target, c_orig)

    unknown = set(ratios) - prunable_names
    if unknown:
        raise ValueError(
            f"profile names layers that are not prunable layers of "
            f"{spec.name!r}: {sorted(unknown)}"
        )

    for group in _skip_groups(spec):
        reconciled = max(targets[name] for name in group)
        for name in group:
            targets[name] = reconciled

    plan = PruningPlan(spec.name, originals, targets)
    plan.predicted_params = count_params(plan_to_spec(plan, spec))
    return plan


def plan_to_spec(plan: PruningPlan, spec: NetworkSpec, name: str | None = None) -> NetworkSpec:
    """Shrink the spec to the plan's widths, rechaining in-channels."""
    _check_plan_matches(plan, spec)
    new_blocks = []
    for block in spec.blocks:
        new_layers = []
        prev_eff = None
        for layer in block.layers:
            target = plan.targets[f"{block.name}.{layer.name}"]
            out = 4 * target if layer.kind == "upsample_conv" else target
            new_layers.append(
                LayerSpec(
                    name=layer.name,
                    kind=layer.kind,
                    in_channels=layer.in_channels if prev_eff is None else prev_eff,
                    out_channels=out,
                    kernel=layer.kernel,
                    skip_from=layer.skip_from,
                    prunable=layer.prunable,
                )
            )
            prev_eff = target
        new_blocks.append(BlockSpec(block.name, new_layers))
    new_spec = NetworkSpec(
        name=name if name is not None else f"{spec.name}_pruned",
        noise_map_input=spec.noise_map_input,
        blocks=new_blocks,
    )
    validate_spec(new_spec)
    return new_spec


def _check_plan_matches(plan: PruningPlan, spec: NetworkSpec) -> None:
    if plan.spec_name != spec.name:
        raise ValueError(
            f"plan was made for spec {plan.spec_name!r}, got {spec.name!r}"
        )
    names = set()
    for block in spec.blocks:
        for layer in block.layers:
            name = f"{block.name}.{layer.name}"
            names.add(name)
            if name not in plan.targets:
                raise ValueError(f"plan has no target for layer {name}")
            c_orig = effective_out(layer)
            if plan.originals.get(name) != c_orig:
                raise ValueError(
                    f"{name}: plan records {plan.originals.get(name)} original "
                    f"channels but the spec has {c_orig}"
                )
            if not 0 < plan.targets[name] <= c_orig:
                raise ValueError(
                    f"{name}: target {plan.targets[name]} outside (0, {c_orig}]"
                )
    extra = set(plan.targets) - names
    if extra:
        raise ValueError(f"plan targets unknown layers: {sorted(extra)}")


def _filter_importance(layer: LayerSpec, w: np.ndarray) -> np.ndarray:
    """Per-effective-channel L1 norm of the layer's filters."""
    a = np.abs(w.astype(np.float64))
    if layer.kind == "upsample_conv":
        c_eff = layer.out_channels // 4
        return a.reshape(c_eff, 4, *w.shape[1:]).sum(axis=(1, 2, 3, 4))
    return a.sum(axis=(1, 2, 3))


def resolve_keep_sets(model: Model, plan: PruningPlan) -> PruningPlan:
    """Choose kept channels by filter L1 norm, largest first, ties by index.

    Skip-aligned groups score channels by the sum of member importances so
    every member keeps the same set.  Already-present keep sets are
    validated and preserved.
    """
    spec = model.spec
    _check_plan_matches(plan, spec)
    index = _layer_index(spec)
    grouped: dict[str, tuple[str, ...]] = {}
    for group in _skip_groups(spec):
        members = tuple(sorted(group))
        for name in group:
            grouped[name] = members

    keep = dict(plan.keep)
    for name, (block, layer) in index.items():
        target = plan.targets[name]
        c_orig = effective_out(layer)
        if name in keep:
            ks = tuple(keep[name])
            if len(ks) != target or len(set(ks)) != len(ks):
                raise ValueError(f"{name}: keep set size does not match target {target}")
            if list(ks) != sorted(ks) or ks[0] < 0 or ks[-1] >= c_orig:
                raise ValueError(f"{name}: keep set must be sorted indices in [0, {c_orig})")
            continue
        if target == c_orig:
            keep[name] = tuple(range(c_orig))
            continue
        members = grouped.get(name, (name,))
        importance = np.zeros(c_orig, dtype=np.float64)
        for member in members:
            mlayer = index[member][1]
            mw = model.weights[f"{member}.weight"].data
            importance += _filter_importance(mlayer, mw)
        order = np.argsort(-importance, kind="stable")
        chosen = tuple(sorted(int(i) for i in order[:target]))
        for member in members:
            keep.setdefault(member, chosen)

    out = PruningPlan(
        plan.spec_name, dict(plan.originals), dict(plan.targets),
        keep, plan.predicted_params,
    )
    return out


def apply_plan(model: Model, plan: PruningPlan) -> Model:
    """Slice the model down to the plan's widths.

    Kept output channels are the plan's keep sets (resolved by L1 norm when
    absent); each consumer's input channels are sliced to its producer's
    kept set.  The result is validated against the pruned spec and must hit
    the plan's predicted parameter count.
    """
    plan = resolve_keep_sets(model, plan)
    spec = model.spec
    new_spec = plan_to_spec(plan, spec)
    new_weights: dict[str, Tensor] = {}
    for block in spec.blocks:
        prev_keep: np.ndarray | None = None
        prev_name: str | None = None
        for layer in block.layers:
            name = f"{block.name}.{layer.name}"
            w = model.weights[f"{name}.weight"].data
            b = model.weights[f"{name}.bias"].data
            ks = np.asarray(plan.keep[name], dtype=np.intp)
            if layer.kind == "upsample_conv":
                rows = (4 * ks[:, None] + np.arange(4)[None, :]).reshape(-1)
            else:
                rows = ks
            if layer.skip_from is not None:
                skip_keep = plan.keep[f"{block.name}.{layer.skip_from}"]
                if tuple(skip_keep) != tuple(plan.keep[prev_name]):
                    raise ValueError(
                        f"{name}: skip source and producer keep different channels"
                    )
            w_new = w[rows]
            if prev_keep is not None:
                w_new = w_new[:, prev_keep]
            new_weights[f"{name}.weight"] = Tensor(
                np.ascontiguousarray(w_new), requires_grad=True
            )
            new_weights[f"{name}.bias"] = Tensor(b[rows].copy(), requires_grad=True)
            prev_keep = ks
            prev_name = name
    pruned = Model(new_spec, new_weights)
    actual = count_params(new_spec)
    if plan.predicted_params and actual != plan.predicted_params:
        raise ValueError(
            f"pruned model has {actual} parameters, plan predicted "
            f"{plan.predicted_params}"
        )
    return pruned


def plan_to_text(plan: PruningPlan) -> str:
    lines = [
        "plan_version 1",
        f"spec {plan.spec_name}",
        f"predicted_params {plan.predicted_params}",
    ]
    for name in plan.targets:
        lines.append(
            f"layer {name} original {plan.originals[name]} target {plan.targets[name]}"
        )
        if name in plan.keep:
            idx = " ".join(str(i) for i in plan.keep[name])
            lines.append(f"keep {name} {idx}")
    return "\n".join(lines) + "\n"


def parse_plan_text(text: str) -> PruningPlan:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].split() != ["plan_version", "1"]:
        raise ValueError("plan file must start with 'plan_version 1'")
    spec_name = None
    predicted = 0
    originals: dict[str, int] = {}
    targets: dict[str, int] = {}
    keep: dict[str, tuple[int, ...]] = {}
    for ln in lines[1:]:
        tok = ln.split()
        if tok[0] == "spec" and len(tok) == 2:
            spec_name = tok[1]
        elif tok[0] == "predicted_params" and len(tok) == 2:
            predicted = int(tok[1])
        elif tok[0] == "layer" and len(tok) == 6 and tok[2] == "original" and tok[4] == "target":
            originals[tok[1]] = int(tok[3])
            targets[tok[1]] = int(tok[5])
        elif tok[0] == "keep" and len(tok) >= 2:
            keep[tok[1]] = tuple(int(i) for i in tok[2:])
        else:
            raise ValueError(f"bad plan line: {ln!r}")
    if spec_name is None or not targets:
        raise ValueError("plan file is missing the spec name or layer targets")
    return PruningPlan(spec_name, originals, targets, keep, predicted)


def write_plan(plan: PruningPlan, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(plan_to_text(plan))


def read_plan(path) -> PruningPlan:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_plan_text(fh.read())
