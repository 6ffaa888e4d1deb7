"""Command-line surface: noise, training, compression, evaluation, bench.

Every command that draws randomness takes --seed and is byte-reproducible
for a fixed seed; bench is the one exception, since wall-clock timings are
inherently machine-dependent.  No command mutates its input files.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from . import clipio, distill, metrics, noise, pruning, sparsity
from . import network as net


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_noise(args) -> int:
    clip = clipio.read_clip(args.input)
    if args.awgn is not None:
        noisy = noise.corrupt_clip_awgn(clip, args.awgn, seed=args.seed)
    else:
        ranges = (
            noise.load_param_ranges(args.ranges)
            if args.ranges else noise.ParamRanges()
        )
        params = noise.sample_params(ranges, noise.derive_seed(args.seed, 0))
        noisy = noise.corrupt_clip(clip, params, noise.derive_seed(args.seed, 1))
    clipio.write_clip(noisy, args.output)
    print(f"wrote {args.output}")
    return 0


def _load_patches(args):
    return clipio.load_dataset(
        args.data, patch_size=args.patch_size, stride=args.stride, seed=args.seed
    )


def _ranges(args) -> noise.ParamRanges:
    if getattr(args, "ranges", None):
        return noise.load_param_ranges(args.ranges)
    return noise.ParamRanges()


def cmd_train_sparse(args) -> int:
    spec = net.resolve_spec(args.spec)
    cfg = (
        sparsity.load_sparsity_config(args.config)
        if args.config else sparsity.SparsityConfig()
    )
    patches = _load_patches(args)
    model = net.build(spec, seed=args.seed)
    raw_fn = distill.corrupting_batch_fn(patches, cfg.batch_size, _ranges(args), args.seed)

    def batch_fn(step):
        noisy, clean, _ = raw_fn(step)
        return noisy, clean

    noise_map_fn = None
    if spec.noise_map_input:
        if args.noise_level is None:
            raise ValueError("spec takes a noise map: pass --noise-level")
        level = args.noise_level
        h = w = args.patch_size

        def noise_map_fn(step):
            return net.constant_noise_map(cfg.batch_size, h, w, level)

    history = sparsity.train_sparse(model, batch_fn, cfg, noise_map_fn=noise_map_fn)
    clipio.write_model(model, args.output)
    history_path = args.history or f"{args.output}.history.csv"
    _write_text(history_path, sparsity.history_to_csv(history))
    last = history[-1]
    print(
        f"wrote {args.output} ({len(history)} steps, final charbonnier "
        f"{last.loss_charbonnier:.6g}, zero fraction {last.zero_fraction:.4f})"
    )
    return 0


def cmd_analyze(args) -> int:
    spec = net.resolve_spec(args.spec)
    model = clipio.read_model(spec, args.model)
    profile = pruning.analyze_sparsity(model, zero_tol=args.zero_tol)
    pruning.write_profile(profile, args.output)
    print(f"wrote {args.output} ({len(profile)} prunable layers)")
    return 0


def cmd_plan(args) -> int:
    spec = net.resolve_spec(args.spec)
    profile = pruning.read_profile(args.profile)
    plan = pruning.plan_channels(profile, spec)
    pruning.write_plan(plan, args.output)
    print(f"wrote {args.output} (predicted {plan.predicted_params} parameters)")
    return 0


def cmd_prune(args) -> int:
    spec = net.resolve_spec(args.spec)
    model = clipio.read_model(spec, args.model)
    plan = pruning.read_plan(args.plan)
    pruned = pruning.apply_plan(model, plan)
    clipio.write_model(pruned, args.output_model)
    net.save_network_spec(pruned.spec, args.output_spec)
    before = net.count_params(spec)
    after = net.count_params(pruned.spec)
    print(
        f"wrote {args.output_model} and {args.output_spec} "
        f"({before} -> {after} parameters)"
    )
    return 0


def _make_teacher(descriptor: str) -> distill.Teacher:
    if descriptor == "oracle":
        return distill.OracleTeacher()
    if descriptor.startswith("dir:"):
        return distill.FileTeacher(descriptor[4:])
    if descriptor.startswith("net:"):
        parts = descriptor[4:].split(":")
        if len(parts) not in (2, 3):
            raise ValueError(
                "network teacher descriptor is net:<spec>:<weights>[:<noise level>]"
            )
        tspec = net.resolve_spec(parts[0])
        tmodel = clipio.read_model(tspec, parts[1])
        level = float(parts[2]) if len(parts) == 3 else None
        if tspec.noise_map_input and level is None:
            raise ValueError("teacher spec takes a noise map: append :<noise level>")
        return distill.NetworkTeacher(tmodel, noise_level=level)
    raise ValueError(
        f"unknown teacher descriptor {descriptor!r} "
        "(expected oracle, dir:<path>, or net:<spec>:<weights>[:<level>])"
    )


def cmd_distill(args) -> int:
    spec = net.resolve_spec(args.spec)
    cfg = (
        distill.load_distill_config(args.config)
        if args.config else distill.DistillConfig()
    )
    descriptor = args.teacher or cfg.teacher
    if not descriptor:
        raise ValueError("no teacher: pass --teacher or set it in the config file")
    teacher = _make_teacher(descriptor)
    patches = _load_patches(args)
    student = (
        clipio.read_model(spec, args.init)
        if args.init else net.build(spec, seed=args.seed)
    )
    batch_fn = distill.corrupting_batch_fn(patches, cfg.batch_size, _ranges(args), args.seed)
    history = distill.train_distill(student, teacher, batch_fn, cfg)
    clipio.write_model(student, args.output)
    history_path = args.history or f"{args.output}.history.csv"
    _write_text(history_path, distill.history_to_csv(history))
    print(
        f"wrote {args.output} ({len(history)} steps, final loss "
        f"{history[-1].loss_total:.6g})"
    )
    return 0


def _center_frame(clip: np.ndarray, what: str) -> np.ndarray:
    if clip.shape[0] == 1:
        return clip[0]
    if clip.shape[0] == 5:
        return clip[2]
    raise ValueError(f"{what}: expected 1 or 5 frames, got {clip.shape[0]}")


def cmd_eval(args) -> int:
    direct = args.a is not None or args.b is not None
    model_mode = args.model is not None or args.noisy is not None
    if direct and model_mode:
        raise ValueError("pass either --a/--b or --spec/--model/--noisy/--gt")
    if direct:
        if args.a is None or args.b is None:
            raise ValueError("--a and --b go together")
        a = clipio.read_clip(args.a)
        b = clipio.read_clip(args.b)
        report = metrics.evaluate(a, b)
    else:
        for name in ("spec", "model", "noisy", "gt"):
            if getattr(args, name) is None:
                raise ValueError(f"model evaluation needs --{name}")
        spec = net.resolve_spec(args.spec)
        model = clipio.read_model(spec, args.model)
        noisy = clipio.read_clip(args.noisy)
        if noisy.shape[0] != 5:
            raise ValueError(f"--noisy must hold a 5-frame clip, got {noisy.shape[0]}")
        gt = _center_frame(clipio.read_clip(args.gt), args.gt)
        denoised = net.denoise_clip(model, noisy, noise_level=args.noise_level)
        report = metrics.evaluate(denoised, gt)
    text = report.to_text()
    if args.output:
        _write_text(args.output, text)
        print(f"wrote {args.output}")
    else:
        print(text, end="")
    return 0


def cmd_bench(args) -> int:
    spec = net.resolve_spec(args.spec)
    model = net.build(spec, seed=args.seed)
    rng = np.random.Generator(np.random.Philox(key=args.seed))
    clip = rng.uniform(0, 1, size=(args.batch, 5, args.height, args.width, 3))
    frames = net.clip_to_frames(clip.astype(np.float32))
    nmap = (
        net.constant_noise_map(args.batch, args.height, args.width, 0.02)
        if spec.noise_map_input else None
    )
    for _ in range(5):
        net.forward_cascade(model, frames, noise_map=nmap)
    t0 = time.perf_counter()
    for _ in range(args.iters):
        net.forward_cascade(model, frames, noise_map=nmap)
    elapsed = time.perf_counter() - t0
    print(f"spec = {spec.name}")
    print(f"resolution = {args.height}x{args.width}")
    print(f"batch = {args.batch}")
    print(f"iters = {args.iters}")
    print(f"mean_forward_s = {elapsed / args.iters:.6f}")
    return 0


def cmd_count_params(args) -> int:
    spec = net.resolve_spec(args.spec)
    print(net.count_params(spec))
    return 0


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset directory of clip folders")
    p.add_argument("--patch-size", type=int, default=32)
    p.add_argument("--stride", type=int, default=32)
    p.add_argument("--ranges", help="noise parameter ranges file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vdslim",
        description="Compress-and-recover toolkit for temporal video denoisers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("noise", help="corrupt a clip with the sensor noise model")
    p.add_argument("--input", required=True, help="clean PDVD clip")
    p.add_argument("--output", required=True, help="noisy PDVD clip to write")
    p.add_argument("--ranges", help="noise parameter ranges file")
    p.add_argument("--awgn", type=float, help="plain Gaussian sigma (0-255 scale) instead")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("train-sparse", help="sparsity-inducing training")
    p.add_argument("--spec", required=True, help="network spec path or bundled name")
    _add_dataset_flags(p)
    p.add_argument("--config", help="sparsity config file")
    p.add_argument("--noise-level", type=float, help="constant map level for map specs")
    p.add_argument("--output", required=True, help="model checkpoint to write")
    p.add_argument("--history", help="loss/sparsity CSV path")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_sparse)

    p = sub.add_parser("analyze", help="measure per-layer weight sparsity")
    p.add_argument("--spec", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--zero-tol", type=float, default=0.0)
    p.add_argument("--output", required=True, help="profile CSV to write")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plan", help="turn a sparsity profile into channel targets")
    p.add_argument("--profile", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--output", required=True, help="plan file to write")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("prune", help="apply a pruning plan to a model")
    p.add_argument("--spec", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--output-model", required=True)
    p.add_argument("--output-spec", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("distill", help="train a student against a teacher")
    p.add_argument("--spec", required=True, help="student spec path or bundled name")
    p.add_argument("--init", help="student checkpoint to start from")
    p.add_argument(
        "--teacher",
        help="oracle, dir:<outputs dir>, or net:<spec>:<weights>[:<noise level>]",
    )
    _add_dataset_flags(p)
    p.add_argument("--config", help="distillation config file")
    p.add_argument("--output", required=True)
    p.add_argument("--history", help="loss CSV path")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="PSNR/SSIM between clips or for a model")
    p.add_argument("--a", help="first clip (direct comparison)")
    p.add_argument("--b", help="second clip (direct comparison)")
    p.add_argument("--spec", help="model spec (model evaluation)")
    p.add_argument("--model", help="model weights (model evaluation)")
    p.add_argument("--noisy", help="noisy 5-frame clip (model evaluation)")
    p.add_argument("--gt", help="ground-truth clip or frame (model evaluation)")
    p.add_argument("--noise-level", type=float, help="constant map level for map specs")
    p.add_argument("--output", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="mean wall-clock per 5-frame forward pass")
    p.add_argument("--spec", required=True)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--iters", type=int, default=50, help="warm iterations (>= 50)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("count-params", help="print a spec's parameter count")
    p.add_argument("--spec", required=True)
    p.set_defaults(func=cmd_count_params)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "bench" and args.iters < 50:
        parser.error("bench needs --iters >= 50")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
