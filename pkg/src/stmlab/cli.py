"""Command-line surface.

Commands: describe, build, erf, invariance, selftest. Exit codes: 0 on
success, 1 when a check or verification fails, 2 for usage/config errors.
Heavy imports happen after argument parsing so --threads can pin BLAS
pools before numpy starts them.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stmlab",
        description="Spatial token mixer workbench: budgets, receptive fields, invariance.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model_args(p, with_seed=True):
        p.add_argument("--config", help="model config file (see README for the schema)")
        p.add_argument("--preset", help="stock config, e.g. halo-micro (see describe --all)")
        p.add_argument("--variant", default="A", choices=list("ABCDE"),
                       help="architecture variant (default A)")
        p.add_argument("--halo-variant", default="standard",
                       choices=["standard", "switch", "onepixel", "shiftedquery"],
                       help="halo ablation variant (presets only)")
        if with_seed:
            p.add_argument("--seed", type=int, default=42, help="weight seed (default 42)")
            p.add_argument("--checkpoint", help="load weights from an STMW file instead")
        p.add_argument("--threads", type=int, help="cap BLAS thread pools")

    d = sub.add_parser("describe", help="parameter/MAC budgets and shape trace")
    add_model_args(d, with_seed=False)
    d.add_argument("--all", action="store_true", help="tabulate all 20 presets")
    d.add_argument("--out", help="write CSV here")

    b = sub.add_parser("build", help="build a model and write an STMW checkpoint")
    add_model_args(b)
    b.add_argument("--out", required=True, help="checkpoint output path")

    e = sub.add_parser("erf", help="effective-receptive-field maps and ERF@50")
    add_model_args(e)
    e.add_argument("--images", help="directory of PGM/PPM/STMF probe images")
    e.add_argument("--noise", action="store_true", help="use seeded noise probes")
    e.add_argument("--stages", default="2,3", help="comma list of stages (default 2,3)")
    e.add_argument("--out", default="erf", help="output prefix (default 'erf')")
    e.add_argument("--log-scale", action="store_true",
                   help="log-scale the PGM maps for display")

    i = sub.add_parser("invariance", help="prediction-consistency sweeps")
    add_model_args(i)
    i.add_argument("--transform", required=True, choices=["translate", "rotate", "scale"])
    i.add_argument("--images", help="directory of probe images (labels.csv optional)")
    i.add_argument("--noise", action="store_true", help="use seeded noise probes")
    i.add_argument("--out", help="write CSV here")

    s = sub.add_parser("selftest", help="run the oracle battery")
    s.add_argument("--threads", type=int, help="cap BLAS thread pools")
    return parser


def _pin_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        raise SystemExit(2)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _write_bytes_atomic(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _write_text_atomic(path: str, text: str) -> None:
    _write_bytes_atomic(path, text.encode("utf-8"))


def _resolve_config(args):
    from stmlab.configfile import parse_config
    from stmlab.mixers import HaloVariant
    from stmlab.presets import get_preset

    if bool(args.config) == bool(args.preset):
        raise UsageError("exactly one of --config or --preset is required")
    if args.config:
        return parse_config(args.config)
    return get_preset(
        args.preset,
        variant=args.variant,
        halo_variant=HaloVariant(args.halo_variant),
    )


class UsageError(Exception):
    pass


def _resolve_model(args):
    from stmlab.checkpoint import load
    from stmlab.model import build_model

    cfg = _resolve_config(args)
    if getattr(args, "checkpoint", None):
        return cfg, load(cfg, args.checkpoint)
    return cfg, build_model(cfg, args.seed)


def _shape_trace(cfg) -> str:
    return "->".join(str(r) for r in cfg.stage_resolutions())


def cmd_describe(args) -> int:
    from stmlab.accounting import cost_report
    from stmlab.presets import get_preset, preset_names

    if args.all:
        lines = ["preset,params,macs"]
        print(f"{'preset':16s} {'params':>12s} {'macs@224':>12s} {'trace'}")
        for name in preset_names():
            cfg = get_preset(name, variant=args.variant)
            rep = cost_report(cfg, 224)
            print(
                f"{name:16s} {rep.total_params:12d} {rep.total_macs:12d} "
                f"{_shape_trace(cfg)}"
            )
            lines.append(f"{name},{rep.total_params},{rep.total_macs}")
        if args.out:
            _write_text_atomic(args.out, "\n".join(lines) + "\n")
        return 0

    cfg = _resolve_config(args)
    rep = cost_report(cfg, cfg.input_size)
    print(f"stm: {cfg.stm.value}")
    print(f"variant: {cfg.variant}")
    if cfg.stm.value == "halo":
        print(f"halo-variant: {cfg.halo_variant.value}")
    print(f"input: {cfg.input_size}  stage trace: {_shape_trace(cfg)}")
    print(f"depths: {cfg.depths}  widths: {cfg.widths}  heads: {cfg.heads}")
    print(f"params: {rep.total_params} ({rep.total_params / 1e6:.2f}M)")
    print(f"macs@{rep.input_size}: {rep.total_macs} ({rep.total_macs / 1e9:.3f}G FLOPs-style)")
    if args.out:
        _write_text_atomic(args.out, "\n".join(rep.csv_lines()) + "\n")
    return 0


def cmd_build(args) -> int:
    import numpy as np

    from stmlab.checkpoint import load, save
    from stmlab.model import named_parameters

    cfg, model = _resolve_model(args)
    save(model, args.out)
    reloaded = load(cfg, args.out)
    for (name, a), (_, b) in zip(named_parameters(model), named_parameters(reloaded)):
        if not np.array_equal(a, b):
            print(f"verification failed: tensor {name!r} differs after round trip",
                  file=sys.stderr)
            return 1
    n_params = sum(a.size for _, a in named_parameters(model))
    print(f"wrote {args.out}: {n_params} parameters, round trip verified")
    return 0


def _probe_images(args, cfg):
    from stmlab.erf import noise_images
    from stmlab.imageio import load_image_dir, normalize

    if bool(args.images) == bool(args.noise):
        raise UsageError("exactly one of --images or --noise is required")
    if args.noise:
        probes = noise_images(2, cfg.input_size, seed=args.seed)
        labels = None
    else:
        raw, labels, _ = load_image_dir(args.images)
        probes = raw
    probes = [normalize(p, cfg.norm_mean, cfg.norm_std) for p in probes]
    return probes, labels


def cmd_erf(args) -> int:
    from stmlab.erf import csv_lines, erf_suite, map_to_pgm_bytes

    cfg, model = _resolve_model(args)
    try:
        stages = sorted({int(s) for s in args.stages.split(",")})
    except ValueError:
        raise UsageError(f"--stages: cannot parse {args.stages!r}")
    if any(s < 0 or s > 3 for s in stages):
        raise UsageError("--stages entries must be in 0..3")
    probes, _ = _probe_images(args, cfg)
    reports = erf_suite(model, probes, stages)
    _write_text_atomic(args.out + ".csv", "\n".join(csv_lines(reports)) + "\n")
    for rep in reports:
        _write_bytes_atomic(
            f"{args.out}_stage{rep.stage}.pgm",
            map_to_pgm_bytes(rep.map, log_scale=args.log_scale),
        )
        print(f"stage {rep.stage}: erf50 {rep.erf50:.6f} over {rep.n_images} image(s)")
    print(f"wrote {args.out}.csv and {len(reports)} PGM map(s)")
    return 0


def cmd_invariance(args) -> int:
    from stmlab.invariance import consistency_sweep, default_spec

    cfg, model = _resolve_model(args)
    probes, labels = _probe_images(args, cfg)
    spec = default_spec(args.transform)
    report = consistency_sweep(model, probes, labels, spec)
    text = "\n".join(report.csv_lines())
    print(text)
    if args.out:
        _write_text_atomic(args.out, text + "\n")
    return 0


def cmd_selftest(args) -> int:
    from stmlab.selftest import run_selftest

    perturb = os.environ.get("STMLAB_SELFTEST_PERTURB") or None
    results = run_selftest(perturb)
    for res in results:
        print(res.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


_HANDLERS = {
    "describe": cmd_describe,
    "build": cmd_build,
    "erf": cmd_erf,
    "invariance": cmd_invariance,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    _pin_threads(getattr(args, "threads", None))
    try:
        return _HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # config/shape/checkpoint errors carry their own text
        from stmlab.checkpoint import CheckpointError
        from stmlab.imageio import ImageFormatError
        from stmlab.model import ConfigError
        from stmlab.tensor import ShapeError

        if isinstance(exc, CheckpointError):
            print(f"error: {exc}", file=sys.stderr)
            return 1
        if isinstance(exc, (ConfigError, ShapeError, ImageFormatError, ValueError)):
            print(f"error: {exc}", file=sys.stderr)
            return 2
        raise


if __name__ == "__main__":
    sys.exit(main())
