"""Command-line entry point.

Exit codes: 0 success, 1 invariant/check failure, 2 usage or config error.
Config precedence: command-line flag > ``VLMAMBA_SEED`` (seed only) >
config file > built-in default.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from . import bench, checks, gradcheck
from .pipeline import (ConfigError, ModelConfig, build_model, demo_image, env_seed,
                       generate_greedy, load_config, save_trace)
from .tensor_core import TensorError, VlmfError, load_vlmf
from .vision import load_features

GRADCHECK_THRESHOLD = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _lengths(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad length list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vlmamba", description="Selective-scan vision-language toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="greedy response for an image and a query")
    g.add_argument("--config", help="JSON ModelConfig")
    g.add_argument("--features", help="VLMF patch features (skips the toy encoder)")
    g.add_argument("--image-seed", type=int, default=0,
                   help="seed of the synthetic image used when --features is absent")
    g.add_argument("--query", required=True)
    g.add_argument("--max-new", type=int, default=32)
    g.add_argument("--seed", type=int, help="override the config seed")
    g.add_argument("--variant", choices=["MLP", "VSS_MLP", "VSS_L2"], help="override mmc.variant")
    g.add_argument("--mechanism", choices=["BSM", "CSM"], help="override mmc.mechanism")
    g.add_argument("--trace", metavar="DIR", help="dump intermediate tensors as VLMF")

    b = sub.add_parser("bench", help="sequence-length scaling benchmark")
    b.add_argument("--lengths", type=_lengths, default=[256, 512, 1024, 2048, 4096, 8192])
    b.add_argument("--repeats", type=int, default=7)
    b.add_argument("--kernels", default="selective_scan,attention")
    b.add_argument("--out", help="CSV report path")

    c = sub.add_parser("check", help="run invariant suites")
    c.add_argument("--suite", default="all", choices=["all", *checks.SUITES])

    gc = sub.add_parser("gradcheck", help="selective-scan backward vs finite differences")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--instances", type=int, default=20)

    i = sub.add_parser("inspect", help="print VLMF metadata and statistics")
    i.add_argument("file")
    return p


def _resolve_config(args) -> ModelConfig:
    cfg = load_config(args.config) if args.config else ModelConfig()
    changes = {"seed": env_seed(cfg.seed)}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.variant:
        changes["mmc_variant"] = args.variant
    if args.mechanism:
        changes["mmc_mechanism"] = args.mechanism
    return cfg.replace(**changes)


def _cmd_generate(args) -> int:
    cfg = _resolve_config(args)
    model = build_model(cfg)
    if args.features:
        src = load_features(args.features)
        src = src.with_features(src.features.astype(cfg.np_dtype))
    else:
        src = demo_image(cfg, args.image_seed)
    trace = {} if args.trace else None
    text = generate_greedy(model, src, args.query, args.max_new, trace)
    if trace is not None:
        save_trace(trace, args.trace)
    sys.stdout.buffer.write(text.encode("utf-8", "surrogateescape") + b"\n")
    sys.stdout.flush()
    return 0


def _cmd_bench(args) -> int:
    kernels = [k for k in args.kernels.split(",") if k]
    report = bench.run_scaling(args.lengths, args.repeats, kernels)
    print("kernel,L,median_ns,flops")
    for r in report.rows:
        print(f"{r.kernel},{r.L},{r.median_ns:.0f},{r.flops}")
    for k, (slope, r2) in report.fits.items():
        print(f"# {k}: log-log slope {slope:.3f} (R^2 {r2:.4f})")
    if args.out:
        report.write_csv(args.out)
    return 0


def _cmd_check(args) -> int:
    names = list(checks.SUITES) if args.suite == "all" else [args.suite]
    failed = 0
    for suite, name, ok, detail in checks.run_suites(names):
        line = f"{'PASS' if ok else 'FAIL'} [{suite}] {name}: {detail}"
        print(line)
        if not ok:
            failed += 1
            print(line, file=sys.stderr)
    print(f"{failed} failed" if failed else "all checks passed")
    return 1 if failed else 0


def _cmd_gradcheck(args) -> int:
    errs = gradcheck.run_gradcheck(args.seed, args.instances)
    for group, err in errs.items():
        print(f"{group:>10s}  {err:.3e}")
    worst = max(errs.values())
    print(f"max relative error {worst:.3e} (threshold {GRADCHECK_THRESHOLD:.0e})")
    return 0 if worst < GRADCHECK_THRESHOLD else 1


def _cmd_inspect(args) -> int:
    arr = load_vlmf(args.file)
    print(f"dtype {arr.dtype}")
    print(f"dims {list(arr.shape)}")
    print(f"min {np.min(arr):.6g} max {np.max(arr):.6g} mean {np.mean(arr):.6g}")
    return 0


COMMANDS = {"generate": _cmd_generate, "bench": _cmd_bench, "check": _cmd_check,
            "gradcheck": _cmd_gradcheck, "inspect": _cmd_inspect}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, VlmfError, TensorError, OSError) as e:
        print(f"vlmamba {args.command}: error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
