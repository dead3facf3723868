"""Command-line entry point.

    manifold-twosample run CONFIG [--out DIR] [--seed U64] [--trials N] [--threads N]
    manifold-twosample power-curve CONFIG ...
    manifold-twosample calibrate CONFIG ...
    manifold-twosample ot-selftest [--trials N] [--seed U64]

The output directory defaults to ``$MANIFOLD_TWOSAMPLE_OUT`` or ``./results``.
Exit status: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError
from .harness import estimate_risks, load_config, power_curve, write_csv, write_json
from .seeding import derive_seed, make_rng
from .transport import WeightedPointCloud, assignment_oracle, wasserstein1

OUT_ENV = "MANIFOLD_TWOSAMPLE_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manifold-twosample", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "estimate rejection rates for every scenario"),
        ("power-curve", "rejection rate over each scenario's n_grid"),
        ("calibrate", "rejection rates with q replaced by p (type-I calibration)"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config")
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=_u64, default=None)
        p.add_argument("--trials", type=_positive, default=None)
        p.add_argument("--threads", type=_positive, default=1)
    st = sub.add_parser("ot-selftest", help="check wasserstein1 against the assignment oracle")
    st.add_argument("--trials", type=_positive, default=200)
    st.add_argument("--seed", type=_u64, default=0)
    return parser


def ot_selftest(trials: int, seed: int, out=None) -> int:
    out = out or sys.stdout
    worst = 0.0
    failures = 0
    for t in range(trials):
        rng = make_rng(derive_seed(seed, t))
        n = int(rng.integers(1, 8))
        d = int(rng.integers(1, 4))
        X, Y = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        got = wasserstein1(WeightedPointCloud.uniform(X), WeightedPointCloud.uniform(Y), method="flow")[0]
        want = assignment_oracle(X, Y)
        gap = abs(got - want)
        worst = max(worst, gap)
        failures += gap > 1e-9
    print(f"ot-selftest: {trials} instances, {failures} mismatches, max gap {worst:.3g}", file=out)
    return EXIT_OK if failures == 0 else EXIT_RUNTIME


def run_config(path, overrides=None, command: str = "run", out_dir=None, threads: int = 1) -> int:
    """Execute every scenario in ``path`` and write CSV and JSON artifacts."""
    try:
        scenarios = load_config(path, overrides)
        if command == "calibrate":
            scenarios = [(s.as_null(), g) for s, g in scenarios]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(out_dir or os.environ.get(OUT_ENV) or "results")
    try:
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for scenario, grid in scenarios:
            t0 = time.perf_counter()
            if command == "power-curve":
                curve = power_curve(scenario, grid or [scenario.n], threads)
                rows.extend((replace(scenario, n=n), est) for n, est in curve)
            else:
                est = estimate_risks(scenario, threads)
                curve = [(scenario.n, est)]
                rows.append((scenario, est))
            write_json(out / f"{scenario.name}.json", scenario, curve)
            print(f"{scenario.name}: done in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
        name = {"run": "results.csv", "power-curve": "power_curve.csv", "calibrate": "calibration.csv"}[command]
        write_csv(out / name, rows)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - mapped to the documented exit status
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "ot-selftest":
        return ot_selftest(args.trials, args.seed)
    overrides = {"seed": args.seed, "trials": args.trials}
    return run_config(args.config, overrides, args.command, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
