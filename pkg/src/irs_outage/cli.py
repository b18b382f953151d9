"""Command-line entry point: ``irs-outage run | figure | verify``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiments as ex


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="irs-outage", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment described by a JSON spec")
    run.add_argument("--spec", required=True, type=Path)
    run.add_argument("--out", required=True, type=Path)
    run.add_argument("--scale", choices=("desk", "full"), default="desk")
    run.add_argument("--seed", type=int, default=None, help="master seed (overrides the spec)")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--timing", action="store_true", help="record wall times (breaks byte-identity)")
    run.add_argument("--bundles", action="store_true", help="save solution bundles for verify")

    fig = sub.add_parser("figure", help="emit the data series of a figure")
    fig.add_argument("--name", required=True)
    fig.add_argument("--out", type=Path, default=None, help="defaults to ./figures/<name>")
    fig.add_argument("--scale", choices=("desk", "full"), default="desk")
    fig.add_argument("--seed", type=int, default=0)
    fig.add_argument("--threads", type=int, default=1)
    fig.add_argument("--timing", action="store_true")

    ver = sub.add_parser("verify", help="Monte-Carlo check of a saved solution bundle")
    ver.add_argument("--bundle", required=True, type=Path)
    ver.add_argument("--seed", type=int, default=None, help="fresh seed (default: the bundle's)")
    ver.add_argument("--n-samples", type=int, default=100_000)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "run":
        spec = ex.ExperimentSpec.from_json(args.spec)
        if args.seed is not None:
            spec = spec.with_seed(args.seed)
        if args.bundles:
            spec = ex.ExperimentSpec(ex._merge(spec.data, {"save_bundles": True}))
        spec = spec.at_scale(args.scale)
        if args.scale == "full":
            print("warning: full scale mirrors the published parameters and can take hours",
                  file=sys.stderr)
        res = ex.run_experiment(spec, args.out, threads=args.threads, timing=args.timing)
        print(f"wrote {len(res.rows)} rows to {res.csv_path}")
        return 0
    if args.command == "figure":
        if args.name not in ex.FIGURES:
            print(f"error: unknown figure {args.name!r}; supported: {', '.join(ex.FIGURES)}",
                  file=sys.stderr)
            return 2
        if args.scale == "full":
            print("warning: full scale mirrors the published parameters and can take hours",
                  file=sys.stderr)
        out = args.out or Path("figures") / args.name
        res = ex.reproduce_figure(args.name, out, scale=args.scale, seed=args.seed,
                                  threads=args.threads, timing=args.timing)
        for path in res["paths"]:
            print(f"wrote {path}")
        return 0
    verdict = ex.verify_solution(args.bundle, seed=args.seed, n_samples=args.n_samples)
    for k, (o, s, t) in enumerate(zip(verdict.outage, verdict.stderr, verdict.threshold)):
        print(f"user {k}: outage {o:.4f} +- {s:.4f} (threshold {t:.4f})")
    print("PASS" if verdict.passed else "FAIL")
    return 0 if verdict.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
