#!/usr/bin/env python3
"""Run the entropy-vs-random strategy benchmark and print a summary table.

Repeats the full simulation loop over many seeds (each with a freshly drawn
synthetic pool), compares median macro-F1 per matched label budget, and
reports whether entropy dominates random sampling and how many labels each
arm needs to reach the target macro-F1.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from camloop.benchmark import BenchmarkConfig, result_to_json, run_benchmark, summarize


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--seeds", type=int, default=21, help="number of repetitions")
    parser.add_argument("--budget", type=int, default=400, help="label budget per run")
    parser.add_argument("--batch-size", type=int, default=25, help="query batch size")
    parser.add_argument("--epochs", type=int, default=100, help="training epochs per retrain")
    parser.add_argument("--dim", type=int, default=32, help="embedding dimension")
    parser.add_argument("--separation", type=float, default=4.0, help="cluster separation")
    parser.add_argument("--sigma", type=float, default=1.0, help="within-class noise sigma")
    parser.add_argument("--divisor", type=int, default=10, help="class-count divisor")
    parser.add_argument("--weight-mode", default="none", choices=["none", "inverse_frequency"],
                        help="class weighting used by both arms")
    parser.add_argument("--target", type=float, default=0.90, help="target macro-F1")
    parser.add_argument("--out", type=Path, default=None, help="write full results as JSON")
    args = parser.parse_args(argv)

    config = BenchmarkConfig(
        seeds=args.seeds,
        budget=args.budget,
        batch_size_query=args.batch_size,
        epochs=args.epochs,
        dimension=args.dim,
        cluster_separation=args.separation,
        noise_sigma=args.sigma,
        divisor=args.divisor,
        weight_mode=args.weight_mode,
        target_macro_f1=args.target,
    )
    start = time.perf_counter()
    result = run_benchmark(config)
    elapsed = time.perf_counter() - start

    print(summarize(result))
    print(f"\nwall time: {elapsed:.1f}s")
    if args.out is not None:
        args.out.write_text(result_to_json(result))
        print(f"full results written to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
