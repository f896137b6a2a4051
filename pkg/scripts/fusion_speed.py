#!/usr/bin/env python3
"""Paired fused-vs-unfused timing for one variant.

Usage: python3 scripts/fusion_speed.py [--variant T0] [--iters 5] [--batch 1]
"""

import argparse
import statistics

from patnet.bench import bench_run
from patnet.config import VARIANT_TABLE, build_variant
from patnet.fusion import fuse_model
from patnet.model import init_params


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--variant", default="T0", choices=list(VARIANT_TABLE))
    parser.add_argument("--iters", type=int, default=5)
    parser.add_argument("--batch", type=int, default=1)
    parser.add_argument("--runs", type=int, default=5)
    args = parser.parse_args()

    spec = build_variant(args.variant)
    store = init_params(spec, seed=0)
    fused, report = fuse_model(store, spec)
    print(f"{args.variant}: {report.tensors_removed} tensors removed by fusion, "
          f"max rewrite deviation {report.max_deviation:.2e}")

    plain, merged = [], []
    for _ in range(args.runs):
        plain.append(bench_run(spec, store, args.batch, args.iters,
                               warmup=1).mean_latency_ms)
        merged.append(bench_run(spec, fused, args.batch, args.iters,
                                warmup=1).mean_latency_ms)
    p, m = statistics.median(plain), statistics.median(merged)
    print(f"median latency over {args.runs} runs: "
          f"unfused {p:.2f} ms, fused {m:.2f} ms ({m / p:.3f}x)")


if __name__ == "__main__":
    main()
