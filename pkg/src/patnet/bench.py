"""Throughput measurement over deterministic synthetic batches."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ModelSpec
from .model import ParamStore, model_forward

INPUT_SEED = 0xBEC4


@dataclass
class BenchReport:
    variant: str
    batch_size: int
    warmup_iters: int
    measured_iters: int
    threads: int
    images_per_sec: float
    mean_latency_ms: float
    p50_latency_ms: float
    p95_latency_ms: float


def bench_run(spec: ModelSpec, store: ParamStore, batch: int, iters: int,
              warmup: int, threads: int = 1) -> BenchReport:
    """Time ``iters`` steady-state forwards of one deterministic batch.

    With ``threads`` > 1 every iteration fans the same forward across that
    many workers on the shared immutable store; latencies are per forward.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    rng = np.random.default_rng(INPUT_SEED)
    h, w = spec.input_hw
    x = rng.standard_normal((batch, 3, h, w), dtype=np.float32)

    def one_forward() -> float:
        t0 = time.perf_counter()
        model_forward(spec, store, x)
        return (time.perf_counter() - t0) * 1e3

    for _ in range(warmup):
        one_forward()

    latencies: list[float] = []
    t_start = time.perf_counter()
    if threads <= 1:
        for _ in range(iters):
            latencies.append(one_forward())
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for _ in range(iters):
                futs = [pool.submit(one_forward) for _ in range(threads)]
                latencies.extend(f.result() for f in futs)
    elapsed = time.perf_counter() - t_start

    lat = np.sort(np.asarray(latencies))
    images = iters * batch * max(threads, 1)
    return BenchReport(
        variant=spec.label or spec.config.name,
        batch_size=batch,
        warmup_iters=warmup,
        measured_iters=iters,
        threads=max(threads, 1),
        images_per_sec=images / elapsed,
        mean_latency_ms=float(lat.mean()),
        p50_latency_ms=float(np.percentile(lat, 50)),
        p95_latency_ms=float(np.percentile(lat, 95)),
    )
