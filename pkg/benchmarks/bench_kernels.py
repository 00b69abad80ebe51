#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the two hot kernels (same-padding conv1d and overlapping max-pool,
forward and backward) on the desk-scale block shapes, plus one full training
epoch, under both backends. Run:

    python benchmarks/bench_kernels.py [--epoch]
"""

import argparse
import time

import numpy as np

from fhlr import kernels
from fhlr.data import SyntheticSpec, make_synthetic
from fhlr.network import ArchitectureSpec
from fhlr.training import TrainConfig, train_seed

# (batch, cin, cout, kernel, length) per conv block at width 0.5, L=80
BLOCK_SHAPES = [
    (64, 2, 12, 8, 80),
    (64, 12, 16, 8, 80),
    (64, 16, 32, 8, 37),
    (64, 32, 36, 6, 37),
    (64, 36, 48, 6, 15),
    (64, 48, 64, 4, 15),
]


def timeit(fn, *args, reps=10):
    fn(*args)  # warm (and JIT-compile on the numba path)
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return (time.perf_counter() - t0) / reps


def bench_conv(backend):
    kernels.set_backend(backend)
    rng = np.random.default_rng(0)
    total_f = total_b = 0.0
    flops = 0
    for b, cin, cout, k, length in BLOCK_SHAPES:
        xp = rng.standard_normal((b, cin, length + k - 1))
        w = rng.standard_normal((cout, cin, k))
        bias = rng.standard_normal(cout)
        dy = rng.standard_normal((b, cout, length))
        total_f += timeit(kernels.conv1d_forward, xp, w, bias)
        total_b += timeit(kernels.conv1d_backward, dy, xp, w)
        flops += 2 * b * cin * cout * k * length
    return total_f, total_b, flops


def bench_pool(backend):
    kernels.set_backend(backend)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((64, 32, 80))
    out, pos = kernels.maxpool_forward(x, 8, 2)
    dy = rng.standard_normal(out.shape)
    tf = timeit(kernels.maxpool_forward, x, 8, 2)
    tb = timeit(kernels.maxpool_backward, dy, pos, 80)
    return tf, tb


def bench_epoch(backend):
    kernels.set_backend(backend)
    spec = SyntheticSpec(num_classes=5, channels=2, window_length=80,
                         train_count=1000, test_count=10, rng_seed=0)
    train, _ = make_synthetic(spec)
    arch = ArchitectureSpec(input_channels=2, input_length=80, num_classes=5,
                            width_multiplier=0.5)
    cfg = TrainConfig(epochs=1, batch_size=64, rng_seed=0)
    t0 = time.perf_counter()
    train_seed(train, cfg, arch)
    return time.perf_counter() - t0


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--epoch", action="store_true",
                        help="also time one full training epoch per backend")
    args = parser.parse_args()

    backends = ["numpy"]
    if kernels._numba_available():
        backends.insert(0, "numba")
    else:
        print("numba unavailable; benchmarking the fallback only")

    print(f"{'backend':8s} {'conv fwd':>10s} {'conv bwd':>10s} "
          f"{'fwd GF/s':>9s} {'pool fwd':>10s} {'pool bwd':>10s}")
    for backend in backends:
        cf, cb, flops = bench_conv(backend)
        pf, pb = bench_pool(backend)
        print(f"{backend:8s} {1e3 * cf:9.2f}ms {1e3 * cb:9.2f}ms "
              f"{flops / cf / 1e9:9.2f} {1e3 * pf:9.2f}ms {1e3 * pb:9.2f}ms")

    if args.epoch:
        print()
        for backend in backends:
            dt = bench_epoch(backend)
            print(f"{backend:8s} one epoch (1000 windows, width 0.5): {dt:.2f}s")


if __name__ == "__main__":
    main()
