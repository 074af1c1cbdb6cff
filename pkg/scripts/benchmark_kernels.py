#!/usr/bin/env python3
"""Benchmark the convolution kernel backends against each other.

Times forward and backward passes of the compiled (Cython) and pure
numpy backends on the exact layer shapes the default model uses, checks
that forward outputs agree bitwise, and prints a comparison table.
"""

import argparse
import statistics
import time

import numpy as np

from affectbench import _kernels_py
from affectbench.rng import Rng

try:
    from affectbench import _kernels
except ImportError:
    _kernels = None

# (label, batch, cin, cout, padded length, kernel) per conv layer of the
# default architecture at batch 64.
LAYERS = [
    ("conv1", 64, 8, 16, 66, 3),
    ("conv2", 64, 16, 16, 66, 3),
    ("conv3", 64, 16, 32, 34, 3),
    ("conv4", 64, 32, 32, 34, 3),
    ("conv5", 64, 32, 64, 18, 3),
    ("conv6", 64, 64, 64, 18, 3),
]


def time_call(fn, repeats):
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def bench_layer(backend, x, w, bias, grad, repeats):
    fwd = time_call(lambda: backend.conv1d_forward(x, w, bias), repeats)
    bwd = time_call(lambda: backend.conv1d_backward(x, w, grad), repeats)
    return fwd, bwd


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20,
                        help="timing repeats per layer (median reported)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if _kernels is None:
        print("compiled backend not built; showing python backend only")
    rng = Rng(args.seed)

    header = f"{'layer':8} {'shape':24} {'python fwd':>12} {'python bwd':>12}"
    if _kernels is not None:
        header += f" {'cython fwd':>12} {'cython bwd':>12} {'speedup':>8}"
    print(header)
    print("-" * len(header))

    totals = {"pf": 0.0, "pb": 0.0, "cf": 0.0, "cb": 0.0}
    for label, b, cin, cout, lp, k in LAYERS:
        x = rng.normals(b * cin * lp).reshape(b, cin, lp)
        w = rng.normals(cout * cin * k).reshape(cout, cin, k)
        bias = rng.normals(cout)
        lout = lp - k + 1
        grad = rng.normals(b * cout * lout).reshape(b, cout, lout)

        pf, pb = bench_layer(_kernels_py, x, w, bias, grad, args.repeats)
        totals["pf"] += pf
        totals["pb"] += pb
        shape = f"[{b},{cin},{lp}]x[{cout},{cin},{k}]"
        row = f"{label:8} {shape:24} {pf * 1e3:10.3f}ms {pb * 1e3:10.3f}ms"

        if _kernels is not None:
            out_py = _kernels_py.conv1d_forward(x, w, bias)
            out_cy = _kernels.conv1d_forward(x, w, bias)
            if not np.array_equal(out_py, out_cy):
                raise AssertionError(
                    f"{label}: backends disagree on the forward pass")
            cf, cb = bench_layer(_kernels, x, w, bias, grad, args.repeats)
            totals["cf"] += cf
            totals["cb"] += cb
            speed = (pf + pb) / (cf + cb)
            row += f" {cf * 1e3:10.3f}ms {cb * 1e3:10.3f}ms {speed:7.2f}x"
        print(row)

    total_row = (f"{'total':8} {'':24} {totals['pf'] * 1e3:10.3f}ms "
                 f"{totals['pb'] * 1e3:10.3f}ms")
    if _kernels is not None:
        overall = ((totals["pf"] + totals["pb"])
                   / (totals["cf"] + totals["cb"]))
        total_row += (f" {totals['cf'] * 1e3:10.3f}ms "
                      f"{totals['cb'] * 1e3:10.3f}ms {overall:7.2f}x")
        print(total_row)
        print(f"\nforward outputs bitwise-identical on all layers; "
              f"overall speedup {overall:.2f}x")
    else:
        print(total_row)


if __name__ == "__main__":
    main()
