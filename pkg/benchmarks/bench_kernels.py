"""Throughput comparison of the compiled and numpy kernel backends.

Usage:
    python3 benchmarks/bench_kernels.py [--batch 256] [--repeats 200]

Times the three hot kernels (forward pass, per-sample losses, fused
loss+gradient) on a few representative network shapes and reports the
per-call time of each backend plus the speedup.
"""

import argparse
import timeit

import numpy as np

from pdcl.nncore import MlpSpec, init_params, unpack_params
from pdcl.nncore import _kernels_np

try:
    from pdcl.nncore import _kernels_cy
except ImportError:
    _kernels_cy = None


SHAPES = [(10, 32, 10), (10, 6, 10), (64, 128, 128, 20)]


def bench_one(kernels, ws, bs, x, y, repeats):
    out = {}
    for name, call in [
        ("forward", lambda: kernels.forward(ws, bs, x)),
        ("per_sample_losses", lambda: kernels.per_sample_losses(ws, bs, x, y)),
        ("loss_and_grad", lambda: kernels.loss_and_grad(ws, bs, x, y)),
    ]:
        call()  # warm-up
        out[name] = timeit.timeit(call, number=repeats) / repeats
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=256)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    if _kernels_cy is None:
        print("compiled backend unavailable; nothing to compare")
        return

    rng = np.random.default_rng(0)
    print(f"batch={args.batch} repeats={args.repeats}")
    print(f"{'shape':>22} {'kernel':>18} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for shape in SHAPES:
        spec = MlpSpec(shape, seed=0)
        ws, bs = unpack_params(spec, init_params(spec))
        x = rng.normal(size=(args.batch, shape[0]))
        y = rng.integers(0, shape[-1], size=args.batch)
        t_np = bench_one(_kernels_np, ws, bs, x, y, args.repeats)
        t_cy = bench_one(_kernels_cy, ws, bs, x, y, args.repeats)
        for kernel in t_np:
            ratio = t_np[kernel] / t_cy[kernel]
            print(
                f"{str(shape):>22} {kernel:>18} "
                f"{t_np[kernel] * 1e6:>8.1f}us {t_cy[kernel] * 1e6:>8.1f}us {ratio:>7.2f}x"
            )


if __name__ == "__main__":
    main()
