"""Time the compiled kernels against the numpy fallback on run-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import sys
import timeit

import numpy as np

from trajguide import _kernels


def cases(rng):
    n_f, n_p = 24, 77
    attn16 = rng.random((n_f, 256, n_p))
    masks16 = rng.random((n_f, 256)) < 0.3
    yield "spatial_edit 24x256x77, 11 tokens", _kernels.spatial_edit, (
        attn16, np.where(masks16, 1.0, 0.9), 0.1 * masks16 * rng.random((n_f, 256)),
        np.arange(1, 12, dtype=np.int64))
    masks8 = rng.random((n_f, 64)) < 0.3
    yield "temporal_edit 64x24x24", _kernels.temporal_edit, (
        rng.random((64, n_f, n_f)), masks8, masks8 * rng.random((n_f, 64)), 0.9, 0.001)
    yield "composite 2 subjects, 24x4x256", _kernels.composite, (
        rng.standard_normal((n_f, 4, 256)), rng.standard_normal((2, n_f, 4, 256)),
        rng.random((2, n_f, 256)) < 0.3, 0.4)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)

    if _kernels.BACKEND != "compiled":
        print("compiled extension not available; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<36}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}  equal")
    for name, fn, inputs in cases(rng):
        times = {}
        results = {}
        for backend in ("python", "compiled"):
            results[backend] = fn(*inputs, backend=backend)
            t = timeit.repeat(lambda: fn(*inputs, backend=backend), number=1, repeat=args.repeat)
            times[backend] = min(t) * 1e3
        same = np.array_equal(results["python"], results["compiled"])
        print(f"{name:<36}{times['python']:>12.3f}{times['compiled']:>14.3f}"
              f"{times['python'] / times['compiled']:>9.1f}x  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
