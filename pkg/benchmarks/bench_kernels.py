"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--size 64] [--repeats 5]

Reports the best wall time per kernel and backend, plus a full affine warp
with gradient through ``c2fvit.volume`` for each backend.
"""
import argparse
import time

import numpy as np

from c2fvit import _pykernels, kernels


def best_of(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    try:
        from c2fvit import _ckernels
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    n = args.size
    rng = np.random.default_rng(0)
    vol = rng.normal(size=(1, n, n, n))
    grid = np.stack(np.meshgrid(*[np.arange(n, dtype=float)] * 3, indexing="ij"), -1).reshape(-1, 3)
    idx = np.ascontiguousarray(grid + rng.normal(scale=0.7, size=grid.shape))
    gout = rng.normal(size=(1, idx.shape[0]))
    labels = rng.integers(0, 5, size=(n, n, n)).astype(np.int64)

    cases = {
        "trilinear_forward": lambda m: m.trilinear_forward(vol, idx),
        "trilinear_backward": lambda m: m.trilinear_backward(vol, idx, gout, True),
        "nearest_sample": lambda m: m.nearest_sample(labels, idx),
    }
    print(f"grid {n}^3, {idx.shape[0]} sample points, best of {args.repeats}")
    print(f"{'kernel':<20} {'python s':>10} {'cython s':>10} {'speedup':>8}")
    for name, fn in cases.items():
        tp = best_of(lambda: fn(_pykernels), args.repeats)
        tc = best_of(lambda: fn(_ckernels), args.repeats)
        print(f"{name:<20} {tp:10.4f} {tc:10.4f} {tp / tc:8.1f}x")

    from c2fvit import diffcore as dc
    from c2fvit.volume import warp_tensor

    A = np.eye(4)
    A[:3, :3] += rng.normal(scale=0.05, size=(3, 3))
    A[:3, 3] = rng.normal(scale=0.05, size=3)

    def warp_with_grad():
        a = dc.Tensor(A, requires_grad=True)
        vt = dc.Tensor(vol[0], requires_grad=True)
        dc.backprop(dc.sum(warp_tensor(vt, a)))

    for backend in ("python", "cython"):
        prev = kernels.use_backend(backend)
        try:
            t = best_of(warp_with_grad, args.repeats)
        finally:
            kernels.use_backend(prev)
        print(f"{'warp+grad ' + backend:<20} {t:10.4f}")


if __name__ == "__main__":
    main()
