"""Compare the compiled convolution kernels against the numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py

Shapes mirror the pipeline's hot paths: the pulse model's 2-D convolutions
over 36-row ST maps (forward and both gradients) and the morphology
model's 1-D convolutions over 90-sample segments.
"""

import time

import numpy as np

from pulseid._kernels import _convnp

try:
    from pulseid._kernels import _convcy
except ImportError:
    _convcy = None

CASES_2D = [
    ("G conv1 3->16, 36x300", (1, 3, 36, 300), (16, 3, 3, 3)),
    ("G conv2 16->32, 12x300", (1, 16, 12, 300), (32, 16, 3, 3)),
    ("G conv3 32->32, 4x300", (1, 32, 4, 300), (32, 32, 3, 3)),
]
CASES_1D = [
    ("H conv1 1->16, K=12 L=90", (12, 1, 90), (16, 1, 5)),
    ("H conv2 16->32, K=12 L=45", (12, 16, 45), (32, 16, 5)),
]


def timeit(fn, *args, repeat=20):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def bench(backend, name):
    rng = np.random.default_rng(0)
    print(f"\n{name}")
    total = 0.0
    for label, xs, ks in CASES_2D:
        x, k = rng.normal(size=xs), rng.normal(size=ks)
        g = rng.normal(size=(xs[0], ks[0], xs[2], xs[3]))
        fwd = timeit(backend.conv2d_fwd, x, k)
        gk = timeit(backend.conv2d_grad_k, x, g, ks)
        total += fwd + gk
        print(f"  {label:28s} fwd {fwd * 1e3:7.3f} ms   grad_k {gk * 1e3:7.3f} ms")
    for label, xs, ks in CASES_1D:
        x, k = rng.normal(size=xs), rng.normal(size=ks)
        g = rng.normal(size=(xs[0], ks[0], xs[2]))
        fwd = timeit(backend.conv1d_fwd, x, k)
        gk = timeit(backend.conv1d_grad_k, x, g, ks)
        total += fwd + gk
        print(f"  {label:28s} fwd {fwd * 1e3:7.3f} ms   grad_k {gk * 1e3:7.3f} ms")
    print(f"  {'total':28s} {total * 1e3:7.3f} ms")
    return total


def main():
    t_np = bench(_convnp, "numpy (im2col + BLAS)")
    if _convcy is None:
        print("\ncython extension not built; run `pip install -e .` to compare")
        return
    t_cy = bench(_convcy, "cython (direct loops)")
    ratio = t_np / t_cy
    faster = "cython" if ratio > 1 else "numpy"
    print(f"\n{faster} is {max(ratio, 1 / ratio):.2f}x faster on the pipeline mix")


if __name__ == "__main__":
    main()
