"""Compare the compiled kernels against the numpy fallbacks.

Run: python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from panorank import _kernels_py

try:
    from panorank import _kernels as compiled
except ImportError:
    compiled = None


def timeit(fn, *args, repeat=20):
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    rows = []

    for c, h, w, kh, kw in [(4, 64, 64, 3, 3), (8, 128, 128, 3, 3),
                            (8, 128, 128, 1, 7), (16, 256, 256, 3, 3)]:
        x = rng.normal(size=(c, h, w))
        wt = rng.normal(size=(c, c, kh, kw))
        b = rng.normal(size=c)
        t_py = timeit(_kernels_py.conv2d_forward, x, wt, b)
        t_c = timeit(compiled.conv2d_forward, x, wt, b) if compiled else float("nan")
        rows.append((f"conv {c}x{h}x{w} k{kh}x{kw}", t_py, t_c))

    for h, w in [(128, 128), (512, 512)]:
        m = (rng.random((h, w)) < 0.4).astype(np.uint8)
        t_py = timeit(_kernels_py.label_components, m, 4)
        t_c = timeit(compiled.label_components, m, 4) if compiled else float("nan")
        rows.append((f"label {h}x{w}", t_py, t_c))

    print(f"{'case':<24}{'python':>12}{'compiled':>12}{'speedup':>10}")
    for name, t_py, t_c in rows:
        speed = t_py / t_c if t_c == t_c else float("nan")
        print(f"{name:<24}{t_py * 1e3:>10.3f}ms{t_c * 1e3:>10.3f}ms{speed:>9.1f}x")


if __name__ == "__main__":
    main()
