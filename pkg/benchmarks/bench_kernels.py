"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs each kernel pair at batch sizes the training loop actually sees
(desk scale and paper-parity scale) plus a retrieval-sized ranking, checks
the two paths agree, and prints per-kernel timings and speedups.

Select the backend at import time with HNGEN_NUMBA=0 (numpy only); this
script switches between both explicitly.
"""

import time

import numpy as np

from hngen import kernels


def timeit(fn, *args, repeat=20, warmup=2):
    for _ in range(warmup):
        fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.mean(times)), float(np.std(times))


def compare(name, fn, args, check=np.allclose):
    kernels.set_backend("numpy")
    ref = fn(*args)
    t_np, s_np = timeit(fn, *args)
    kernels.set_backend("numba")
    out = fn(*args)
    t_nb, s_nb = timeit(fn, *args)
    agree = check(ref, out)
    print(f"{name:<38} numpy {t_np * 1e3:8.3f} ms   numba {t_nb * 1e3:8.3f} ms   "
          f"speedup {t_np / t_nb:5.2f}x   agree={bool(agree)}")
    assert agree, f"{name}: backends disagree"


def main():
    rng = np.random.default_rng(0)
    print(f"default backend: {kernels.active_backend()}")
    print()

    for b, d, tag in ((12, 64, "desk"), (80, 512, "paper-parity")):
        z = rng.standard_normal((b, d))
        grad3 = rng.standard_normal((b, b, d))
        grad2 = rng.standard_normal((b, b))
        print(f"--- batch {b} x dim {d} ({tag}) ---")
        compare(f"hadamard_pairs B={b} D={d}", kernels.hadamard_pairs, (z,))
        compare(f"hadamard_pairs_grad B={b} D={d}", kernels.hadamard_pairs_grad,
                (z, grad3))
        compare(f"pairwise_sqdist B={b} D={d}", kernels.pairwise_sqdist, (z,))
        compare(f"pairwise_sqdist_grad B={b} D={d}", kernels.pairwise_sqdist_grad,
                (z, grad2))
        print()

    for n, tag in ((500, "desk"), (5000, "retrieval-scale")):
        z = rng.standard_normal((n, 64))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        labels = rng.integers(1, 50, size=n)
        sim = z @ z.T
        print(f"--- ranking {n} queries x {n} gallery ({tag}) ---")
        compare(
            f"ranked_hits n={n}",
            kernels.ranked_hits,
            (sim, labels, labels, True),
            check=lambda a, b: np.array_equal(a, b),
        )
        print()


if __name__ == "__main__":
    main()
