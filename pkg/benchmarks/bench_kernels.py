"""Benchmark the compiled kernels against the numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py

Workloads mirror the package's hot paths: an SGD epoch worth of
forward/backward passes on small batches, and nearest-bank distance scans
for a test set against per-client calibration banks.
"""

import time

import numpy as np

from fedconform._kernels import _numpy_impl

try:
    from fedconform._kernels import _fast
except ImportError:
    _fast = None


def time_call(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_sgd_epoch(impl, rng, batches=200, batch=32, d=8, h=64, c=5):
    w1 = rng.normal(size=(h, d))
    b1 = rng.normal(size=h)
    w2 = rng.normal(size=(c, h))
    b2 = rng.normal(size=c)
    xs = [np.ascontiguousarray(rng.normal(size=(batch, d))) for _ in range(batches)]
    ys = [rng.integers(0, c, size=batch).astype(np.int64) for _ in range(batches)]

    def run():
        for x, y in zip(xs, ys):
            hidden, probs = impl.mlp_forward(w1, b1, w2, b2, x)
            impl.mlp_backward(w1, b1, w2, b2, x, y, hidden, probs)

    return time_call(run)


def bench_bank_scan(impl, rng, clients=6, bank_size=250, queries=2000, h=64):
    banks = [np.ascontiguousarray(rng.normal(size=(bank_size, h))) for _ in range(clients)]
    q = np.ascontiguousarray(rng.normal(size=(queries, h)))

    def run():
        for bank in banks:
            impl.min_distances(bank, q)

    return time_call(run)


def main():
    impls = [("numpy", _numpy_impl)]
    if _fast is not None:
        impls.append(("compiled", _fast))
    else:
        print("compiled extension not built; benchmarking the fallback only")

    workloads = [
        ("sgd epoch (200 batches of 32, d=8 h=64 C=5)", bench_sgd_epoch),
        ("bank scan (6 banks of 250 x 64, 2000 queries)", bench_bank_scan),
    ]
    results = {}
    for wname, bench in workloads:
        for iname, impl in impls:
            results[(wname, iname)] = bench(impl, np.random.default_rng(0))

    width = max(len(w) for w, _ in workloads)
    print(f"{'workload':<{width}}  {'backend':<9} {'best (ms)':>10}  speedup")
    for wname, _ in workloads:
        base = results[(wname, "numpy")]
        for iname, _ in impls:
            t = results[(wname, iname)]
            speedup = f"{base / t:5.2f}x" if iname != "numpy" else "  1.00x"
            print(f"{wname:<{width}}  {iname:<9} {t * 1e3:>10.2f}  {speedup}")


if __name__ == "__main__":
    main()
