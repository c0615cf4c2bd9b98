"""Compare the compiled and numpy SGD sweep backends.

Times one epoch-sized sweep per backend on random data of MNIST-like size
and reports the largest weight difference between backends.

    python benchmarks/bench_kernels.py [--samples 100] [--dim 784] [--repeat 5]
"""
import argparse
import time

import numpy as np

from ldl import kernels


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def run(samples: int, dim: int, out_dim: int, repeat: int, seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    X = rng.random((samples, dim))
    T = rng.standard_normal((samples, out_dim))
    W1 = rng.standard_normal((dim, dim)) / np.sqrt(dim)
    W2 = rng.standard_normal((out_dim, dim)) / np.sqrt(dim)
    order = rng.permutation(samples)
    rows = []
    for name in kernels.BACKENDS:
        w = W2.copy()
        single = _time(lambda: kernels.sgd_single_sweep(w, X, T, order, 1e-4, backend=name), repeat)
        a, b = W1.copy(), W2.copy()
        double = _time(lambda: kernels.sgd_two_layer_sweep(a, b, X, T, order, 1e-5, backend=name), repeat)
        # agreement is measured on one fresh sweep from identical starting weights
        w = W2.copy()
        kernels.sgd_single_sweep(w, X, T, order, 1e-4, backend=name)
        a, b = W1.copy(), W2.copy()
        kernels.sgd_two_layer_sweep(a, b, X, T, order, 1e-5, backend=name)
        rows.append({"backend": name, "single_s": single, "two_layer_s": double, "weights": (w, a, b)})
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--samples", type=int, default=100)
    parser.add_argument("--dim", type=int, default=784)
    parser.add_argument("--out-dim", type=int, default=784)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    rows = run(args.samples, args.dim, args.out_dim, args.repeat)
    print(f"default backend: {kernels.BACKEND}; {args.samples} samples, d={args.dim}, k={args.out_dim}")
    print(f"{'backend':<8} {'single ms/sample':>17} {'two-layer ms/sample':>20}")
    for r in rows:
        print(f"{r['backend']:<8} {1e3 * r['single_s'] / args.samples:>17.3f} "
              f"{1e3 * r['two_layer_s'] / args.samples:>20.3f}")
    if len(rows) == 2:
        fast, slow = sorted(rows, key=lambda r: r["single_s"])
        diff = max(float(np.max(np.abs(x - y))) for x, y in zip(rows[0]["weights"], rows[1]["weights"]))
        print(f"speedup ({fast['backend']} over {slow['backend']}): "
              f"single {slow['single_s'] / fast['single_s']:.1f}x, "
              f"two-layer {slow['two_layer_s'] / fast['two_layer_s']:.1f}x")
        print(f"max |weight difference| between backends after one sweep: {diff:.3e}")
    else:
        print("compiled backend unavailable; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
