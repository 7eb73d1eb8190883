"""Time the compiled and numpy kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]
"""
import argparse
import timeit

import numpy as np

from pbope.kernels import backends


def _em_inputs(rng, n_pairs, positions):
    cells = n_pairs * 3
    pair = rng.integers(0, n_pairs, cells)
    pos = rng.integers(0, positions, cells)
    skip = rng.integers(0, 200, cells).astype(np.float64)
    click = rng.integers(0, 40, cells).astype(np.float64)
    theta = 1.0 / np.arange(1, positions + 1)
    gamma = rng.uniform(0.05, 0.6, n_pairs)
    return pair, pos, click, skip, theta, gamma


def _ips_inputs(rng, sessions, length):
    offsets = np.arange(0, (sessions + 1) * length, length, dtype=np.int64)
    k_pos = np.tile(np.arange(1, length + 1), sessions)
    p_pos = np.concatenate([rng.permutation(length) + 1 for _ in range(sessions)])
    clicked = (rng.random(sessions * length) < 0.1).astype(np.uint8)
    alpha = 1.0 / np.log2(np.arange(2, length + 2))
    theta = 1.0 / np.arange(1, length + 1)
    return offsets, k_pos, p_pos, clicked, alpha, theta, 0.0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0, help="multiply input sizes")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    n = max(1, int(100_000 * args.scale))
    em_in = _em_inputs(rng, n, 10)
    ips_in = _ips_inputs(rng, n, 10)
    idx = np.arange(n, dtype=np.uint64)

    cases = {
        f"em_sweep ({3 * n} cells)": lambda k: k.em_sweep(*em_in),
        f"ips_sums ({n} sessions x 10)": lambda k: k.ips_sums(*ips_in),
        f"counter_uniforms ({n} x 11)": lambda k: k.counter_uniforms(42, 3, idx, 11),
    }
    impls = backends()
    if "cython" not in impls:
        print("compiled extension not built; only the numpy backend is timed")
    print(f"{'kernel':<32}" + "".join(f"{name:>12}" for name in impls) + f"{'speedup':>10}")
    for label, fn in cases.items():
        times = {name: min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) for name, mod in impls.items()}
        speed = f"{times['python'] / times['cython']:9.1f}x" if "cython" in times else ""
        print(f"{label:<32}" + "".join(f"{t * 1e3:10.2f}ms" for t in times.values()) + f"{speed:>10}")


if __name__ == "__main__":
    main()
