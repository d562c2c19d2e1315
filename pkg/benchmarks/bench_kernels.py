"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Also times one paired simulation under each backend (fresh interpreter each,
since the backend is chosen at import).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from care import _pykernels as py

try:
    from care import _ckernels as cy
except ImportError:
    cy = None


def cases(rng):
    n = 3000
    ids = np.arange(1, n + 1, dtype=np.int64)
    clusters = rng.integers(0, n // 2, n).astype(np.int64)
    xs = rng.uniform(0, 16000, 52)
    ys = rng.uniform(0, 13000, 52)
    # crowd half the nodes at a few sites so there are real contacts
    xs[:26] = np.repeat([1000.0, 5000.0], 13) + rng.uniform(-15, 15, 26)
    ys[:26] = 2000.0 + rng.uniform(-15, 15, 26)
    ranges = np.full(52, 20.0)
    ha = rng.integers(0, 2**63, 400, dtype=np.int64).astype(np.uint64)
    hb = rng.integers(0, 2**63, 400, dtype=np.int64).astype(np.uint64)
    return {
        "oracle_scan (3000 buffered)": lambda k: k.oracle_scan(n + 1, -1, ids, clusters, 0.01, 0.3, 7),
        "contact_pairs (52 nodes)": lambda k: k.contact_pairs(xs, ys, ranges),
        "hamming_matrix (400x400)": lambda k: k.hamming_matrix(ha, hb),
        "pair_uniform (scalar)": lambda k: k.pair_uniform(7, 3, 11),
    }


def sim_time(pure: bool) -> float:
    code = ("import time; from care.config import ScenarioConfig; from care.metrics import paired_run;"
            "t=time.perf_counter(); paired_run(ScenarioConfig(duration_T=5400)); print(time.perf_counter()-t)")
    env = dict(os.environ)
    if pure:
        env["CARE_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--no-sim", action="store_true")
    args = ap.parse_args()
    if cy is None:
        print("compiled extension not built; only the fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<30}{'python us':>12}{'cython us':>12}{'speedup':>9}")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=args.repeat, repeat=3)) / args.repeat * 1e6
        if cy is not None:
            t_cy = min(timeit.repeat(lambda: fn(cy), number=args.repeat, repeat=3)) / args.repeat * 1e6
            print(f"{name:<30}{t_py:>12.1f}{t_cy:>12.1f}{t_py / t_cy:>8.1f}x")
        else:
            print(f"{name:<30}{t_py:>12.1f}{'-':>12}{'-':>9}")
    if not args.no_sim:
        s_py = sim_time(True)
        line = f"{'paired run, 1.5 h scenario':<30}{s_py * 1e6:>12.0f}"
        if cy is not None:
            s_cy = sim_time(False)
            line += f"{s_cy * 1e6:>12.0f}{s_py / s_cy:>8.1f}x"
        print(line)


if __name__ == "__main__":
    main()
