"""Time the numba kernels against the pure-numpy fallback.

Usage: python3 benchmarks/bench_backends.py [--repeat N]

The backend is fixed at import time, so each backend runs in its own
subprocess (``ELSROC_DISABLE_NUMBA=1`` selects numpy). Numba compile
time is excluded by a warm-up call.
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from elsroc import _accel, _kernels
from elsroc.criteria import ALL_KINDS, el_solve, fit_grid, score_fits
from elsroc.model_fit import ModelSpec, default_grid, fit
from elsroc.simulation import generate_study, run_replication
from elsroc.study_data import Dataset
from elsroc.transforms import TransformPair, t_alpha_inv

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
data = Dataset.from_tables([generate_study("ND", rng) for _ in range(10)])
spec = ModelSpec(2, TransformPair(0.6, 1.4))
u = rng.normal(size=(10, 2))
z = np.linspace(-20, 20, 1001)
f0 = fit(data, spec)
zz, D = np.array(f0.z), np.ascontiguousarray(f0.D)
grid = default_grid()


def full_selection():
    score_fits(fit_grid(data, grid), grid, ALL_KINDS, data)


cases = {
    "objective (1 eval)": lambda: _kernels._objective(f0.params, zz, D, True),
    "t_inv alpha=0.6 (1001 pts)": lambda: t_alpha_inv(0.6, z),
    "family-2 REML fit": lambda: fit(data, spec),
    "GK refit (warm Newton)": lambda: _kernels.refit_local(f0.params, zz, D, True),
    "el_solve N=10": lambda: el_solve(u),
    "50-model selection, 6 criteria": full_selection,
    "one replication ND N=10": lambda: run_replication("ND", 10, 0, 1),
}
out = {"backend": _accel.BACKEND, "times": {}}
for name, fn in cases.items():
    fn()  # warm-up / JIT
    n = repeat if "selection" not in name and "replication" not in name else max(1, repeat // 50)
    t0 = time.perf_counter()
    for _ in range(n):
        fn()
    out["times"][name] = (time.perf_counter() - t0) / n
print(json.dumps(out))
"""


def run(disable, repeat):
    env = dict(os.environ)
    env.pop("ELSROC_DISABLE_NUMBA", None)
    if disable:
        env["ELSROC_DISABLE_NUMBA"] = "1"
    r = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, capture_output=True, text=True,
                       check=True)
    return json.loads(r.stdout)


def fmt(sec):
    if sec < 1e-3:
        return f"{sec * 1e6:9.1f} us"
    if sec < 1:
        return f"{sec * 1e3:9.2f} ms"
    return f"{sec:9.2f} s "


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    fast = run(False, args.repeat)
    slow = run(True, args.repeat)
    if fast["backend"] != "numba":
        print("numba is not installed; both columns use the numpy fallback")
    print(f"{'case':34s} {'numba':>12s} {'numpy':>12s} {'speed-up':>9s}")
    for name, t in fast["times"].items():
        s = slow["times"][name]
        print(f"{name:34s} {fmt(t):>12s} {fmt(s):>12s} {s / t:8.1f}x")


if __name__ == "__main__":
    main()
