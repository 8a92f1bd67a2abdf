"""Time the hot kernels with numba on and off.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Each backend runs in its own interpreter (the switch is read at import time).
The first call of every kernel is a warm-up and is not timed, so numba's
compilation cost is excluded.
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from selfrep._accel import backend
from selfrep.brownian import StopRule, sample_walk
from selfrep.diffusion import OccupationProfile
from selfrep.discrete import run_lattice_selfrep
from selfrep.experiments import stopped_walk_with_field
from selfrep.flow import flow_trace
from selfrep.rng import make_rng

repeat = int(sys.argv[1])
prof = OccupationProfile.constant(1.0, -4.0, 4.0, 0.01)
y = np.arange(-4, 4.0001, 0.01)
cases = {
    "walk (5e4 jumps)": lambda s: sample_walk(6, 0, StopRule.after_jumps(50_000), s),
    "flow trace (2e4 steps)": lambda s: flow_trace(20_000, 1e-4, y, seed=s),
    "lattice self-repelling (level 5)": lambda s: run_lattice_selfrep(5, prof, 0.1, s),
    "stopped walk with field (level 4)":
        lambda s: stopped_walk_with_field(4, 0.5, make_rng(s), make_rng(s + 1)),
}
out = {"backend": backend()}
for name, fn in cases.items():
    fn(0)
    t = time.perf_counter()
    for s in range(1, repeat + 1):
        fn(s)
    out[name] = (time.perf_counter() - t) / repeat
print(json.dumps(out))
"""


def run_backend(flag, repeat):
    env = dict(os.environ, SELFREP_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", CHILD, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    fast = run_backend("1", args.repeat)
    slow = run_backend("0", args.repeat)
    print(f"{'kernel':36s} {fast.pop('backend'):>10s} {slow.pop('backend'):>10s} {'speedup':>8s}")
    for name in fast:
        print(f"{name:36s} {fast[name]:10.4f} {slow[name]:10.4f} {slow[name] / fast[name]:8.1f}x")


if __name__ == "__main__":
    main()
