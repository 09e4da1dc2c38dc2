"""Compare the numba and numpy kernels, and monitor throughput per backend.

    python benchmarks/bench_kernels.py [--frames 2000] [--modes 20] [--dim 19]

Kernel timings use ``kernels.IMPLEMENTATIONS`` directly. The monitor
benchmark runs in subprocesses so that ``SHDPVAR_NUMBA`` selects the
backend at import time, as it does for users.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from shdpvar import kernels
from shdpvar.model import regressors

MONITOR_SNIPPET = """
import sys, time
import numpy as np
from shdpvar import backend_name
from shdpvar.introspection import LikelihoodCurve, SkillLibrary, SkillModel, MonitorState
from shdpvar.model import SHDPVARModel, StickyHDPState, VAREmission
from shdpvar.stats import rng_stream, sample_dirichlet

S, L, d, r, n = (int(a) for a in sys.argv[1:6])
rng = rng_stream(0)
skills = []
for s in range(S):
    ems = [VAREmission(0.3 * rng.standard_normal((r, d, d)) / np.sqrt(d * max(r, 1)), np.eye(d))
           for _ in range(L)]
    beta = sample_dirichlet(np.ones(L), rng)
    pi = np.stack([sample_dirichlet(np.ones(L), rng) for _ in range(L)])
    model = SHDPVARModel(StickyHDPState(beta, pi, 1.0, 1.0, 0.0), ems)
    curve = LikelihoodCurve(-np.arange(1, 11) * d, np.ones(10))
    skills.append(SkillModel(f"s{s}", model, curve, 2, 10.0))
lib = SkillLibrary(tuple(skills))
Y = rng.standard_normal((n, d))
state = MonitorState(lib, 3.0)
state.step(Y[0], "s0")
t0 = time.perf_counter()
for y in Y[1:]:
    state.step(y, "s0")
dt = time.perf_counter() - t0
print(backend_name(), (n - 1) / dt)
"""


def _time(fn, *args, repeat=5):
    fn(*args)  # compile / warm caches
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_table(n, L, d, r, seed=0):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((n + r, d))
    X = regressors(data, r)
    Y = np.ascontiguousarray(data[r:])
    W = 0.1 * rng.standard_normal((L, d, X.shape[1]))
    C = np.stack([np.eye(d)] * L)
    logconst = np.full(L, -0.5 * d * np.log(2 * np.pi))
    trans = rng.dirichlet(np.ones(L), size=L)
    init = np.full(L, 1.0 / L)
    u = rng.random(n)

    loge = kernels.IMPLEMENTATIONS["numpy"]["emission_loglik"](Y, X, W, C, logconst)
    logb = kernels.IMPLEMENTATIONS["numpy"]["backward_messages"](trans, loge)
    cases = {
        "emission_loglik": (Y, X, W, C, logconst),
        "forward_cumulative": (init, trans, loge),
        "backward_messages": (trans, loge),
        "sample_states": (init, trans, loge, logb, u),
        "viterbi": (init, trans, loge),
    }
    rows = []
    for name, args in cases.items():
        times = {b: _time(impl[name], *args) for b, impl in kernels.IMPLEMENTATIONS.items()}
        rows.append((name, times))
    return rows


def monitor_throughput(S, L, d, r, n):
    out = {}
    for flag in ("1", "0"):
        env = dict(os.environ, SHDPVAR_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", MONITOR_SNIPPET, str(S), str(L), str(d), str(r), str(n)],
                             env=env, capture_output=True, text=True, check=True)
        name, fps = res.stdout.split()
        out[name] = float(fps)
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--frames", type=int, default=2000)
    p.add_argument("--modes", type=int, default=20)
    p.add_argument("--dim", type=int, default=19)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--skills", type=int, default=4)
    args = p.parse_args(argv)

    backends = list(kernels.IMPLEMENTATIONS)
    print(f"kernels: n={args.frames} L={args.modes} d={args.dim} r={args.order}")
    print(f"{'kernel':<20}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for name, times in kernel_table(args.frames, args.modes, args.dim, args.order):
        cells = "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
        speed = times["numpy"] / times["numba"] if "numba" in times else float("nan")
        print(f"{name:<20}{cells}{speed:>9.1f}x")

    fps = monitor_throughput(args.skills, args.modes, args.dim, args.order, args.frames)
    print(f"\nmonitor: S={args.skills} L={args.modes} d={args.dim} r={args.order}")
    for name, v in fps.items():
        print(f"{name:<8}{v:>10.0f} frames/s")


if __name__ == "__main__":
    main()
