"""Compare the compiled and pure-Python stepping kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--steps 200] [--repeat 3]

For each problem size the script propagates the same single-mode LVC density
matrix with both backends, reports the time per step and the speed-up, and
checks that the two results agree.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from thermbath import kernels
from thermbath.lindblad import Integrator
from thermbath.lvc import build_master_equation, initial_donor_state, single_mode


def _problem(cutoff: int):
    model = single_mode(3.0, 0.2, 1.1, 1.0, 0.036, 0.8, 0.0014, 0.016, cutoff=cutoff)
    eq = build_master_equation(model)
    integ = Integrator(eq)
    rho0 = np.array(initial_donor_state(model, tail_tol=1.0).matrix, dtype=complex, order="C")
    return integ, rho0


def _time(backend, integ, rho0, steps, repeat):
    h = integ.max_step
    eh, ef = integ._exp_tables(h)
    best = np.inf
    out = None
    for _ in range(repeat):
        rho = rho0.copy()
        t0 = time.perf_counter()
        backend.propagate(rho, steps, h, *integ._k, *integ._c, integ.n_jumps, eh, ef, integ.use_if)
        best = min(best, time.perf_counter() - t0)
        out = rho
    return best / steps, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--cutoffs", type=int, nargs="+", default=[10, 20, 40, 80])
    args = ap.parse_args(argv)
    fast = kernels._impl
    slow = kernels.python_backend()
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'dim':>5} {'compiled [us/step]':>19} {'python [us/step]':>17} {'speed-up':>9} {'max diff':>10}")
    for c in args.cutoffs:
        integ, rho0 = _problem(c)
        t_fast, r_fast = _time(fast, integ, rho0, args.steps, args.repeat)
        t_slow, r_slow = _time(slow, integ, rho0, args.steps, args.repeat)
        diff = float(np.max(np.abs(r_fast - r_slow)))
        print(f"{integ.dim:5d} {1e6 * t_fast:19.1f} {1e6 * t_slow:17.1f} {t_slow / t_fast:9.2f} {diff:10.2e}")


if __name__ == "__main__":
    main()
