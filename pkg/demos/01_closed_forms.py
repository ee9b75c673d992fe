"""Closed-form checks of the Picard solver.

Solves three problems with known answers on T = 1, M = 0.25, dt = 1/200
and prints the worst pathwise error against the exact value:

* zero driver, constant terminal 1.5: Y is constant;
* constant driver f = 2, terminal 0: Y_t = 2 (1 - t);
* anticipated one-point driver f = E[Y_{t+0.25} | F_t], terminal 1, where
  the exact solution is a piecewise polynomial built by stepping back
  from T in blocks of length 0.25.

Run with ``python demos/01_closed_forms.py``.
"""

import numpy as np
from numpy.polynomial import Polynomial

from ambsde import (CondExpEstimator, DelaySpec, LevyModel, ProblemSpec, build_grid,
                    make_driver, make_terminal, picard_solve, simulate_ensemble)


def stepped_solution(T, delta, t):
    """y(t) = y(end) + int_t^end later(s + delta) ds on each block [end - delta, end]."""
    pieces, end, later = [], T, Polynomial([1.0])  # the terminal value beyond T
    while end > 1e-12:
        anti = later(Polynomial([delta, 1.0])).integ()
        cur = later(end + delta) if not pieces else pieces[-1][2](end)
        poly = cur + anti(end) - anti
        pieces.append((max(end - delta, 0.0), end, poly))
        later, end = poly, end - delta
    out = np.empty_like(t)
    for start, stop, poly in pieces:
        m = (t >= start - 1e-12) & (t <= stop + 1e-12)
        out[m] = poly(t[m])
    return out


def main():
    g = build_grid(1.0, 0.25, 250)
    none = LevyModel.none()
    ens = simulate_ensemble(g, none, 1, 2000, seed=1)
    est = CondExpEstimator()
    t = g.times[: g.n_T + 1]

    cases = [
        ("zero driver", make_driver("zero")[0], make_terminal("constant", {"value": 1.5}),
         np.full_like(t, 1.5)),
        ("constant driver", make_driver("constant", {"c": 2.0})[0],
         make_terminal("constant", {"value": 0.0}), 2.0 * (1.0 - t)),
    ]
    for name, drv, term, exact in cases:
        p = ProblemSpec(g, DelaySpec.constant(0.25), none, 1, drv, term, 1.0)
        sol, trace = picard_solve(p, ens, est)
        err = np.max(np.abs(sol.Y[: g.n_T + 1] - exact[:, None]))
        print(f"{name:>18}: {trace.iterations} iterations, max error {err:.2e}")

    drv, _ = make_driver("anticipated-one-point", {"c_a": 1.0})
    p = ProblemSpec(g, DelaySpec.constant(0.25), none, 1, drv, make_terminal("constant"), 1.0)
    sol, trace = picard_solve(p, ens, est)
    exact = stepped_solution(1.0, 0.25, t)
    err = np.max(np.abs(sol.Y[: g.n_T + 1, 0] - exact))
    print(f"{'anticipated':>18}: {trace.iterations} iterations, Y_0 = {sol.Y[0, 0]:.5f}, "
          f"exact {exact[0]:.5f}, max error {err:.2e} (5 dt = {5 * g.dt:.3f})")


if __name__ == "__main__":
    main()
