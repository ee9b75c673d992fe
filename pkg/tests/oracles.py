"""Reference solutions computed independently of the package."""

import math

import numpy as np
from numpy.polynomial import Polynomial


def anticipated_one_point(T, delta, t, c_a=1.0, c0=0.0, terminal=1.0):
    """Solution of y'(t) = -(c_a y(t + delta) + c0), y = terminal on [T, T + delta].

    Method of steps in time-to-maturity u = T - t: on band k the solution is
    a polynomial obtained by integrating the previous band exactly.
    """
    t = np.asarray(t, dtype=float)
    u = T - t
    n_bands = int(math.ceil(max(float(np.max(u)), 0.0) / delta)) + 1
    # band k covers u in [k delta, (k+1) delta]; polys[k] is in the variable u
    polys = []
    prev_end = terminal
    prev = Polynomial([terminal])  # value in the window (u <= 0), constant
    for k in range(n_bands):
        # integrand at time-to-maturity v is c_a y(v - delta) + c0
        shift = Polynomial([-delta, 1.0])
        integrand = c_a * (prev(shift) if k > 0 else Polynomial([terminal])) + c0
        anti = integrand.integ()
        lo = k * delta
        poly = prev_end + anti - anti(lo)
        polys.append(poly)
        prev_end = poly((k + 1) * delta)
        prev = poly
    out = np.empty_like(u)
    for idx, uu in np.ndenumerate(u):
        if uu <= 0:
            out[idx] = terminal
            continue
        k = min(int(uu // delta), n_bands - 1)
        if k > 0 and abs(uu - k * delta) < 1e-12:
            k -= 1
        out[idx] = polys[k](uu)
    return out


def brute_force_w2(x, y):
    import itertools
    x = np.asarray(x, float).reshape(len(x), -1)
    y = np.asarray(y, float).reshape(len(y), -1)
    best = math.inf
    for perm in itertools.permutations(range(len(y))):
        best = min(best, float(np.sum((x - y[list(perm)]) ** 2)))
    return math.sqrt(best / len(x))
