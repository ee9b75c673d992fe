"""Time discretization of [0, T+M] and anticipation delays.

The grid is uniform; both the horizon ``T`` and the end of the anticipation
window ``T + M`` must fall exactly on grid points.  Delays are snapped to the
nearest grid point (ties go up), so anticipated values are always read off the
grid and never interpolated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "GridError",
    "TimeGrid",
    "build_grid",
    "DelaySpec",
    "DelayCheck",
    "ValidationReport",
    "validate_delays",
    "shifted_index",
    "shifted_indices",
]

# Tolerance (in units of the grid index) for "T lies on the grid".  A handful
# of ulps of the quotient T/dt, not a modelling tolerance.
_ULP_FACTOR = 8.0


class GridError(ValueError):
    """Grid parameters are inconsistent."""


def _grid_multiple(x: float, dt: float) -> int | None:
    q = x / dt
    k = round(q)
    if abs(q - k) <= _ULP_FACTOR * np.finfo(float).eps * max(1.0, abs(q)):
        return int(k)
    return None


@dataclass(frozen=True)
class TimeGrid:
    T: float
    M: float
    dt: float
    n_T: int
    n_total: int
    times: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        self.times.setflags(write=False)

    @property
    def n_window(self) -> int:
        """Number of steps in the anticipation window [T, T+M]."""
        return self.n_total - self.n_T

    def index_of(self, t: float) -> int:
        k = _grid_multiple(t, self.dt)
        if k is None or not 0 <= k <= self.n_total:
            raise GridError(f"time {t!r} is not a grid point")
        return k

    def time_of(self, i: int) -> float:
        if not 0 <= i <= self.n_total:
            raise IndexError(f"grid index {i} outside [0, {self.n_total}]")
        return float(self.times[i])


def build_grid(T: float, M: float, n_steps_total: int) -> TimeGrid:
    """Uniform grid on [0, T+M] with ``n_steps_total`` steps.

    Raises
    ------
    GridError
        if ``T`` is not an exact multiple of ``dt = (T+M)/n_steps_total``.
    """
    if not T > 0:
        raise GridError("T must be positive")
    if not M >= 0:
        raise GridError("M must be nonnegative")
    if int(n_steps_total) != n_steps_total or n_steps_total < 2:
        raise GridError("n_steps_total must be an integer >= 2")
    n_total = int(n_steps_total)
    dt = (T + M) / n_total
    n_T = _grid_multiple(T, dt)
    if n_T is None:
        raise GridError(f"T={T} is not on the grid with dt={dt}")
    if n_T < 1:
        raise GridError("grid too coarse: T maps to index 0")
    times = np.arange(n_total + 1, dtype=float) * dt
    times[n_T] = T
    times[n_total] = T + M
    return TimeGrid(T=float(T), M=float(M), dt=dt, n_T=n_T, n_total=n_total, times=times)


@dataclass(frozen=True)
class DelaySpec:
    """Three delay functions delta_1 (for Y), delta_2 (Z), delta_3 (jump term).

    ``kind`` selects the family:

    * ``"constant"``: ``params[i] = (c,)``, delta_i(t) = c
    * ``"affine"``: ``params[i] = (a, b)``, delta_i(t) = a + b t
    * ``"tabulated"``: ``tables[i]`` holds delta_i on the grid points of [0, T]
      and ``L`` must be declared.
    """

    kind: str
    params: tuple[tuple[float, ...], ...] = ((0.0,), (0.0,), (0.0,))
    tables: tuple[np.ndarray, ...] | None = None
    rho: float = 1.0
    L: float | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "affine", "tabulated"):
            raise ValueError(f"unknown delay kind {self.kind!r}")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.kind == "tabulated":
            if self.tables is None or len(self.tables) != 3:
                raise ValueError("tabulated delays need three tables")
            if self.L is None:
                raise ValueError("tabulated delays need a declared L")
        else:
            want = 1 if self.kind == "constant" else 2
            if len(self.params) != 3 or any(len(p) != want for p in self.params):
                raise ValueError(f"{self.kind} delays need three {want}-tuples")

    @classmethod
    def constant(cls, d1: float, d2: float | None = None, d3: float | None = None, rho: float = 1.0):
        d2 = d1 if d2 is None else d2
        d3 = d1 if d3 is None else d3
        return cls("constant", ((float(d1),), (float(d2),), (float(d3),)), rho=rho)

    @classmethod
    def affine(cls, ab1: Sequence[float], ab2=None, ab3=None, rho: float = 1.0):
        ab2 = ab1 if ab2 is None else ab2
        ab3 = ab1 if ab3 is None else ab3
        return cls("affine", tuple(tuple(float(v) for v in ab) for ab in (ab1, ab2, ab3)), rho=rho)

    @classmethod
    def tabulated(cls, t1, t2, t3, L: float, rho: float = 1.0):
        tabs = tuple(np.asarray(t, dtype=float) for t in (t1, t2, t3))
        return cls("tabulated", tables=tabs, rho=rho, L=float(L))

    def evaluate(self, which: int, grid: TimeGrid) -> np.ndarray:
        """delta_which on the grid points of [0, T]; ``which`` in {1, 2, 3}."""
        if which not in (1, 2, 3):
            raise ValueError("which must be 1, 2 or 3")
        t = grid.times[: grid.n_T + 1]
        if self.kind == "constant":
            return np.full(t.shape, self.params[which - 1][0])
        if self.kind == "affine":
            a, b = self.params[which - 1]
            return a + b * t
        tab = self.tables[which - 1]
        if tab.shape != t.shape:
            raise ValueError(
                f"delay table {which} has {tab.shape[0]} entries, grid [0,T] has {t.shape[0]}"
            )
        return tab

    def certified_L(self, which: int) -> float | None:
        """Substitution constant for delta_which, or None if not certifiable."""
        if self.kind == "constant":
            return 1.0
        if self.kind == "affine":
            b = self.params[which - 1][1]
            return 1.0 / (1.0 + b) if b > -1.0 else None
        return self.L


@dataclass(frozen=True)
class DelayCheck:
    which: int
    max_excess: float
    min_delay: float
    L: float | None
    passed: bool
    message: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[DelayCheck, ...]
    L: float | None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks) and self.L is not None

    def messages(self) -> list[str]:
        return [c.message for c in self.checks if c.message]


def _spot_check_L(grid: TimeGrid, shift: np.ndarray, L: float, rng_seed: int = 0, n_funcs: int = 32) -> bool:
    # discrete form: sum_{i<n_T} G(shift(i)) dt <= L sum_{i<n_total} G(i) dt,
    # probed on indicator bumps and random nonnegative functions
    n = grid.n_total + 1
    rng = np.random.default_rng(rng_seed)
    probes = [np.eye(n)[k] for k in range(n)]
    probes += [rng.exponential(size=n) for _ in range(n_funcs)]
    for g in probes:
        lhs = g[shift[: grid.n_T]].sum()
        rhs = L * g[: grid.n_total].sum()
        if lhs > rhs * (1 + 1e-12) + 1e-300:
            return False
    return True


def validate_delays(grid: TimeGrid, delays: DelaySpec) -> ValidationReport:
    """Check the anticipation bound t + delta_i(t) <= T + M and certify L.

    Violations are reported, never raised.
    """
    end = grid.T + grid.M
    t = grid.times[: grid.n_T + 1]
    checks = []
    for which in (1, 2, 3):
        try:
            dv = delays.evaluate(which, grid)
        except ValueError as exc:
            checks.append(DelayCheck(which, math.inf, math.nan, None, False, str(exc)))
            continue
        excess = float(np.max(t + dv - end))
        min_delay = float(np.min(dv))
        L = delays.certified_L(which)
        msgs = []
        # a few ulps of slack so that e.g. 1 + 0.2 vs 1.2 is not a violation
        if excess > 4 * np.finfo(float).eps * max(1.0, end):
            msgs.append(
                f"delta_{which}: anticipation bound violated, t + delta(t) exceeds "
                f"T + M = {end:g} by {excess:.6g}"
            )
        if min_delay < 0:
            msgs.append(f"delta_{which}: negative delay {min_delay:.6g}")
        if L is None:
            msgs.append(f"delta_{which}: no substitution constant L can be certified "
                        f"(affine slope must exceed -1)")
        elif delays.kind == "tabulated" and not msgs:
            shift = np.array([shifted_index(grid, i, dv) for i in range(grid.n_T + 1)])
            if not _spot_check_L(grid, shift, L):
                msgs.append(f"delta_{which}: declared L={L:g} fails the discrete spot check")
        checks.append(DelayCheck(which, excess, min_delay, L, not msgs, "; ".join(msgs)))
    Ls = [c.L for c in checks]
    L = None if any(v is None for v in Ls) else max(Ls)
    if L is not None and delays.L is not None and delays.kind != "tabulated" and delays.L < L:
        checks.append(DelayCheck(0, 0.0, 0.0, delays.L, False,
                                 f"declared L={delays.L:g} below certified {L:g}"))
    return ValidationReport(tuple(checks), L)


def shifted_index(grid: TimeGrid, i: int, delta) -> int:
    """Grid index of ``t_i + delta(t_i)``, rounded to the nearest point (ties up).

    ``delta`` is a scalar, or an array of delta values on the grid of [0, T].
    """
    if not 0 <= i <= grid.n_T:
        raise IndexError(f"index {i} beyond index_of(T)={grid.n_T}")
    dv = float(delta[i]) if np.ndim(delta) else float(delta)
    # the 1e-9 nudge makes exact half-steps round up despite representation error
    k = i + math.floor(dv / grid.dt + 0.5 + 1e-9)
    return min(max(k, i), grid.n_total)


def shifted_indices(grid: TimeGrid, delta) -> np.ndarray:
    """Vectorized :func:`shifted_index` over all i <= index_of(T)."""
    dv = np.broadcast_to(np.asarray(delta, dtype=float), (grid.n_T + 1,))
    i = np.arange(grid.n_T + 1)
    k = i + np.floor(dv / grid.dt + 0.5 + 1e-9).astype(int)
    return np.clip(k, i, grid.n_total)
