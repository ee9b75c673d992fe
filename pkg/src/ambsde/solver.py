"""Regression Monte Carlo solver for anticipated mean-field BSDEs with jumps.

The continuous problem is

    -dY_t = f(t, Y_t, Z_t, Gamma_t, A_t, B_t, C_t, Abar_t, Bbar_t, Cbar_t, law(Pi_t)) dt
            - Z_t dW_t - int K_t(e) N~(de, dt),        t in [0, T]
    (Y, Z, K) = (phi, phi_z, psi)                       on [T, T+M]

with Gamma_t = sum_j K_{t,j} l_j lambda_j, one-point anticipated values
A_t = Y_{t+delta_1(t)}, B_t = Z_{t+delta_2(t)}, C_t = Gamma_{t+delta_3(t)},
their discounted window averages Abar, Bbar, Cbar, and Pi_t = (Y_t, Z_t, Gamma_t).

Laws are uniform empirical measures over the particles.  Conditional
expectations E[. | F_{t_i}] are least-squares projections onto polynomials in
the particle state (W_{t_i}, running weighted compensated jump sum).  The
anticipated and law arguments are frozen from the previous Picard iterate and
the backward sweep is explicit Euler.
"""

from __future__ import annotations

import itertools
import logging
import weakref
from dataclasses import dataclass, field, replace
from typing import Callable, Union

import numpy as np

from .lattice import DelaySpec, TimeGrid, shifted_indices, validate_delays
from .measure import EmpiricalMeasure, dirac, wasserstein2_exact_smallN
from .noise import LevyModel, PathEnsemble
from .norms import beta_norm

__all__ = [
    "DRIVER_ARGS",
    "ANTICIPATED_ARGS",
    "Driver",
    "TerminalData",
    "ProblemSpec",
    "ProblemError",
    "SolverError",
    "SolutionField",
    "CondExpEstimator",
    "PicardConfig",
    "IterationTrace",
    "FrozenInputs",
    "AnticipatedTerms",
    "cond_exp",
    "bsde_step",
    "anticipated_terms",
    "all_anticipated_terms",
    "picard_map",
    "picard_solve",
    "solve_mf_bsde",
    "initial_field",
    "probe_lipschitz",
    "LipschitzProbe",
]

log = logging.getLogger(__name__)

DRIVER_ARGS = ("y", "z", "gamma", "a", "b", "c", "abar", "bbar", "cbar", "law")
ANTICIPATED_ARGS = frozenset({"a", "b", "c", "abar", "bbar", "cbar"})
_RESTRICTED_ALLOWED = frozenset({"y", "z", "gamma", "a", "abar", "law"})


class ProblemError(ValueError):
    """The problem data violates a structural assumption."""


class SolverError(RuntimeError):
    """The numerical scheme produced a non-finite value."""


@dataclass(frozen=True)
class Driver:
    """Vectorized driver ``fn(t, y, z, gamma, a, b, c, abar, bbar, cbar, law)``.

    Per-particle arguments arrive as arrays (``y``, ``gamma``, ``a``, ``c``,
    ``abar``, ``cbar`` of shape ``(n,)``; ``z``, ``b``, ``bbar`` of shape
    ``(n, d)``); ``law`` is an :class:`EmpiricalMeasure`.  ``uses`` names the
    arguments the driver actually reads, which lets the solver skip unused
    anticipated projections.  A ``restricted`` driver is one of the comparison
    class: it reads only ``y, z, gamma, a, abar`` and the one-dimensional law
    of ``Y``.
    """

    fn: Callable[..., np.ndarray]
    uses: frozenset = frozenset(DRIVER_ARGS)
    restricted: bool = False
    name: str = "custom"

    def __post_init__(self):
        uses = frozenset(self.uses)
        bad = uses - set(DRIVER_ARGS)
        if bad:
            raise ValueError(f"unknown driver arguments {sorted(bad)}")
        if self.restricted and not uses <= _RESTRICTED_ALLOWED:
            raise ValueError(
                f"restricted driver {self.name!r} may not use {sorted(uses - _RESTRICTED_ALLOWED)}"
            )
        object.__setattr__(self, "uses", uses)

    @property
    def anticipated(self) -> frozenset:
        return self.uses & ANTICIPATED_ARGS

    @property
    def uses_law(self) -> bool:
        return "law" in self.uses

    def __call__(self, t, y, z, gamma, a, b, c, abar, bbar, cbar, law) -> np.ndarray:
        out = np.asarray(self.fn(t, y, z, gamma, a, b, c, abar, bbar, cbar, law), dtype=float)
        return np.broadcast_to(out, np.shape(y)).astype(float, copy=False)

    def at_zero(self, t: float, d: int, law_dim: int) -> float:
        """f(t, 0, ..., 0, Dirac at 0)."""
        z1 = np.zeros(1)
        zd = np.zeros((1, d))
        return float(self(t, z1, zd, z1, z1, zd, z1, z1, zd, z1, dirac(law_dim))[0])


@dataclass(frozen=True, eq=False)
class TerminalData:
    """Prescribed (Y, Z, K) on the grid points of [T, T+M], per particle.

    Shapes: ``phi (n_window+1, N)``, ``phi_z (n_window+1, N, d)``,
    ``psi (n_window+1, N, m)``.  Row 0 is time T.
    """

    phi: np.ndarray
    phi_z: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        nw1, N = self.phi.shape
        if self.phi_z.shape[:2] != (nw1, N) or self.psi.shape[:2] != (nw1, N):
            raise ProblemError("terminal arrays disagree on (window, particles) shape")
        for a in (self.phi, self.phi_z, self.psi):
            if not np.all(np.isfinite(a)):
                raise ProblemError("terminal data must be finite")
            a.setflags(write=False)

    def check(self, grid: TimeGrid, ensemble: PathEnsemble) -> None:
        want = (grid.n_window + 1, ensemble.n_particles)
        if self.phi.shape != want:
            raise ProblemError(f"terminal phi has shape {self.phi.shape}, need {want}")
        if self.phi_z.shape[2] != ensemble.d or self.psi.shape[2] != ensemble.levy.m:
            raise ProblemError("terminal Z/K dimensions do not match (d, m)")

    def gamma(self, levy: LevyModel) -> np.ndarray:
        if levy.m == 0:
            return np.zeros(self.phi.shape)
        return self.psi @ (levy.l * levy.lam)

    def scaled(self, kappa: float) -> "TerminalData":
        return TerminalData(kappa * self.phi, kappa * self.phi_z, kappa * self.psi)


TerminalSource = Union[TerminalData, Callable[[PathEnsemble], TerminalData]]


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    grid: TimeGrid
    delays: DelaySpec
    levy: LevyModel
    d: int
    driver: Driver
    terminal: TerminalSource
    lipschitz_C: float

    def __post_init__(self):
        if not (self.lipschitz_C >= 0 and np.isfinite(self.lipschitz_C)):
            raise ProblemError("lipschitz_C must be finite and nonnegative")
        if self.d < 1:
            raise ProblemError("Brownian dimension must be >= 1")
        report = validate_delays(self.grid, self.delays)
        if not report.passed:
            raise ProblemError("; ".join(report.messages()) or "delays not certified")

    @property
    def L(self) -> float:
        return validate_delays(self.grid, self.delays).L

    @property
    def law_dim(self) -> int:
        return 1 if self.driver.restricted else 2 + self.d

    def terminal_data(self, ensemble: PathEnsemble) -> TerminalData:
        if ensemble.grid is not self.grid and ensemble.grid != self.grid:
            raise ProblemError("ensemble was simulated on a different grid")
        term = self.terminal if isinstance(self.terminal, TerminalData) else self.terminal(ensemble)
        term.check(self.grid, ensemble)
        return term

    def with_driver(self, driver: Driver, terminal: TerminalSource | None = None) -> "ProblemSpec":
        return replace(self, driver=driver, terminal=self.terminal if terminal is None else terminal)


@dataclass(frozen=True, eq=False)
class SolutionField:
    """Discrete triple on every grid time of [0, T+M], plus the cached Gamma."""

    grid: TimeGrid
    levy: LevyModel
    Y: np.ndarray
    Z: np.ndarray
    K: np.ndarray
    gamma: np.ndarray

    @property
    def n_particles(self) -> int:
        return self.Y.shape[1]

    def minus(self, other: "SolutionField") -> "SolutionField":
        return SolutionField(self.grid, self.levy, self.Y - other.Y, self.Z - other.Z,
                             self.K - other.K, self.gamma - other.gamma)

    def scaled(self, kappa: float) -> "SolutionField":
        return SolutionField(self.grid, self.levy, kappa * self.Y, kappa * self.Z,
                             kappa * self.K, kappa * self.gamma)

    def beta_norm(self, beta: float) -> float:
        return beta_norm(self.Y, self.Z, self.K, beta, self.grid.dt, self.levy.intensities)

    def law_cloud(self, i: int, restricted: bool = False) -> EmpiricalMeasure:
        if restricted:
            return EmpiricalMeasure(self.Y[i])
        return EmpiricalMeasure(np.column_stack([self.Y[i], self.Z[i], self.gamma[i]]))

    def gamma_residual(self) -> float:
        if self.levy.m == 0:
            return float(np.max(np.abs(self.gamma), initial=0.0))
        return float(np.max(np.abs(self.gamma - self.K @ (self.levy.l * self.levy.lam))))


# ---------------------------------------------------------------------------
# conditional expectation by least squares


class _Projection:
    __slots__ = ("mean", "scale", "keep", "solve", "rank")

    def __init__(self, mean, scale, keep, solve, rank):
        self.mean, self.scale, self.keep, self.solve, self.rank = mean, scale, keep, solve, rank


@dataclass
class CondExpEstimator:
    """Polynomial least-squares projection onto the time-t_i particle state.

    The basis is all monomials of total degree <= ``degree`` in the state
    (W_{t_i} coordinates, and the running weighted compensated jump sum when
    the model has marks).  Regressors are centered and scaled; the intercept
    is not penalized, so projections preserve the particle mean exactly.
    Directions of the Gram matrix below ``cutoff`` (relative) are dropped and
    the rest get ridge ``ridge``.
    """

    degree: int = 2
    ridge: float = 1e-8
    cutoff: float = 1e-10
    _cache: weakref.WeakKeyDictionary = field(default_factory=weakref.WeakKeyDictionary,
                                              init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")

    def _raw_features(self, ensemble: PathEnsemble, i: int) -> np.ndarray:
        state = [ensemble.brownian(i)]
        if ensemble.levy.m:
            state.append(ensemble.jump_state(i)[:, None])
        s = np.concatenate(state, axis=1)
        cols = []
        for deg in range(1, self.degree + 1):
            for combo in itertools.combinations_with_replacement(range(s.shape[1]), deg):
                cols.append(np.prod(s[:, combo], axis=1))
        if not cols:
            return np.zeros((s.shape[0], 0))
        return np.column_stack(cols)

    def _projection(self, ensemble: PathEnsemble, i: int) -> _Projection:
        per_ens = self._cache.setdefault(ensemble, {})
        proj = per_ens.get(i)
        if proj is not None:
            return proj
        X = self._raw_features(ensemble, i)
        N = X.shape[0]
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        keep = scale > 1e-12 * np.maximum(1.0, np.abs(mean))
        Xs = (X[:, keep] - mean[keep]) / scale[keep]
        if Xs.shape[1]:
            G = Xs.T @ Xs / N
            w, V = np.linalg.eigh(G)
            ok = w > self.cutoff * max(w.max(), 1e-300)
            solve = (V[:, ok] / (w[ok] + self.ridge)) @ V[:, ok].T
            rank = int(ok.sum())
        else:
            solve = np.zeros((0, 0))
            rank = 0
        proj = _Projection(mean[keep], scale[keep], keep, solve, rank + 1)
        per_ens[i] = proj
        return proj

    def features(self, ensemble: PathEnsemble, i: int) -> np.ndarray:
        """Centered, scaled regressors actually used at step ``i`` (no intercept column)."""
        p = self._projection(ensemble, i)
        X = self._raw_features(ensemble, i)
        return (X[:, p.keep] - p.mean) / p.scale

    def effective_rank(self, ensemble: PathEnsemble, i: int) -> int:
        """Rank of the fitted basis at step ``i``, intercept included."""
        return self._projection(ensemble, i).rank

    def project(self, ensemble: PathEnsemble, i: int, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        squeeze = v.ndim == 1
        if squeeze:
            v = v[:, None]
        N = ensemble.n_particles
        if v.shape[0] != N:
            raise ValueError(f"values have {v.shape[0]} rows, ensemble has {N} particles")
        if not np.all(np.isfinite(v)):
            raise SolverError(f"non-finite regression target at step {i}")
        const = np.all(v == v[:1], axis=0)
        out = v.copy()
        todo = ~const
        if todo.any():
            p = self._projection(ensemble, i)
            vv = v[:, todo]
            mu = vv.mean(axis=0)
            fit = np.broadcast_to(mu, vv.shape).copy()
            if p.solve.size:
                Xs = self.features(ensemble, i)
                coef = p.solve @ (Xs.T @ (vv - mu)) / N
                fit += Xs @ coef
            out[:, todo] = fit
        return out[:, 0] if squeeze else out


def cond_exp(estimator: CondExpEstimator, ensemble: PathEnsemble, i: int, values) -> np.ndarray:
    """Regression estimate of E[values | F_{t_i}], one value per particle."""
    if not 0 <= i <= ensemble.grid.n_total:
        raise IndexError(f"grid index {i} out of range")
    return estimator.project(ensemble, i, values)


# ---------------------------------------------------------------------------
# one backward step


@dataclass(frozen=True, eq=False)
class FrozenInputs:
    """Driver inputs taken from the previous iterate at one grid time.

    ``y`` and ``z`` are only used when the Picard map freezes the state
    variables too (``PicardConfig.freeze_state``).
    """

    gamma: np.ndarray
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    c: np.ndarray | None = None
    abar: np.ndarray | None = None
    bbar: np.ndarray | None = None
    cbar: np.ndarray | None = None
    law: EmpiricalMeasure | None = None
    y: np.ndarray | None = None
    z: np.ndarray | None = None


def _or_zeros(x, shape):
    return np.zeros(shape) if x is None else x


def _eval_driver(driver: Driver, t, i, y, z, gamma, fr: FrozenInputs, law, N, d):
    f = driver(
        t, y, z, gamma,
        _or_zeros(fr.a, (N,)), _or_zeros(fr.b, (N, d)), _or_zeros(fr.c, (N,)),
        _or_zeros(fr.abar, (N,)), _or_zeros(fr.bbar, (N, d)), _or_zeros(fr.cbar, (N,)),
        law,
    )
    bad = ~np.isfinite(f)
    if bad.any():
        p = int(np.argmax(bad))
        raise SolverError(f"driver {driver.name!r} returned {f[p]} at t={t:g} (step {i}), particle {p}")
    return f


def _martingale_parts(ensemble, estimator, i, next_Y, Yhat):
    # covariation regressions; centering by Yhat leaves the conditional
    # expectation unchanged and removes most of the variance
    grid, levy = ensemble.grid, ensemble.levy
    dev = next_Y - Yhat
    targets = [dev[:, None] * ensemble.dW(i) / grid.dt]
    if levy.m:
        targets.append(dev[:, None] * ensemble.compensated_counts(i) / (levy.lam * grid.dt))
    fit = estimator.project(ensemble, i, np.concatenate(targets, axis=1))
    d = ensemble.d
    Z = fit[:, :d]
    K = fit[:, d:]
    gamma = K @ (levy.l * levy.lam) if levy.m else np.zeros(ensemble.n_particles)
    return Z, K, gamma


def bsde_step(problem: ProblemSpec, ensemble: PathEnsemble, estimator: CondExpEstimator,
              i: int, next_Y: np.ndarray, frozen: FrozenInputs, freeze_state: bool = False):
    """One explicit backward Euler step from t_{i+1} to t_i.

    Returns ``(Y_i, Z_i, K_i, gamma_i)``.  The driver sees the projected
    continuation value and the fresh Z_i for (y, z) unless ``freeze_state``,
    and the frozen Gamma, anticipated and law inputs.
    """
    grid = problem.grid
    if not 0 <= i < grid.n_T:
        raise IndexError(f"step index {i} must lie in [0, {grid.n_T})")
    Yhat = estimator.project(ensemble, i, next_Y)
    Z, K, gamma = _martingale_parts(ensemble, estimator, i, next_Y, Yhat)
    y_arg = frozen.y if freeze_state and frozen.y is not None else Yhat
    z_arg = frozen.z if freeze_state and frozen.z is not None else Z
    N, d = ensemble.n_particles, ensemble.d
    law = frozen.law if frozen.law is not None else dirac(problem.law_dim)
    f = _eval_driver(problem.driver, grid.times[i], i, y_arg, z_arg, frozen.gamma, frozen, law, N, d)
    return Yhat + f * grid.dt, Z, K, gamma


# ---------------------------------------------------------------------------
# anticipated terms


@dataclass(frozen=True, eq=False)
class AnticipatedTerms:
    """Projected anticipated inputs for every step i < n_T (missing ones are zero)."""

    a: np.ndarray | None = None
    b: np.ndarray | None = None
    c: np.ndarray | None = None
    abar: np.ndarray | None = None
    bbar: np.ndarray | None = None
    cbar: np.ndarray | None = None

    def at(self, i: int) -> dict:
        return {k: (None if v is None else v[i]) for k, v in self.__dict__.items()}


def _window_weights(K: int, dt: float, rho: float) -> np.ndarray:
    w = np.exp(-rho * dt * np.arange(K + 1)) * dt
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def anticipated_terms(prev: SolutionField, estimator: CondExpEstimator, ensemble: PathEnsemble,
                      delays: DelaySpec, i: int, which=ANTICIPATED_ARGS) -> dict:
    """Anticipated inputs at step ``i`` from the field ``prev``.

    One-point terms read the field at the snapped index ``i + delta(t_i)/dt``;
    averaged terms integrate the discounted field over ``[t_i, t_i + delta]``
    with the trapezoid rule.  All are projected onto F_{t_i}.
    """
    grid = prev.grid
    which = frozenset(which)
    sources = {"a": (1, prev.Y), "b": (2, prev.Z), "c": (3, prev.gamma)}
    blocks, layout = [], []
    N = prev.n_particles
    for name, (k, arr) in sources.items():
        need_pt, need_avg = name in which, name + "bar" in which
        if not (need_pt or need_avg):
            continue
        dv = delays.evaluate(k, grid)
        j = int(shifted_indices(grid, dv)[i])
        if need_pt:
            blocks.append(arr[j].reshape(N, -1))
            layout.append((name, arr[j].ndim))
        if need_avg:
            if j == i:
                avg = np.zeros_like(arr[i])
            else:
                w = _window_weights(j - i, grid.dt, delays.rho)
                avg = np.tensordot(w, arr[i:j + 1], axes=1)
            blocks.append(avg.reshape(N, -1))
            layout.append((name + "bar", arr[i].ndim))
    if not blocks:
        return {}
    fit = estimator.project(ensemble, i, np.concatenate(blocks, axis=1))
    out, col = {}, 0
    for name, ndim in layout:
        width = 1 if ndim == 1 else prev.Z.shape[2]
        piece = fit[:, col:col + width]
        out[name] = piece[:, 0] if ndim == 1 else piece
        col += width
    return out


def all_anticipated_terms(prev: SolutionField, estimator: CondExpEstimator, ensemble: PathEnsemble,
                          delays: DelaySpec, which=ANTICIPATED_ARGS) -> AnticipatedTerms:
    n_T = prev.grid.n_T
    per_step = [anticipated_terms(prev, estimator, ensemble, delays, i, which) for i in range(n_T)]
    stacked = {}
    for name in ANTICIPATED_ARGS:
        if per_step and name in per_step[0]:
            stacked[name] = np.stack([s[name] for s in per_step])
    return AnticipatedTerms(**stacked)


# ---------------------------------------------------------------------------
# Picard iteration


@dataclass(frozen=True)
class PicardConfig:
    """Picard loop settings.

    ``tol`` is relative: the loop stops once the beta-norm of the difference of
    two successive iterates is at most ``tol * max(1, ||current||_beta)``.
    ``freeze_state`` also freezes (y, z) at the previous iterate inside the
    driver, which is the fully frozen map; by default they are taken from the
    current sweep.
    """

    beta: float = 0.0
    tol: float = 1e-12
    max_iter: int = 50
    damping: float = 1.0
    freeze_state: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")


@dataclass
class IterationTrace:
    beta: float
    norms: list[float] = field(default_factory=list)
    converged: bool = False
    divergent: bool = False
    note: str = ""

    @property
    def iterations(self) -> int:
        return len(self.norms)

    @property
    def ratios(self) -> list[float]:
        r = []
        for a, b in zip(self.norms[:-1], self.norms[1:]):
            r.append(b / a if a > 0 else 0.0)
        return r


def initial_field(problem: ProblemSpec, ensemble: PathEnsemble,
                  term: TerminalData | None = None) -> SolutionField:
    """Zero on [0, T), terminal data on [T, T+M]."""
    grid, levy = problem.grid, problem.levy
    term = problem.terminal_data(ensemble) if term is None else term
    n1, N, d, m = grid.n_total + 1, ensemble.n_particles, ensemble.d, levy.m
    Y, Z, K, G = np.zeros((n1, N)), np.zeros((n1, N, d)), np.zeros((n1, N, m)), np.zeros((n1, N))
    _clamp(grid, levy, term, Y, Z, K, G)
    return SolutionField(grid, levy, Y, Z, K, G)


def _clamp(grid, levy, term, Y, Z, K, G):
    s = slice(grid.n_T, grid.n_total + 1)
    Y[s] = term.phi
    Z[s] = term.phi_z
    K[s] = term.psi
    G[s] = term.gamma(levy)


def picard_map(problem: ProblemSpec, ensemble: PathEnsemble, estimator: CondExpEstimator,
               prev: SolutionField, config: PicardConfig = PicardConfig(),
               term: TerminalData | None = None) -> SolutionField:
    """One application of the solution map of the frozen equation."""
    grid, levy, drv = problem.grid, problem.levy, problem.driver
    term = problem.terminal_data(ensemble) if term is None else term
    n1, N, d, m = grid.n_total + 1, ensemble.n_particles, ensemble.d, levy.m
    Y, Z, K, G = np.empty((n1, N)), np.empty((n1, N, d)), np.empty((n1, N, m)), np.empty((n1, N))
    _clamp(grid, levy, term, Y, Z, K, G)
    antic = (all_anticipated_terms(prev, estimator, ensemble, problem.delays, drv.anticipated)
             if drv.anticipated else AnticipatedTerms())
    for i in range(grid.n_T - 1, -1, -1):
        law = prev.law_cloud(i, drv.restricted) if drv.uses_law else None
        frozen = FrozenInputs(gamma=prev.gamma[i], law=law, y=prev.Y[i], z=prev.Z[i], **antic.at(i))
        Y[i], Z[i], K[i], G[i] = bsde_step(problem, ensemble, estimator, i, Y[i + 1], frozen,
                                           config.freeze_state)
    return SolutionField(grid, levy, Y, Z, K, G)


def _damp(grid, levy, old: SolutionField, new: SolutionField, theta: float) -> SolutionField:
    if theta == 1.0:
        return new
    s = slice(0, grid.n_T)
    Y, Z, K = new.Y.copy(), new.Z.copy(), new.K.copy()
    Y[s] = (1 - theta) * old.Y[s] + theta * new.Y[s]
    Z[s] = (1 - theta) * old.Z[s] + theta * new.Z[s]
    K[s] = (1 - theta) * old.K[s] + theta * new.K[s]
    G = new.gamma.copy()
    G[s] = K[s] @ (levy.l * levy.lam) if levy.m else 0.0
    return SolutionField(grid, levy, Y, Z, K, G)


def picard_solve(problem: ProblemSpec, ensemble: PathEnsemble, estimator: CondExpEstimator,
                 config: PicardConfig = PicardConfig()):
    """Iterate the Picard map from the zero field; returns ``(field, trace)``.

    Non-convergence is reported in the trace (``divergent=True``), not raised.
    """
    term = problem.terminal_data(ensemble)
    cur = initial_field(problem, ensemble, term)
    trace = IterationTrace(beta=config.beta)
    for k in range(config.max_iter):
        new = picard_map(problem, ensemble, estimator, cur, config, term)
        new = _damp(problem.grid, problem.levy, cur, new, config.damping)
        diff = new.minus(cur).beta_norm(config.beta)
        size = new.beta_norm(config.beta)
        trace.norms.append(diff)
        cur = new
        if not (np.isfinite(diff) and np.isfinite(size)):
            trace.divergent = True
            trace.note = f"non-finite norm at iteration {k + 1}"
            break
        if diff <= config.tol * max(1.0, size):
            trace.converged = True
            break
    else:
        trace.divergent = True
        trace.note = f"no convergence within {config.max_iter} iterations"
    log.debug("picard: %d iterations, converged=%s, last=%g", trace.iterations,
              trace.converged, trace.norms[-1])
    return cur, trace


def solve_mf_bsde(problem: ProblemSpec, ensemble: PathEnsemble, estimator: CondExpEstimator,
                  frozen: AnticipatedTerms | None = None, inner: int = 2) -> SolutionField:
    """Single backward sweep for a driver of the form f(t, y, z, gamma, law(Y)).

    The law of Y at t_i is refreshed inside the step: the driver is first
    evaluated against the cloud of projected continuation values and then
    ``inner - 1`` more times against the cloud of the updated Y_i.  Anticipated
    inputs, if the driver reads any, must be supplied via ``frozen`` (they are
    exogenous here).
    """
    grid, levy, drv = problem.grid, problem.levy, problem.driver
    if drv.uses_law and not drv.restricted:
        raise ProblemError("solve_mf_bsde needs a driver of the restricted (law of Y) form")
    if drv.anticipated and frozen is None:
        raise ProblemError(f"driver {drv.name!r} reads anticipated inputs; pass them frozen")
    frozen = AnticipatedTerms() if frozen is None else frozen
    term = problem.terminal_data(ensemble)
    n1, N, d, m = grid.n_total + 1, ensemble.n_particles, ensemble.d, levy.m
    Y, Z, K, G = np.empty((n1, N)), np.empty((n1, N, d)), np.empty((n1, N, m)), np.empty((n1, N))
    _clamp(grid, levy, term, Y, Z, K, G)
    for i in range(grid.n_T - 1, -1, -1):
        Yhat = estimator.project(ensemble, i, Y[i + 1])
        Z[i], K[i], G[i] = _martingale_parts(ensemble, estimator, i, Y[i + 1], Yhat)
        fr = FrozenInputs(gamma=G[i], **frozen.at(i))
        cloud = Yhat
        for _ in range(max(1, inner)):
            law = EmpiricalMeasure(cloud) if drv.uses_law else None
            f = _eval_driver(drv, grid.times[i], i, Yhat, Z[i], G[i], fr, law, N, d)
            Y[i] = Yhat + f * grid.dt
            cloud = Y[i]
    return SolutionField(grid, levy, Y, Z, K, G)


# ---------------------------------------------------------------------------
# Lipschitz probing


@dataclass(frozen=True)
class LipschitzProbe:
    n_probes: int
    fraction_ok: float
    worst_ratio: float

    @property
    def passed(self) -> bool:
        return self.fraction_ok >= 0.99


def probe_lipschitz(driver: Driver, C: float, d: int, t_max: float = 1.0,
                    n_probes: int = 400, seed: int = 0, law_points: int = 6) -> LipschitzProbe:
    """Randomized check of |f(x) - f(x')| <= 1.05 C * (sum of argument distances).

    Laws are random clouds of ``law_points`` samples; their distance is the
    exact small-N W2.
    """
    rng = np.random.default_rng(seed)
    q = 1 if driver.restricted else 2 + d
    ok, worst = 0, 0.0
    for _ in range(n_probes):
        t = float(rng.uniform(0, t_max))
        scale = 10.0 ** rng.uniform(-3, 1)

        def draw():
            return {
                "y": rng.normal(size=1) * 2, "z": rng.normal(size=(1, d)) * 2,
                "gamma": rng.normal(size=1), "a": rng.normal(size=1) * 2,
                "b": rng.normal(size=(1, d)), "c": rng.normal(size=1),
                "abar": rng.normal(size=1), "bbar": rng.normal(size=(1, d)),
                "cbar": rng.normal(size=1),
                "law": rng.normal(size=(law_points, q)) + rng.normal(size=q),
            }

        x = draw()
        # half the probes move a single argument, so a steep direction is not
        # diluted by the distances of the others
        if rng.random() < 0.5:
            only = DRIVER_ARGS[int(rng.integers(len(DRIVER_ARGS)))]
            moved = {k: k == only for k in x}
        else:
            moved = {k: rng.random() < 0.7 for k in x}
        x2 = {k: (v + scale * rng.normal(size=v.shape) if moved[k] else v.copy()) for k, v in x.items()}
        dist = sum(float(np.sum(np.abs(x[k] - x2[k]))) if k not in ("z", "b", "bbar")
                   else float(np.linalg.norm(x[k] - x2[k]))
                   for k in DRIVER_ARGS if k != "law")
        mu, nu = EmpiricalMeasure(x["law"]), EmpiricalMeasure(x2["law"])
        dist += wasserstein2_exact_smallN(mu, nu)
        f1 = driver(t, *(x[k] for k in DRIVER_ARGS[:-1]), mu)[0]
        f2 = driver(t, *(x2[k] for k in DRIVER_ARGS[:-1]), nu)[0]
        gap = abs(f1 - f2)
        if gap <= 1.05 * C * dist + 1e-12:
            ok += 1
        if dist > 0:
            worst = max(worst, gap / dist)
    return LipschitzProbe(n_probes, ok / n_probes, worst)
