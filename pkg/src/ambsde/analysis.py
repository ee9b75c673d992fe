"""Verification instruments: weighted norms, beta selection, contraction,
a priori and comparison diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import DelaySpec
from .measure import EmpiricalMeasure, LiftedFunction, lions_derivative_estimate
from .noise import LevyModel, PathEnsemble
from .norms import beta_norm as _beta_norm
from .solver import (
    DRIVER_ARGS,
    CondExpEstimator,
    Driver,
    IterationTrace,
    PicardConfig,
    ProblemError,
    ProblemSpec,
    SolutionField,
    TerminalSource,
    all_anticipated_terms,
    picard_solve,
    solve_mf_bsde,
)

__all__ = [
    "beta_norm",
    "BetaChoice",
    "select_beta",
    "select_beta_comparison",
    "ContractionReport",
    "contraction_report",
    "AprioriReport",
    "apriori_check",
    "calibrate_L0",
    "ComparisonProblem",
    "HypothesisReport",
    "check_hypotheses",
    "ViolationReport",
    "compare_direct",
    "tol_band",
    "MonotoneReport",
    "monotone_iteration",
]

BETA_CAP = 200.0


def beta_norm(field_diff: SolutionField, beta: float, grid=None) -> float:
    """Weighted norm of a solution-shaped field on [0, T+M]; monotone in ``beta``."""
    g = field_diff.grid if grid is None else grid
    return _beta_norm(field_diff.Y, field_diff.Z, field_diff.K, beta, g.dt, field_diff.levy.intensities)


# ---------------------------------------------------------------------------
# beta selection


@dataclass(frozen=True)
class BetaChoice:
    beta: float | None
    solvable: bool
    residual: float
    curve: tuple[np.ndarray, np.ndarray] = field(repr=False, default=(np.empty(0), np.empty(0)))

    def or_fallback(self, fallback: float) -> float:
        return self.beta if self.solvable else float(fallback)


def horizon_constant(rho: float, T: float, M: float) -> float:
    """(1 - exp(-2 rho (T+M))) / (2 rho)."""
    return -math.expm1(-2.0 * rho * (T + M)) / (2.0 * rho)


def _smallest_fixed_point(rhs, lo: float, cap: float, n_scan: int = 4001) -> BetaChoice:
    betas = np.linspace(lo, cap, n_scan)
    with np.errstate(over="ignore"):
        g = betas - np.array([rhs(b) for b in betas])
    curve = (betas, g)
    if g[0] == 0.0:
        return BetaChoice(lo, True, 0.0, curve)
    hits = np.nonzero(g >= 0)[0]
    if hits.size == 0:
        return BetaChoice(None, False, float(np.nanmax(g)), curve)
    k = int(hits[0])
    a, b = betas[k - 1], betas[k]
    ga = g[k - 1]
    for _ in range(200):
        mid = 0.5 * (a + b)
        if mid in (a, b):
            break
        gm = mid - rhs(mid)
        if gm == 0.0:
            a = b = mid
            break
        if (gm < 0) == (ga < 0):
            a, ga = mid, gm
        else:
            b = mid
    root = b
    return BetaChoice(float(root), True, float(root - rhs(root)), curve)


def select_beta(C: float, L: float, levy: LevyModel | float, rho: float, T: float, M: float,
                beta_cap: float = BETA_CAP) -> BetaChoice:
    """Smallest beta in [2, beta_cap] with beta = 40 C^2 (2 + (1 + I2)(L + C_TM e^{beta T} T)) + 2.

    ``levy`` may be a :class:`LevyModel` or the value of I2 directly.  The
    equation is implicit in beta; when it has no root below the cap the
    result is flagged unsolvable and carries the g(beta) = beta - RHS curve.
    """
    I2 = levy.I2 if isinstance(levy, LevyModel) else float(levy)
    ctm = horizon_constant(rho, T, M)

    def rhs(b):
        return 40.0 * C * C * (2.0 + (1.0 + I2) * (L + ctm * math.exp(b * T) * T)) + 2.0

    if T == 0 or C == 0:
        val = rhs(0.0)
        ok = val <= beta_cap
        return BetaChoice(val if ok else None, ok, 0.0)
    return _smallest_fixed_point(rhs, 2.0, beta_cap)


def select_beta_comparison(C: float, L: float, levy: LevyModel, rho: float, T: float, M: float,
                           beta_cap: float = BETA_CAP) -> BetaChoice:
    """Weight for the monotone chain: beta = 36 C^2 (2 + m1 + L + C_TM T e^{beta T}) + 3,
    with m1 = sum_j min(1, e_j^2) lambda_j."""
    m1 = levy.small_jump_mass
    ctm = horizon_constant(rho, T, M)

    def rhs(b):
        return 36.0 * C * C * (2.0 + m1 + L + ctm * T * math.exp(b * T)) + 3.0

    if T == 0 or C == 0:
        val = rhs(0.0)
        ok = val <= beta_cap
        return BetaChoice(val if ok else None, ok, 0.0)
    return _smallest_fixed_point(rhs, 3.0, beta_cap)


# ---------------------------------------------------------------------------
# contraction


@dataclass(frozen=True)
class ContractionReport:
    ratios: tuple[float, ...]
    geometric_mean: float
    monotone: bool
    verdict: str
    note: str = ""


def _geo_mean(r) -> float:
    r = np.asarray(r, dtype=float)
    if r.size == 0:
        return math.nan
    if np.any(r <= 0):
        return 0.0
    return float(np.exp(np.mean(np.log(r))))


def contraction_report(trace: IterationTrace | list, auto_beta: bool = True,
                       threshold: float = 0.6) -> ContractionReport:
    """Successive-difference ratios of a Picard trace and a verdict.

    With ``auto_beta`` (beta chosen by :func:`select_beta`) the verdict is
    PASS iff the geometric-mean ratio is at most ``threshold``; otherwise the
    ratio is only reported (verdict REPORT).
    """
    norms = list(trace.norms if isinstance(trace, IterationTrace) else trace)
    for k, v in enumerate(norms):
        if v == 0.0:
            ratios = tuple(b / a for a, b in zip(norms[:k], norms[1:k + 1]))
            return ContractionReport(ratios, 0.0, True, "PASS",
                                     f"exact fixed point after {k} step{'s' if k != 1 else ''}")
    if len(norms) < 3:
        raise ValueError("contraction_report needs at least 3 iterations")
    ratios = tuple(b / a for a, b in zip(norms[:-1], norms[1:]))
    gm = _geo_mean(ratios)
    monotone = all(r < 1.0 for r in ratios)
    if auto_beta:
        verdict = "PASS" if gm <= threshold else "FAIL"
    else:
        verdict = "REPORT"
    return ContractionReport(ratios, gm, monotone, verdict)


# ---------------------------------------------------------------------------
# a priori estimate


@dataclass(frozen=True)
class AprioriReport:
    lhs: float
    rhs_core: float
    ratio: float
    anomaly: bool = False


def apriori_check(problem: ProblemSpec, solution: SolutionField, zero_tol: float = 1e-14) -> AprioriReport:
    """Both sides of the a priori bound at t = 0, without the constant L0.

    lhs: E[max_{i <= n_T} |Y_i|^2 + sum_{i < n_T} (|Z_i|^2 + sum_j K_ij^2 lambda_j) dt]
    rhs: E[|phi_T|^2 + sum over the window (|phi|^2 + |phi_z|^2 + sum_j psi_j^2 lambda_j) dt]
         + sum_{i < n_T} f(t_i, 0, ..., 0, Dirac_0)^2 dt
    """
    g, lam = problem.grid, problem.levy.lam
    nT, dt = g.n_T, g.dt
    Y, Z, K = solution.Y, solution.Z, solution.K

    def energy(sl):
        e = np.sum(Z[sl] ** 2, axis=2)
        if lam.size:
            e = e + K[sl] ** 2 @ lam
        return e

    sup = np.max(Y[: nT + 1] ** 2, axis=0)
    lhs = float(np.mean(sup + np.sum(energy(slice(0, nT)), axis=0) * dt))
    window = slice(nT, g.n_total)
    term = Y[nT] ** 2 + np.sum(Y[window] ** 2 + energy(window), axis=0) * dt
    f0 = np.array([problem.driver.at_zero(g.times[i], problem.d, problem.law_dim) for i in range(nT)])
    rhs = float(np.mean(term) + np.sum(f0**2) * dt)
    if rhs > 0:
        ratio = lhs / rhs
        anomaly = False
    else:
        ratio = 0.0 if lhs <= zero_tol else math.inf
        anomaly = lhs > zero_tol
    return AprioriReport(lhs, rhs, ratio, anomaly)


def calibrate_L0(reports) -> float:
    """Empirical constant: the largest lhs/rhs ratio over a training family."""
    return max(r.ratio for r in reports if r.rhs_core > 0)


# ---------------------------------------------------------------------------
# comparison


@dataclass(frozen=True, eq=False)
class ComparisonProblem:
    """Two drivers and terminal data sharing one grid, delay spec and noise model."""

    base: ProblemSpec
    f1: Driver
    f2: Driver
    terminal1: TerminalSource
    terminal2: TerminalSource

    @property
    def C(self) -> float:
        return self.base.lipschitz_C

    def problem1(self) -> ProblemSpec:
        return self.base.with_driver(self.f1, self.terminal1)

    def problem2(self) -> ProblemSpec:
        return self.base.with_driver(self.f2, self.terminal2)


@dataclass(frozen=True)
class HypothesisReport:
    driver_order_ok: bool
    terminal_order_ok: bool
    dk_range: tuple[float, float]
    dnu_range: tuple[float, float]
    f2_monotone_ok: bool
    bounded_ok: bool
    strict_ok: bool

    @property
    def ordering_ok(self) -> bool:
        return self.driver_order_ok and self.terminal_order_ok


def _random_args(rng, d, q, law_points=8):
    return {
        "y": rng.normal(size=1) * 2, "z": rng.normal(size=(1, d)), "gamma": rng.normal(size=1),
        "a": rng.normal(size=1) * 2, "b": rng.normal(size=(1, d)), "c": rng.normal(size=1),
        "abar": rng.normal(size=1), "bbar": rng.normal(size=(1, d)), "cbar": rng.normal(size=1),
        "law": rng.normal(size=(law_points, q)) + rng.normal(size=q),
    }


def _call(drv: Driver, t, args, law=None):
    law = EmpiricalMeasure(args["law"]) if law is None else law
    return float(drv(t, *(args[k] for k in DRIVER_ARGS[:-1]), law)[0])


def check_hypotheses(problem: ComparisonProblem, ensemble: PathEnsemble,
                     n_probes: int = 200, seed: int = 0) -> HypothesisReport:
    """Probe the ordering and monotonicity assumptions of the comparison results.

    Driver ordering f1 >= f2 is checked with zero tolerance on random
    arguments, terminal ordering at every (time, particle) of the window.  The
    partial derivatives of f1 in gamma and in the law are estimated by finite
    differences (the latter through a one-particle perturbation) and must lie
    in [0, 1.05 C]; ``strict_ok`` additionally records strict positivity.
    """
    b = problem.base
    rng = np.random.default_rng(seed)
    d = b.d
    q1 = 1 if problem.f1.restricted else 2 + d
    T = b.grid.T
    order_ok = True
    dks, dnus = [], []
    mono_ok = True
    for _ in range(n_probes):
        t = float(rng.uniform(0, T))
        args = _random_args(rng, d, q1)
        if _call(problem.f1, t, args) < _call(problem.f2, t, args):
            order_ok = False
        h = 1e-5 * (1 + abs(args["gamma"][0]))
        up = dict(args, gamma=args["gamma"] + h)
        dn = dict(args, gamma=args["gamma"] - h)
        dks.append((_call(problem.f1, t, up) - _call(problem.f1, t, dn)) / (2 * h))
        if problem.f1.uses_law:
            phi = LiftedFunction(lambda mu, t=t, args=args: _call(problem.f1, t, args, mu))
            p = int(rng.integers(args["law"].shape[0]))
            dnus.append(float(lions_derivative_estimate(phi, EmpiricalMeasure(args["law"]), p)[0]))
        else:
            dnus.append(0.0)
        # f2 must be nondecreasing in the anticipated arguments
        if problem.f2.anticipated:
            hi = dict(args)
            for k in problem.f2.anticipated:
                hi[k] = args[k] + np.abs(rng.normal(size=args[k].shape))
            if _call(problem.f2, t, hi) < _call(problem.f2, t, args):
                mono_ok = False
    t1 = b.with_driver(problem.f1, problem.terminal1).terminal_data(ensemble)
    t2 = b.with_driver(problem.f2, problem.terminal2).terminal_data(ensemble)
    term_ok = bool(np.all(t1.phi >= t2.phi))
    dk = (float(min(dks)), float(max(dks)))
    dnu = (float(min(dnus)), float(max(dnus)))
    slack = 1e-6
    lim = 1.05 * b.lipschitz_C
    bounded = dk[0] >= -slack and dk[1] <= lim and dnu[0] >= -slack and dnu[1] <= lim
    strict = bounded and dk[0] > slack and dnu[0] > slack
    return HypothesisReport(order_ok, term_ok, dk, dnu, mono_ok, bounded, strict)


def tol_band(dt: float, N: int, scale: float) -> float:
    """Noise allowance for ordering verdicts: 5 (dt + N^-1/2) scale."""
    return 5.0 * (dt + N ** -0.5) * scale


def _rms(Y):
    return float(np.sqrt(np.mean(Y**2)))


@dataclass(frozen=True)
class ViolationReport:
    fraction: float
    tol_band: float
    verdict: str
    times: np.ndarray = field(repr=False)
    mean_gap: np.ndarray = field(repr=False)
    min_gap: np.ndarray = field(repr=False)
    violations: np.ndarray = field(repr=False)
    hypotheses: HypothesisReport | None = None
    solutions: tuple = field(default=(), repr=False)


def compare_direct(problem: ComparisonProblem, ensemble: PathEnsemble,
                   estimator: CondExpEstimator, config: PicardConfig | None = None,
                   validate: bool = True) -> ViolationReport:
    """Solve both mean-field BSDEs on the same noise and count ordering violations.

    Violations are (grid time in [0, T], particle) pairs with
    Y1 < Y2 - tol_band.
    """
    hyp = None
    if validate:
        hyp = check_hypotheses(problem, ensemble)
        if not hyp.ordering_ok:
            raise ProblemError(
                f"comparison data not ordered (drivers ok={hyp.driver_order_ok}, "
                f"terminals ok={hyp.terminal_order_ok})"
            )
    s1 = solve_mf_bsde(problem.problem1(), ensemble, estimator)
    s2 = solve_mf_bsde(problem.problem2(), ensemble, estimator)
    g = problem.base.grid
    sl = slice(0, g.n_T + 1)
    Y1, Y2 = s1.Y[sl], s2.Y[sl]
    band = tol_band(g.dt, ensemble.n_particles, max(_rms(Y1), _rms(Y2)))
    viol = Y1 < Y2 - band
    gap = Y1 - Y2
    frac = float(viol.mean())
    return ViolationReport(
        fraction=frac, tol_band=band, verdict="PASS" if frac == 0 else "FAIL",
        times=g.times[sl].copy(), mean_gap=gap.mean(axis=1), min_gap=gap.min(axis=1),
        violations=viol.sum(axis=1), hypotheses=hyp, solutions=(s1, s2),
    )


# ---------------------------------------------------------------------------
# monotone chain


@dataclass(frozen=True)
class MonotoneReport:
    stage_violations: tuple[float, ...]
    cauchy_norms: tuple[float, ...]
    fitted_ratio: float
    limit_error: float
    tol_band: float
    verdict: str
    note: str = ""
    stages: tuple = field(default=(), repr=False)
    direct: SolutionField | None = field(default=None, repr=False)


def monotone_iteration(f1_solution: SolutionField, f2: Driver, terminal2: TerminalSource,
                       delays: DelaySpec, ensemble: PathEnsemble, estimator: CondExpEstimator,
                       config: PicardConfig, n_rounds: int = 6, C: float = 1.0,
                       direct: SolutionField | None = None, threshold: float = 0.6) -> MonotoneReport:
    """Build the decreasing chain Y^1 >= Y^3 >= Y^4 >= ... for driver ``f2``.

    Stage n >= 3 solves the mean-field BSDE with driver ``f2`` whose
    anticipated inputs (A, Abar) are frozen from the previous stage (stage 3
    from ``f1_solution``).  The chain must be ordered within tol_band, its
    successive beta-norm differences must contract (fitted ratio at most
    ``threshold``), and the last stage must match the direct Picard solution
    of (f2, terminal2) within tol_band.
    """
    if not f2.restricted:
        raise ProblemError("f2 must be a restricted (comparison-class) driver")
    grid, levy = f1_solution.grid, f1_solution.levy
    prob2 = ProblemSpec(grid, delays, levy, ensemble.d, f2, terminal2, C)
    stages = [f1_solution]
    for _ in range(n_rounds):
        frozen = all_anticipated_terms(stages[-1], estimator, ensemble, delays, f2.anticipated)
        stages.append(solve_mf_bsde(prob2, ensemble, estimator, frozen=frozen))
    if direct is None:
        direct, _ = picard_solve(prob2, ensemble, estimator, config)
    sl = slice(0, grid.n_T + 1)
    scale = max(_rms(s.Y[sl]) for s in stages)
    band = tol_band(grid.dt, ensemble.n_particles, scale)
    viols = tuple(float(np.mean(nxt.Y[sl] > prev.Y[sl] + band)) for prev, nxt in zip(stages[:-1], stages[1:]))
    # Cauchy differences start between stages 3 and 4
    cauchy = tuple(beta_norm(b.minus(a), config.beta) for a, b in zip(stages[1:-1], stages[2:]))
    note = ""
    zero = next((k for k, v in enumerate(cauchy) if v == 0.0), None)
    if zero is not None:
        fitted = 0.0
        note = f"chain constant from stage {zero + 3}"
    elif len(cauchy) >= 2:
        fitted = _geo_mean([b / a for a, b in zip(cauchy[:-1], cauchy[1:])])
    else:
        fitted = math.nan
    limit_err = float(np.max(np.abs(stages[-1].Y[sl] - direct.Y[sl])))
    ok = all(v == 0 for v in viols) and (fitted <= threshold) and limit_err <= band
    return MonotoneReport(viols, cauchy, fitted, limit_err, band, "PASS" if ok else "FAIL",
                          note, tuple(stages), direct)
