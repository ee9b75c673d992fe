"""Batch front end.

Usage::

    ambsde <command> --config FILE [--out DIR] [--seed N]
    ambsde run --config FILE          # command taken from the file
    ambsde registry                   # list drivers, terminals and pairs

Exit status: 0 success or PASS, 1 verdict FAIL, 2 configuration error,
3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .analysis import (
    ComparisonProblem,
    apriori_check,
    check_hypotheses,
    compare_direct,
    contraction_report,
    monotone_iteration,
    select_beta,
    select_beta_comparison,
)
from .config import COMMANDS, ConfigError, RunConfig, load_config
from .lattice import GridError, validate_delays
from .noise import simulate_ensemble
from .registry import RegistryError, catalogue
from .solver import (
    CondExpEstimator,
    PicardConfig,
    ProblemError,
    ProblemSpec,
    SolverError,
    picard_solve,
    probe_lipschitz,
)

__all__ = ["main", "run", "EXIT_OK", "EXIT_FAIL", "EXIT_CONFIG", "EXIT_NONCONVERGENCE"]

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NONCONVERGENCE = 0, 1, 2, 3

log = logging.getLogger("ambsde")


class _Run:
    """Shared state of one command execution."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.summary = {"command": cfg.command, "seed": cfg.seed, "config": cfg.source,
                        "grid": {"T": cfg.grid.T, "M": cfg.grid.M, "dt": cfg.grid.dt,
                                 "n_steps": cfg.grid.n_total},
                        "n_particles": cfg.numerics.n_particles}
        self._ens = None

    @property
    def ensemble(self):
        if self._ens is None:
            n = self.cfg.numerics
            self._ens = simulate_ensemble(self.cfg.grid, self.cfg.levy, self.cfg.d, n.n_particles,
                                          self.cfg.seed, workers=n.workers)
        return self._ens

    def estimator(self) -> CondExpEstimator:
        return CondExpEstimator(degree=self.cfg.numerics.degree, ridge=self.cfg.numerics.ridge)

    def picard_config(self, beta: float) -> PicardConfig:
        n = self.cfg.numerics
        return PicardConfig(beta=beta, tol=n.tol, max_iter=n.max_iter, damping=n.damping,
                            freeze_state=n.freeze_state)

    def beta(self, C: float, L: float, comparison: bool = False) -> tuple[float, bool]:
        """Resolve the configured weight; returns ``(beta, chosen_automatically)``."""
        n, g = self.cfg.numerics, self.cfg.grid
        if n.beta != "auto":
            self.summary["beta"] = {"mode": "fixed", "value": float(n.beta)}
            return float(n.beta), False
        pick = select_beta_comparison if comparison else select_beta
        choice = pick(C, L, self.cfg.levy, self.cfg.delays.rho, g.T, g.M)
        info = {"mode": "auto", "solvable": choice.solvable, "residual": choice.residual}
        if choice.solvable:
            info["value"] = choice.beta
            self.summary["beta"] = info
            return choice.beta, True
        info["value"] = n.beta_fallback
        info["note"] = "no root below the cap; using beta_fallback"
        self.summary["beta"] = info
        log.warning("beta equation has no root below the cap; falling back to %g", n.beta_fallback)
        return n.beta_fallback, False

    def write_solution(self, sol, name="solution.csv"):
        io.write_solution_csv(sol, self.out / name, self.cfg.numerics.solution_particles)

    def finish(self, status: int) -> int:
        self.summary["exit_status"] = status
        io.write_json(self.summary, self.out / "summary.json")
        return status


def _solution_stats(sol) -> dict:
    y0 = sol.Y[0]
    return {"Y0_mean": float(y0.mean()), "Y0_std": float(y0.std()), "Y0_min": float(y0.min()),
            "Y0_max": float(y0.max()), "gamma_residual": sol.gamma_residual()}


def _trace_info(trace) -> dict:
    return {"iterations": trace.iterations, "converged": trace.converged,
            "divergent": trace.divergent, "norms": trace.norms, "ratios": trace.ratios,
            "note": trace.note}


def _solve(r: _Run, problem: ProblemSpec, auto: bool = True):
    beta, chosen = r.beta(problem.lipschitz_C, problem.L) if auto else (0.0, False)
    sol, trace = picard_solve(problem, r.ensemble, r.estimator(), r.picard_config(beta))
    return sol, trace, chosen


def cmd_solve(r: _Run) -> int:
    problem = r.cfg.problem()
    sol, trace, _ = _solve(r, problem)
    r.summary.update(_solution_stats(sol))
    r.summary["trace"] = _trace_info(trace)
    r.write_solution(sol)
    io.write_trace_csv(trace, r.out / "trace.csv")
    return r.finish(EXIT_OK if trace.converged else EXIT_NONCONVERGENCE)


def cmd_contraction(r: _Run) -> int:
    problem = r.cfg.problem()
    sol, trace, chosen = _solve(r, problem)
    io.write_trace_csv(trace, r.out / "trace.csv")
    r.summary["trace"] = _trace_info(trace)
    if any(v != v or v == float("inf") for v in trace.norms):
        return r.finish(EXIT_NONCONVERGENCE)
    rep = contraction_report(trace, auto_beta=chosen)
    # with a fixed weight the verdict is monotone decrease of the trace
    verdict = rep.verdict if chosen or rep.verdict == "PASS" else ("PASS" if rep.monotone else "FAIL")
    r.summary["contraction"] = {"ratios": rep.ratios, "geometric_mean": rep.geometric_mean,
                                "monotone": rep.monotone, "verdict": verdict,
                                "criterion": "geometric_mean <= 0.6" if chosen else "monotone",
                                "note": rep.note}
    r.summary.update(_solution_stats(sol))
    return r.finish(EXIT_OK if verdict == "PASS" else EXIT_FAIL)


def _comparison_problem(r: _Run) -> ComparisonProblem:
    f1, f2, t1, t2, C = r.cfg.pair()
    g = r.cfg.grid
    base = ProblemSpec(g, r.cfg.delays, r.cfg.levy, r.cfg.d, f1, t1, C)
    return ComparisonProblem(base, f1, f2, t1, t2)


def _hyp_info(h) -> dict:
    return {"driver_order_ok": h.driver_order_ok, "terminal_order_ok": h.terminal_order_ok,
            "dk_range": h.dk_range, "dnu_range": h.dnu_range, "f2_monotone_ok": h.f2_monotone_ok,
            "bounded_ok": h.bounded_ok, "strict_ok": h.strict_ok}


def cmd_compare(r: _Run) -> int:
    cp = _comparison_problem(r)
    rep = compare_direct(cp, r.ensemble, r.estimator())
    io.write_rows(r.out / "report.csv", ["time", "mean_gap", "min_gap", "violations"],
                  zip(rep.times, rep.mean_gap, rep.min_gap, rep.violations))
    s1, s2 = rep.solutions
    r.summary["comparison"] = {
        "pair": r.cfg.comparison.pair, "violation_fraction": rep.fraction, "tol_band": rep.tol_band,
        "verdict": rep.verdict, "mean_gap_t0": float(rep.mean_gap[0]),
        "Y0_mean_1": float(s1.Y[0].mean()), "Y0_mean_2": float(s2.Y[0].mean()),
        "hypotheses": _hyp_info(rep.hypotheses),
    }
    return r.finish(EXIT_OK if rep.verdict == "PASS" else EXIT_FAIL)


def cmd_monotone(r: _Run) -> int:
    cp = _comparison_problem(r)
    cfg = r.cfg.comparison
    hyp = check_hypotheses(cp, r.ensemble)
    if not hyp.ordering_ok:
        raise ProblemError("comparison data not ordered")
    p1 = cp.problem1()
    beta, chosen = r.beta(cp.C, p1.L, comparison=True)
    pc = r.picard_config(beta)
    est = r.estimator()
    f1_sol, tr1 = picard_solve(p1, r.ensemble, est, pc)
    r.summary["f1_trace"] = _trace_info(tr1)
    if not tr1.converged:
        return r.finish(EXIT_NONCONVERGENCE)
    rep = monotone_iteration(f1_sol, cp.f2, cp.terminal2, r.cfg.delays, r.ensemble, est, pc,
                             n_rounds=cfg.n_rounds, C=cp.C, threshold=cfg.threshold)
    rows = []
    for k, st in enumerate(rep.stages):
        label = 1 if k == 0 else k + 2
        viol = "" if k == 0 else rep.stage_violations[k - 1]
        cauchy = rep.cauchy_norms[k - 2] if k >= 2 else ""
        rows.append([label, float(st.Y[0].mean()), viol, cauchy])
    io.write_rows(r.out / "report.csv", ["stage", "Y0_mean", "violation_fraction", "cauchy_beta_norm"], rows)
    r.summary["monotone"] = {
        "stage_violations": rep.stage_violations, "cauchy_norms": rep.cauchy_norms,
        "fitted_ratio": rep.fitted_ratio, "limit_error": rep.limit_error, "tol_band": rep.tol_band,
        "verdict": rep.verdict, "note": rep.note, "hypotheses": _hyp_info(hyp),
    }
    r.write_solution(rep.stages[-1])
    return r.finish(EXIT_OK if rep.verdict == "PASS" else EXIT_FAIL)


def cmd_apriori(r: _Run) -> int:
    problem = r.cfg.problem()
    sol, trace, _ = _solve(r, problem)
    r.summary["trace"] = _trace_info(trace)
    if not trace.converged:
        return r.finish(EXIT_NONCONVERGENCE)
    rep = apriori_check(problem, sol)
    r.summary["apriori"] = {"lhs": rep.lhs, "rhs_core": rep.rhs_core, "ratio": rep.ratio,
                            "anomaly": rep.anomaly}
    r.summary.update(_solution_stats(sol))
    return r.finish(EXIT_FAIL if rep.anomaly else EXIT_OK)


def cmd_validate(r: _Run) -> int:
    cfg = r.cfg
    rep = validate_delays(cfg.grid, cfg.delays)
    info = {"delays_ok": rep.passed, "messages": rep.messages(), "L": rep.L if rep.passed else None,
            "per_delay_L": [c.L for c in rep.checks]}
    ok = rep.passed
    for msg in rep.messages():
        print(f"ambsde: delays: {msg}", file=sys.stderr)
    if cfg.driver_name is not None:
        drv, declared = cfg.driver()
        C = declared if cfg.lipschitz_C is None else cfg.lipschitz_C
        probe = probe_lipschitz(drv, C, cfg.d, t_max=cfg.grid.T, seed=cfg.seed)
        info["lipschitz"] = {"C": C, "fraction_ok": probe.fraction_ok, "worst_ratio": probe.worst_ratio,
                             "passed": probe.passed}
        if not probe.passed:
            print(f"ambsde: driver {cfg.driver_name!r} exceeds its Lipschitz constant {C}", file=sys.stderr)
        ok = ok and probe.passed
    if cfg.comparison is not None and rep.passed:
        cp = _comparison_problem(r)
        hyp = check_hypotheses(cp, r.ensemble, seed=cfg.seed)
        info["hypotheses"] = _hyp_info(hyp)
        if not (hyp.ordering_ok and hyp.f2_monotone_ok):
            print("ambsde: comparison pair is not ordered or f2 is not monotone", file=sys.stderr)
        ok = ok and hyp.ordering_ok and hyp.f2_monotone_ok
    info["verdict"] = "PASS" if ok else "FAIL"
    r.summary["validate"] = info
    return r.finish(EXIT_OK if ok else EXIT_CONFIG)


_COMMANDS = {"solve": cmd_solve, "contraction": cmd_contraction, "compare": cmd_compare,
             "monotone": cmd_monotone, "apriori": cmd_apriori, "validate": cmd_validate}
assert set(_COMMANDS) == set(COMMANDS)


def run(cfg: RunConfig, out: str | Path | None = None) -> int:
    """Execute ``cfg.command`` and write its reports under ``out``."""
    out = Path(cfg.output if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    r = _Run(cfg, out)
    try:
        return _COMMANDS[cfg.command](r)
    except (ConfigError, RegistryError, ProblemError, GridError) as exc:
        print(f"ambsde: {exc}", file=sys.stderr)
        r.summary["error"] = str(exc)
        return r.finish(EXIT_CONFIG)
    except (SolverError, FloatingPointError) as exc:
        print(f"ambsde: solver failure: {exc}", file=sys.stderr)
        r.summary["error"] = str(exc)
        return r.finish(EXIT_NONCONVERGENCE)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ambsde", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=(*COMMANDS, "run", "registry"))
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--out", help="output directory (overrides experiment.output)")
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if args.command == "registry":
        print(json.dumps(catalogue(), indent=2, sort_keys=True))
        return EXIT_OK
    if not args.config:
        print("ambsde: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        if args.command != "run" and args.command != cfg.command:
            cfg = cfg.with_command(args.command)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    except (ConfigError, RegistryError, GridError) as exc:
        print(f"ambsde: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, args.out)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
