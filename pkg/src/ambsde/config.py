"""Run configuration files (TOML) with a strict schema.

A file has four sections; unknown keys anywhere are errors.

``[experiment]``
    ``command`` (solve | contraction | compare | monotone | apriori | validate),
    ``seed`` (mandatory nonnegative integer), ``output`` (directory, default
    ``"out"``).
``[problem]``
    ``T``, ``M``, ``n_steps`` (steps on [0, T+M]), ``d`` (default 1) and
    optionally ``lipschitz_C`` (defaults to the constant declared by the
    registry entry).  Subtables ``delays``, ``levy``, ``driver``, ``terminal``.
``[numerics]``
    ``n_particles``, ``degree``, ``ridge``, ``tol``, ``max_iter``, ``beta``
    (``"auto"`` or a number), ``beta_fallback``, ``damping``,
    ``freeze_state``, ``workers``, ``solution_particles``.
``[comparison]``
    ``pair``, ``params``, ``n_rounds``, ``threshold``, subtables
    ``terminal1`` and ``terminal2``.  Required by compare and monotone.

See the README for a full example of each section.
"""

from __future__ import annotations

import difflib
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .lattice import DelaySpec, GridError, TimeGrid, build_grid
from .noise import LevyModel
from .registry import RegistryError, lookup, make_driver, make_pair, make_terminal
from .solver import Driver, ProblemSpec, TerminalSource

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "COMMANDS"]

COMMANDS = ("solve", "contraction", "compare", "monotone", "apriori", "validate")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field."""


_NUM = (int, float)

_SCHEMA = {
    "experiment": {"command": str, "seed": int, "output": str},
    "problem": {"T": _NUM, "M": _NUM, "n_steps": int, "d": int, "lipschitz_C": _NUM,
                "delays": dict, "levy": dict, "driver": dict, "terminal": dict},
    "problem.delays": {"kind": str, "delta": (list, *_NUM), "a": (list, *_NUM), "b": (list, *_NUM),
                       "tables": list, "L": _NUM, "rho": _NUM},
    "problem.levy": {"marks": list, "intensities": list, "weights": list, "weight_bound": _NUM},
    "problem.driver": {"name": str, "params": dict},
    "problem.terminal": {"name": str, "params": dict},
    "numerics": {"n_particles": int, "degree": int, "ridge": _NUM, "tol": _NUM, "max_iter": int,
                 "beta": (str, *_NUM), "beta_fallback": _NUM, "damping": _NUM, "freeze_state": bool,
                 "workers": int, "solution_particles": int},
    "comparison": {"pair": str, "params": dict, "n_rounds": int, "threshold": _NUM,
                   "terminal1": dict, "terminal2": dict},
    "comparison.terminal1": {"name": str, "params": dict},
    "comparison.terminal2": {"name": str, "params": dict},
}
_TOP = ("experiment", "problem", "numerics", "comparison")


def _check_table(path: str, table: dict) -> None:
    allowed = _SCHEMA[path]
    for key, val in table.items():
        where = f"{path}.{key}"
        if key not in allowed:
            raise ConfigError(f"{where}: unknown key (allowed: {', '.join(sorted(allowed))})")
        want = allowed[key]
        want = want if isinstance(want, tuple) else (want,)
        ok = isinstance(val, want) and not (isinstance(val, bool) and bool not in want)
        if not ok:
            names = "/".join(sorted({w.__name__ for w in want}))
            raise ConfigError(f"{where}: expected {names}, got {type(val).__name__}")
        sub = f"{path}.{key}"
        if isinstance(val, dict) and sub in _SCHEMA:
            _check_table(sub, val)


def _req(table: dict, path: str, key: str):
    if key not in table:
        raise ConfigError(f"{path}.{key}: missing required key")
    return table[key]


def _floats(v, where: str, n: int | None = None) -> list[float]:
    v = v if isinstance(v, list) else [v]
    if any(isinstance(x, bool) or not isinstance(x, _NUM) for x in v):
        raise ConfigError(f"{where}: expected numbers")
    if n is not None and len(v) not in (1, n):
        raise ConfigError(f"{where}: expected 1 or {n} values, got {len(v)}")
    return [float(x) for x in v]


@dataclass(frozen=True)
class Numerics:
    n_particles: int = 10_000
    degree: int = 2
    ridge: float = 1e-8
    tol: float = 1e-12
    max_iter: int = 50
    beta: float | str = 0.0
    beta_fallback: float = 0.0
    damping: float = 1.0
    freeze_state: bool = False
    workers: int = 1
    solution_particles: int = 16


@dataclass(frozen=True)
class Comparison:
    pair: str
    params: dict
    terminal1: tuple[str, dict]
    terminal2: tuple[str, dict]
    n_rounds: int = 6
    threshold: float = 0.6


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Parsed run configuration.

    ``driver`` and ``terminal`` may be absent for comparison-only runs, which
    build their problems through :meth:`pair` instead of :meth:`problem`.
    """

    command: str
    seed: int
    output: str
    grid: TimeGrid
    delays: DelaySpec
    levy: LevyModel
    d: int
    numerics: Numerics
    driver_name: str | None = None
    driver_params: dict = field(default_factory=dict)
    terminal_name: str | None = None
    terminal_params: dict = field(default_factory=dict)
    lipschitz_C: float | None = None
    comparison: Comparison | None = None
    source: str = "<string>"

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=_seed(seed, "--seed"))

    def with_command(self, command: str) -> "RunConfig":
        cfg = replace(self, command=_command(command, "command"))
        cfg.require()
        return cfg

    def require(self) -> None:
        """Check that the sections needed by ``command`` are present."""
        if self.command in ("compare", "monotone") and self.comparison is None:
            raise ConfigError(f"comparison: section required by command {self.command!r}")
        if self.command in ("solve", "contraction", "apriori") and (
                self.driver_name is None or self.terminal_name is None):
            raise ConfigError(f"problem.driver/problem.terminal: required by command {self.command!r}")

    def driver(self) -> tuple[Driver, float]:
        if self.driver_name is None:
            raise ConfigError("problem.driver: missing (needed by this command)")
        return make_driver(self.driver_name, self.driver_params)

    def terminal(self) -> TerminalSource:
        if self.terminal_name is None:
            raise ConfigError("problem.terminal: missing (needed by this command)")
        return make_terminal(self.terminal_name, self.terminal_params)

    def problem(self) -> ProblemSpec:
        drv, declared = self.driver()
        C = declared if self.lipschitz_C is None else self.lipschitz_C
        return ProblemSpec(self.grid, self.delays, self.levy, self.d, drv, self.terminal(), C)

    def pair(self):
        """``(f1, f2, terminal1, terminal2, C)`` of the comparison section."""
        if self.comparison is None:
            raise ConfigError("comparison: section missing (needed by this command)")
        c = self.comparison
        f1, f2, declared = make_pair(c.pair, c.params)
        t1 = make_terminal(*c.terminal1)
        t2 = make_terminal(*c.terminal2)
        C = declared if self.lipschitz_C is None else self.lipschitz_C
        return f1, f2, t1, t2, C


def _seed(v, where):
    if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v < 2**64:
        raise ConfigError(f"{where}: seed must be an integer in [0, 2^64)")
    return int(v)


def _command(command: str, where: str) -> str:
    if command not in COMMANDS:
        hint = difflib.get_close_matches(command, COMMANDS, n=1)
        extra = f"; did you mean {hint[0]!r}?" if hint else ""
        raise ConfigError(f"{where}: unknown command {command!r}{extra} (available: {', '.join(COMMANDS)})")
    return command


def _delays(tab: dict, grid: TimeGrid) -> DelaySpec:
    path = "problem.delays"
    kind = tab.get("kind", "constant")
    rho = float(tab.get("rho", 1.0))
    extra = {"constant": {"a", "b", "tables", "L"}, "affine": {"delta", "tables", "L"},
             "tabulated": {"delta", "a", "b"}}
    if kind not in extra:
        raise ConfigError(f"{path}.kind: expected constant, affine or tabulated, got {kind!r}")
    bad = extra[kind] & set(tab)
    if bad:
        raise ConfigError(f"{path}.{sorted(bad)[0]}: not used by kind {kind!r}")
    try:
        if kind == "constant":
            dl = _floats(_req(tab, path, "delta"), f"{path}.delta", 3)
            dl = dl * 3 if len(dl) == 1 else dl
            return DelaySpec.constant(*dl, rho=rho)
        if kind == "affine":
            a = _floats(_req(tab, path, "a"), f"{path}.a", 3)
            b = _floats(_req(tab, path, "b"), f"{path}.b", 3)
            a, b = (a * 3 if len(a) == 1 else a), (b * 3 if len(b) == 1 else b)
            return DelaySpec.affine(*zip(a, b), rho=rho)
        tables = _req(tab, path, "tables")
        if len(tables) not in (1, 3):
            raise ConfigError(f"{path}.tables: expected 1 or 3 tables")
        arrs = [np.asarray(_floats(t, f"{path}.tables"), dtype=float) for t in tables]
        arrs = arrs * 3 if len(arrs) == 1 else arrs
        for t in arrs:
            if t.shape != (grid.n_T + 1,):
                raise ConfigError(f"{path}.tables: each table needs {grid.n_T + 1} values "
                                  f"(the grid points of [0, T]), got {t.shape[0]}")
        return DelaySpec.tabulated(*arrs, L=float(_req(tab, path, "L")), rho=rho)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None


def _levy(tab: dict | None) -> LevyModel:
    if not tab:
        return LevyModel.none()
    path = "problem.levy"
    marks = _floats(_req(tab, path, "marks"), f"{path}.marks")
    lam = _floats(_req(tab, path, "intensities"), f"{path}.intensities")
    w = _floats(_req(tab, path, "weights"), f"{path}.weights")
    if not len(marks) == len(lam) == len(w):
        raise ConfigError(f"{path}: marks, intensities and weights must have equal length")
    try:
        return LevyModel(marks, lam, w, float(tab.get("weight_bound", 1.0)))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _entry(kind: str, tab: dict, path: str) -> tuple[str, dict]:
    name = _req(tab, path, "name")
    params = dict(tab.get("params", {}))
    try:
        lookup(kind, name).resolve(params)
    except RegistryError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return name, params


def _numerics(tab: dict) -> Numerics:
    n = Numerics(**{k: v for k, v in tab.items()})
    if isinstance(n.beta, str) and n.beta != "auto":
        raise ConfigError(f"numerics.beta: expected \"auto\" or a number, got {n.beta!r}")
    if n.n_particles < 2:
        raise ConfigError("numerics.n_particles: need at least 2")
    if n.degree < 0:
        raise ConfigError("numerics.degree: must be >= 0")
    if not n.tol > 0:
        raise ConfigError("numerics.tol: must be positive")
    if n.max_iter < 1:
        raise ConfigError("numerics.max_iter: must be >= 1")
    if not 0 < n.damping <= 1:
        raise ConfigError("numerics.damping: must lie in (0, 1]")
    if not isinstance(n.beta, str) and n.beta < 0:
        raise ConfigError("numerics.beta: must be >= 0")
    if n.workers < 1:
        raise ConfigError("numerics.workers: must be >= 1")
    if n.solution_particles < 0:
        raise ConfigError("numerics.solution_particles: must be >= 0")
    return n


def parse_config(data: dict, source: str = "<string>") -> RunConfig:
    """Validate a decoded TOML document and build a :class:`RunConfig`."""
    for key in data:
        if key not in _TOP:
            raise ConfigError(f"{key}: unknown section (allowed: {', '.join(_TOP)})")
        if not isinstance(data[key], dict):
            raise ConfigError(f"{key}: expected a table")
        _check_table(key, data[key])
    exp = data.get("experiment")
    if exp is None:
        raise ConfigError("experiment: missing section")
    prob = data.get("problem")
    if prob is None:
        raise ConfigError("problem: missing section")
    command = _command(_req(exp, "experiment", "command"), "experiment.command")
    seed = _seed(_req(exp, "experiment", "seed"), "experiment.seed")
    T = float(_req(prob, "problem", "T"))
    M = float(_req(prob, "problem", "M"))
    n_steps = _req(prob, "problem", "n_steps")
    try:
        grid = build_grid(T, M, n_steps)
    except GridError as exc:
        raise ConfigError(f"problem: {exc}") from None
    d = int(prob.get("d", 1))
    if d < 1:
        raise ConfigError("problem.d: must be >= 1")
    delays = _delays(prob.get("delays", {"kind": "constant", "delta": 0.0}), grid)
    levy = _levy(prob.get("levy"))
    dname = dparams = tname = tparams = None
    if "driver" in prob:
        dname, dparams = _entry("driver", prob["driver"], "problem.driver")
    if "terminal" in prob:
        tname, tparams = _entry("terminal", prob["terminal"], "problem.terminal")
    C = prob.get("lipschitz_C")
    if C is not None and not C >= 0:
        raise ConfigError("problem.lipschitz_C: must be >= 0")
    comp = None
    if "comparison" in data:
        c = data["comparison"]
        pname = _req(c, "comparison", "pair")
        pparams = dict(c.get("params", {}))
        try:
            lookup("pair", pname).resolve(pparams)
        except RegistryError as exc:
            raise ConfigError(f"comparison.pair: {exc}") from None
        t1 = _entry("terminal", _req(c, "comparison", "terminal1"), "comparison.terminal1")
        t2 = _entry("terminal", _req(c, "comparison", "terminal2"), "comparison.terminal2")
        comp = Comparison(pname, pparams, t1, t2, int(c.get("n_rounds", 6)), float(c.get("threshold", 0.6)))
        if comp.n_rounds < 2:
            raise ConfigError("comparison.n_rounds: need at least 2")
    cfg = RunConfig(
        command=command, seed=seed, output=exp.get("output", "out"), grid=grid, delays=delays,
        levy=levy, d=d, numerics=_numerics(data.get("numerics", {})), driver_name=dname,
        driver_params=dparams or {}, terminal_name=tname, terminal_params=tparams or {},
        lipschitz_C=None if C is None else float(C), comparison=comp, source=source,
    )
    cfg.require()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data, str(path))
