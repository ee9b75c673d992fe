"""Built-in drivers, terminal conditions and comparison pairs.

Every entry declares its numeric parameters with defaults, so a run
configuration only names an entry and overrides some of its parameters.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .noise import PathEnsemble
from .solver import Driver, TerminalData

__all__ = ["Entry", "RegistryError", "DRIVERS", "TERMINALS", "PAIRS", "lookup",
           "make_driver", "make_terminal", "make_pair", "catalogue"]


class RegistryError(KeyError):
    def __str__(self):
        return self.args[0]


@dataclass(frozen=True)
class Entry:
    name: str
    summary: str
    params: dict  # name -> (default, description)
    build: Callable
    lipschitz: Callable[[dict], float] = lambda p: 1.0

    def resolve(self, given: dict | None) -> dict:
        given = dict(given or {})
        unknown = set(given) - set(self.params)
        if unknown:
            raise RegistryError(
                f"{self.name}: unknown parameter(s) {sorted(unknown)}; "
                f"accepted: {sorted(self.params)}"
            )
        out = {}
        for k, (default, _) in self.params.items():
            v = given.get(k, default)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise RegistryError(f"{self.name}: parameter {k!r} must be a number, got {v!r}")
            out[k] = float(v)
        return out


def _mean_y(law):
    return law.samples[:, 0].mean()


# ---------------------------------------------------------------------------
# drivers


def _zero(p):
    return Driver(lambda t, y, *rest: np.zeros(np.shape(y)), uses=frozenset(), restricted=True, name="zero")


def _constant(p):
    c = p["c"]
    return Driver(lambda t, y, *rest: np.full(np.shape(y), c), uses=frozenset(), restricted=True,
                  name="constant")


def _linear_y(p):
    k, c0 = p["k_y"], p["c0"]
    return Driver(lambda t, y, *rest: k * y + c0, uses={"y"}, restricted=True, name="linear-y")


def _mf_linear(p):
    c, k, ky, c0 = p["c"], p["k"], p["k_y"], p["c0"]

    def fn(t, y, z, gamma, a, b, cc, abar, bbar, cbar, law):
        return c * _mean_y(law) + k * gamma + ky * y + c0

    return Driver(fn, uses={"y", "gamma", "law"}, restricted=True, name="mean-field-linear")


def _antic_point(p):
    ca, c0 = p["c_a"], p["c0"]
    return Driver(lambda t, y, z, g, a, *rest: ca * a + c0, uses={"a"}, restricted=True,
                  name="anticipated-one-point")


def _antic_average(p):
    cb, c0 = p["c_abar"], p["c0"]
    return Driver(lambda t, y, z, g, a, b, c, abar, *rest: cb * abar + c0, uses={"abar"},
                  restricted=True, name="anticipated-average")


def _jump_gamma(p):
    k, c0 = p["k"], p["c0"]
    return Driver(lambda t, y, z, gamma, *rest: k * gamma + c0, uses={"gamma"}, restricted=True,
                  name="jump-gamma-linear")


def _lipschitz_mix(p):
    w, c0 = p["w"], p["c0"]

    def fn(t, y, z, gamma, a, b, c, abar, bbar, cbar, law):
        m = law.mean()
        s = (np.sin(y) + np.tanh(z[:, 0]) + np.sin(gamma) + np.cos(a) + np.sin(b[:, 0])
             + np.tanh(c) + np.sin(abar) + np.cos(bbar[:, 0]) + np.sin(cbar) + np.sin(m[0]))
        return c0 + w * s

    return Driver(fn, name="lipschitz-mix")


DRIVERS = {
    e.name: e
    for e in [
        Entry("zero", "f = 0", {}, _zero, lambda p: 0.0),
        Entry("constant", "f = c", {"c": (1.0, "constant value")}, _constant, lambda p: 0.0),
        Entry("linear-y", "f = k_y y + c0",
              {"k_y": (0.5, "coefficient of y"), "c0": (0.0, "offset")},
              _linear_y, lambda p: abs(p["k_y"])),
        Entry("mean-field-linear", "f = c E[Y] + k gamma + k_y y + c0",
              {"c": (1.0, "coefficient of the mean of Y"), "k": (0.0, "coefficient of gamma"),
               "k_y": (0.0, "coefficient of y"), "c0": (0.0, "offset")},
              _mf_linear, lambda p: max(abs(p["c"]), abs(p["k"]), abs(p["k_y"]))),
        Entry("anticipated-one-point", "f = c_a E[Y_{t+delta_1} | F_t] + c0",
              {"c_a": (1.0, "coefficient of the anticipated value"), "c0": (0.0, "offset")},
              _antic_point, lambda p: abs(p["c_a"])),
        Entry("anticipated-average", "f = c_abar E[int_0^delta_1 e^{-rho s} Y_{t+s} ds | F_t] + c0",
              {"c_abar": (1.0, "coefficient of the averaged anticipated value"), "c0": (0.0, "offset")},
              _antic_average, lambda p: abs(p["c_abar"])),
        Entry("jump-gamma-linear", "f = k gamma + c0",
              {"k": (0.5, "coefficient of gamma"), "c0": (0.0, "offset")},
              _jump_gamma, lambda p: abs(p["k"])),
        Entry("lipschitz-mix", "f = c0 + w * (sum of bounded 1-Lipschitz functions of every argument)",
              {"w": (0.2, "common weight (the Lipschitz constant)"), "c0": (0.0, "offset")},
              _lipschitz_mix, lambda p: abs(p["w"])),
    ]
}


# ---------------------------------------------------------------------------
# terminals


def _window(ens: PathEnsemble):
    g = ens.grid
    return g, slice(g.n_T, g.n_total + 1), g.n_window + 1, ens.n_particles


def _t_constant(p):
    v = p["value"]

    def build(ens):
        g, sl, nw, N = _window(ens)
        return TerminalData(np.full((nw, N), v), np.zeros((nw, N, ens.d)), np.zeros((nw, N, ens.levy.m)))

    return build


def _t_gaussian(p):
    mean, scale, coord = p["mean"], p["scale"], int(p["coord"])

    def build(ens):
        g, sl, nw, N = _window(ens)
        if not 0 <= coord < ens.d:
            raise RegistryError(f"gaussian-endpoint: coord {coord} outside [0, {ens.d})")
        phi = mean + scale * ens.W[sl, :, coord]
        phi_z = np.zeros((nw, N, ens.d))
        phi_z[:, :, coord] = scale
        return TerminalData(phi, phi_z, np.zeros((nw, N, ens.levy.m)))

    return build


def _t_jump(p):
    scale, offset = p["scale"], p["offset"]

    def build(ens):
        g, sl, nw, N = _window(ens)
        psi = np.broadcast_to(scale * ens.levy.l, (nw, N, ens.levy.m)).copy()
        return TerminalData(offset + scale * ens.J[sl], np.zeros((nw, N, ens.d)), psi)

    return build


def _t_path(p):
    v, slope = p["value"], p["slope"]

    def build(ens):
        g, sl, nw, N = _window(ens)
        phi = np.repeat((v + slope * (g.times[sl] - g.T))[:, None], N, axis=1)
        return TerminalData(phi, np.zeros((nw, N, ens.d)), np.zeros((nw, N, ens.levy.m)))

    return build


TERMINALS = {
    e.name: e
    for e in [
        Entry("constant", "phi = value on [T, T+M]", {"value": (1.0, "terminal value")}, _t_constant),
        Entry("gaussian-endpoint", "phi_t = mean + scale W_t[coord], phi_z = scale e_coord",
              {"mean": (1.0, "mean"), "scale": (1.0, "Brownian loading"),
               "coord": (0, "Brownian coordinate")}, _t_gaussian),
        Entry("compensated-jump", "phi_t = offset + scale sum_j l_j N~_j([0, t]), psi_j = scale l_j",
              {"scale": (1.0, "loading"), "offset": (0.0, "offset")}, _t_jump),
        Entry("deterministic-path", "phi_t = value + slope (t - T)",
              {"value": (1.0, "value at T"), "slope": (0.0, "slope on the window")}, _t_path),
    ]
}


# ---------------------------------------------------------------------------
# comparison pairs: build(params) -> (f1, f2) with f1 >= f2 pointwise


def _p_constant(p):
    if p["c1"] < p["c2"]:
        raise RegistryError("constant-gap: need c1 >= c2")
    return _constant({"c": p["c1"]}), _constant({"c": p["c2"]})


def _p_mf_linear(p):
    if p["g0"] < 0:
        raise RegistryError("mean-field-linear: need g0 >= 0")
    f2 = _mf_linear({"c": p["c"], "k": p["k"], "k_y": p["k_y"], "c0": p["c0"]})
    f1 = _mf_linear({"c": p["c"], "k": p["k"], "k_y": p["k_y"], "c0": p["c0"] + p["g0"]})
    return f1, f2


def _p_antic(p):
    if p["g0"] < 0 or p["c_a"] < 0:
        raise RegistryError("anticipated-one-point: need g0 >= 0 and c_a >= 0")
    return _antic_point({"c_a": p["c_a"], "c0": p["g0"]}), _antic_point({"c_a": p["c_a"], "c0": 0.0})


PAIRS = {
    e.name: e
    for e in [
        Entry("constant-gap", "f1 = c1, f2 = c2", {"c1": (1.0, "upper constant"), "c2": (0.0, "lower constant")},
              _p_constant, lambda p: 1.0),
        Entry("mean-field-linear", "f2 = c E[Y] + k gamma + k_y y + c0, f1 = f2 + g0",
              {"c": (0.5, "mean coefficient"), "k": (0.1, "gamma coefficient"),
               "k_y": (0.0, "y coefficient"), "c0": (0.0, "offset of f2"), "g0": (1.0, "gap f1 - f2")},
              _p_mf_linear, lambda p: max(abs(p["c"]), abs(p["k"]), abs(p["k_y"]))),
        Entry("anticipated-one-point", "f2 = c_a A, f1 = c_a A + g0",
              {"c_a": (1.0, "anticipated coefficient"), "g0": (1.0, "gap f1 - f2")},
              _p_antic, lambda p: abs(p["c_a"])),
    ]
}

_TABLES = {"driver": DRIVERS, "terminal": TERMINALS, "pair": PAIRS}


def lookup(kind: str, name: str) -> Entry:
    table = _TABLES[kind]
    if name not in table:
        hint = difflib.get_close_matches(name, list(table), n=1)
        extra = f"; did you mean {hint[0]!r}?" if hint else ""
        raise RegistryError(f"unknown {kind} {name!r}{extra} (available: {', '.join(sorted(table))})")
    return table[name]


def make_driver(name: str, params: dict | None = None):
    e = lookup("driver", name)
    p = e.resolve(params)
    return e.build(p), e.lipschitz(p)


def make_terminal(name: str, params: dict | None = None):
    e = lookup("terminal", name)
    return e.build(e.resolve(params))


def make_pair(name: str, params: dict | None = None):
    e = lookup("pair", name)
    p = e.resolve(params)
    f1, f2 = e.build(p)
    return f1, f2, e.lipschitz(p)


def catalogue() -> dict:
    """``{kind: {name: {"summary": ..., "params": {p: [default, description]}}}}``."""
    return {
        kind: {n: {"summary": e.summary, "params": {k: list(v) for k, v in e.params.items()}}
               for n, e in sorted(table.items())}
        for kind, table in _TABLES.items()
    }
