"""Finite-activity Levy model and the particle ensemble of driving noise.

Every particle draws its Brownian and Poisson increments from its own
sub-stream of the root seed, keyed by ``(channel, particle)``.  The ensemble is
therefore identical whatever order (or how many threads) the particles are
generated in.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import TimeGrid

__all__ = [
    "LevyModel",
    "PathEnsemble",
    "simulate_ensemble",
    "compensated_increment",
    "weighted_jump_integral",
    "dump_ensemble",
    "load_ensemble",
]

_BROWNIAN, _JUMPS = 0, 1


@dataclass(frozen=True)
class LevyModel:
    """Marks ``e_j`` with intensities ``lambda_j`` and jump weights ``l_j``."""

    marks: tuple[float, ...] = ()
    intensities: tuple[float, ...] = ()
    weights: tuple[float, ...] = ()
    weight_bound: float = 1.0

    def __post_init__(self):
        m = len(self.marks)
        if len(self.intensities) != m or len(self.weights) != m:
            raise ValueError("marks, intensities and weights must have equal length")
        object.__setattr__(self, "marks", tuple(float(e) for e in self.marks))
        object.__setattr__(self, "intensities", tuple(float(v) for v in self.intensities))
        object.__setattr__(self, "weights", tuple(float(v) for v in self.weights))
        for e, lam, w in zip(self.marks, self.intensities, self.weights):
            if not (np.isfinite(lam) and lam > 0):
                raise ValueError(f"intensity for mark {e} must be finite and > 0, got {lam}")
            if not 0 < w <= self.weight_bound * min(1.0, abs(e)):
                raise ValueError(
                    f"weight {w} at mark {e} violates 0 < l(e) <= "
                    f"{self.weight_bound} * min(1, |e|)"
                )

    @classmethod
    def none(cls) -> "LevyModel":
        return cls()

    @property
    def m(self) -> int:
        return len(self.marks)

    @property
    def lam(self) -> np.ndarray:
        return np.asarray(self.intensities, dtype=float)

    @property
    def l(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def total_intensity(self) -> float:
        return float(self.lam.sum())

    @property
    def I2(self) -> float:
        """sum_j l_j^2 lambda_j, the discrete integral of |l|^2 against lambda."""
        return float(np.sum(self.l**2 * self.lam))

    @property
    def small_jump_mass(self) -> float:
        """sum_j min(1, e_j^2) lambda_j."""
        e = np.asarray(self.marks, dtype=float)
        return float(np.sum(np.minimum(1.0, e**2) * self.lam))


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Brownian increments ``(N, steps, d)`` and jump counts ``(N, steps, m)``."""

    grid: TimeGrid
    levy: LevyModel
    seed: int
    brownian_increments: np.ndarray = field(repr=False)
    jump_counts: np.ndarray = field(repr=False)
    _W: np.ndarray = field(init=False, repr=False, compare=False)
    _J: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.brownian_increments.setflags(write=False)
        self.jump_counts.setflags(write=False)
        N, n, d = self.brownian_increments.shape
        if n != self.grid.n_total:
            raise ValueError(f"ensemble has {n} steps, grid has {self.grid.n_total}")
        if self.jump_counts.shape != (N, n, self.levy.m):
            raise ValueError("jump_counts shape does not match (N, steps, m)")
        # time-major running sums, used as regression state
        W = np.zeros((n + 1, N, d))
        np.cumsum(np.moveaxis(self.brownian_increments, 1, 0), axis=0, out=W[1:])
        J = np.zeros((n + 1, N))
        if self.levy.m:
            np.cumsum(self.weighted_jump_increments().T, axis=0, out=J[1:])
        W.setflags(write=False)
        J.setflags(write=False)
        object.__setattr__(self, "_W", W)
        object.__setattr__(self, "_J", J)

    @property
    def n_particles(self) -> int:
        return self.brownian_increments.shape[0]

    @property
    def n_steps(self) -> int:
        return self.brownian_increments.shape[1]

    @property
    def d(self) -> int:
        return self.brownian_increments.shape[2]

    @property
    def W(self) -> np.ndarray:
        """Brownian paths on the grid, time-major ``(steps+1, N, d)``."""
        return self._W

    @property
    def J(self) -> np.ndarray:
        """Running weighted compensated jump sums, time-major ``(steps+1, N)``."""
        return self._J

    def brownian(self, i: int) -> np.ndarray:
        """W at grid time t_i, shape ``(N, d)``."""
        return self._W[i]

    def jump_state(self, i: int) -> np.ndarray:
        """Running weighted compensated jump sum sum_j l_j N~_j([0, t_i]), shape ``(N,)``."""
        return self._J[i]

    def dW(self, i: int) -> np.ndarray:
        """Brownian increment over step i, shape ``(N, d)``."""
        return self.brownian_increments[:, i, :]

    def compensated_counts(self, i: int | None = None) -> np.ndarray:
        """Compensated counts ``N - lambda dt``; shape ``(N, m)`` for one step, else ``(N, steps, m)``."""
        comp = self.levy.lam * self.grid.dt
        if i is None:
            return self.jump_counts - comp
        return self.jump_counts[:, i, :] - comp

    def weighted_jump_increments(self) -> np.ndarray:
        """sum_j l_j (N_j - lambda_j dt) per particle and step, shape ``(N, steps)``."""
        if self.levy.m == 0:
            return np.zeros(self.jump_counts.shape[:2])
        return self.compensated_counts() @ self.levy.l


def _particle_rng(seed: int, channel: int, p: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(channel, p))))


def _fill(seed, lo, hi, n, d, lam_dt, dW, counts):
    for p in range(lo, hi):
        dW[p] = _particle_rng(seed, _BROWNIAN, p).standard_normal((n, d))
        if lam_dt.size:
            counts[p] = _particle_rng(seed, _JUMPS, p).poisson(lam_dt, size=(n, lam_dt.size))


def simulate_ensemble(
    grid: TimeGrid,
    levy: LevyModel,
    d: int,
    N: int,
    seed: int,
    workers: int = 1,
) -> PathEnsemble:
    """Simulate ``N`` independent particles over every step of [0, T+M]."""
    if N < 2:
        raise ValueError("need at least two particles")
    if d < 1:
        raise ValueError("Brownian dimension must be >= 1")
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    n = grid.n_total
    lam_dt = levy.lam * grid.dt
    dW = np.empty((N, n, d))
    counts = np.zeros((N, n, levy.m), dtype=np.int64)
    workers = max(1, int(workers))
    bounds = np.linspace(0, N, workers + 1).astype(int)
    if workers == 1:
        _fill(seed, 0, N, n, d, lam_dt, dW, counts)
    else:
        with ThreadPoolExecutor(workers) as pool:
            futs = [pool.submit(_fill, seed, lo, hi, n, d, lam_dt, dW, counts)
                    for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
            for f in futs:
                f.result()
    dW *= np.sqrt(grid.dt)
    return PathEnsemble(grid, levy, seed, dW, counts)


def compensated_increment(ensemble: PathEnsemble, p: int, i: int, j: int) -> float:
    """One sample of the compensated Poisson measure over step ``i`` and mark ``j``."""
    return float(ensemble.jump_counts[p, i, j] - ensemble.levy.intensities[j] * ensemble.grid.dt)


def weighted_jump_integral(ensemble: PathEnsemble, levy: LevyModel, p: int, i: int) -> float:
    """Increment over step ``i`` of the integral of l against the compensated measure."""
    if levy.m == 0:
        return 0.0
    comp = ensemble.jump_counts[p, i, :] - levy.lam * ensemble.grid.dt
    return float(comp @ levy.l)


# flat binary layout: magic, then N, steps, d, m, seed as little-endian int64,
# then the Brownian increments (float64) and jump counts (int64), row-major
_MAGIC = b"AMBSDEv1"
_HEADER = struct.Struct("<8s5q")


def dump_ensemble(ensemble: PathEnsemble, path: str | Path) -> None:
    N, n, d = ensemble.brownian_increments.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, N, n, d, ensemble.levy.m, ensemble.seed))
        fh.write(np.ascontiguousarray(ensemble.brownian_increments, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ensemble.jump_counts, dtype="<i8").tobytes())


def load_ensemble(path: str | Path, grid: TimeGrid, levy: LevyModel) -> PathEnsemble:
    raw = Path(path).read_bytes()
    magic, N, n, d, m, seed = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not an ensemble dump")
    if n != grid.n_total or m != levy.m:
        raise ValueError(f"{path}: dump has steps={n}, m={m}; expected {grid.n_total}, {levy.m}")
    off = _HEADER.size
    nb = N * n * d * 8
    dW = np.frombuffer(raw, dtype="<f8", count=N * n * d, offset=off).reshape(N, n, d).astype(float)
    counts = np.frombuffer(raw, dtype="<i8", count=N * n * m, offset=off + nb).reshape(N, n, m).astype(np.int64)
    return PathEnsemble(grid, levy, seed, dW, counts)
