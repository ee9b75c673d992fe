"""Uniform empirical measures, W2 distances and a Lions-derivative probe."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "EmpiricalMeasure",
    "LiftedFunction",
    "wasserstein2_1d",
    "wasserstein2_exact_smallN",
    "lions_derivative_estimate",
    "second_moment",
    "dirac",
]

SMALL_N_MAX = 10


class EmpiricalMeasure:
    """Uniform empirical law of ``N`` points in R^q.

    ``samples`` may be given as ``(N,)`` (then ``q = 1``) or ``(N, q)``.  The
    array is not copied; callers hand over read-only particle snapshots.
    """

    __slots__ = ("samples",)

    def __init__(self, samples):
        x = np.asarray(samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("samples must be a nonempty (N,) or (N, q) array")
        self.samples = x

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def q(self) -> int:
        return self.samples.shape[1]

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def marginal(self, c: int) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.samples[:, c])

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("empirical measure has non-finite samples")

    def __repr__(self):
        return f"EmpiricalMeasure(n={self.n}, q={self.q})"


def dirac(q: int) -> EmpiricalMeasure:
    """Dirac mass at the origin of R^q."""
    return EmpiricalMeasure(np.zeros((1, q)))


@dataclass(frozen=True)
class LiftedFunction:
    """A function of measures, evaluated on its particle representation."""

    evaluate: Callable[[EmpiricalMeasure], float]
    name: str = "phi"

    def __call__(self, mu: EmpiricalMeasure) -> float:
        return float(self.evaluate(mu))

    @classmethod
    def mean(cls, c: int = 0) -> "LiftedFunction":
        return cls(lambda mu: mu.samples[:, c].mean(), name=f"mean[{c}]")

    @classmethod
    def second_moment(cls) -> "LiftedFunction":
        return cls(second_moment, name="second_moment")


def wasserstein2_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W2 between two equal-size empirical laws on the line (sorted coupling)."""
    if mu.q != 1 or nu.q != 1:
        raise ValueError("wasserstein2_1d needs one-dimensional samples")
    if mu.n != nu.n:
        raise ValueError(f"sample counts differ: {mu.n} vs {nu.n}")
    a = np.sort(mu.samples[:, 0])
    b = np.sort(nu.samples[:, 0])
    return float(np.sqrt(np.mean((a - b) ** 2)))


def wasserstein2_exact_smallN(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact W2 for equal-size clouds of at most 10 points, any dimension.

    For uniform weights on equal supports an optimal coupling is a permutation,
    so the optimal assignment on squared Euclidean costs is exact.
    """
    if mu.n != nu.n:
        raise ValueError(f"sample counts differ: {mu.n} vs {nu.n}")
    if mu.n > SMALL_N_MAX:
        raise ValueError(f"small-N oracle limited to N <= {SMALL_N_MAX}, got {mu.n}")
    if mu.q != nu.q:
        raise ValueError("dimension mismatch")
    diff = mu.samples[:, None, :] - nu.samples[None, :, :]
    cost = np.einsum("ijk,ijk->ij", diff, diff)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].sum() / mu.n))


def second_moment(mu: EmpiricalMeasure) -> float:
    return float(np.mean(np.sum(mu.samples**2, axis=1)))


def lions_derivative_estimate(phi, mu: EmpiricalMeasure, p: int, eps: float | None = None) -> np.ndarray:
    """Estimate the measure derivative of ``phi`` at ``mu`` evaluated at sample ``p``.

    Moves particle ``p`` by ``+-eps`` along each coordinate and scales the
    central difference by ``N``: under the empirical inner product a
    single-particle shift has weight ``1/N``.  The default step is
    ``1e-4 * (1 + |x_p|)``.
    """
    x = mu.samples
    if not 0 <= p < mu.n:
        raise IndexError(f"sample index {p} out of range")
    if eps is None:
        eps = 1e-4 * (1.0 + float(np.linalg.norm(x[p])))
    if not eps > 0:
        raise ValueError("eps must be positive")
    out = np.empty(mu.q)
    work = x.copy()
    for c in range(mu.q):
        work[p, c] = x[p, c] + eps
        up = float(phi(EmpiricalMeasure(work)))
        work[p, c] = x[p, c] - eps
        dn = float(phi(EmpiricalMeasure(work)))
        work[p, c] = x[p, c]
        if not (np.isfinite(up) and np.isfinite(dn)):
            raise FloatingPointError(f"lifted function not finite near sample {p}")
        out[c] = mu.n * (up - dn) / (2.0 * eps)
    return out
