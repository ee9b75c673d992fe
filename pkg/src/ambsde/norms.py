"""Exponentially weighted L2 norm of a (y, z, k) field."""

from __future__ import annotations

import numpy as np


def beta_norm(y, z, k, beta: float, dt: float, intensities) -> float:
    """E sum_i e^{beta t_i} (|y|^2 + |z|^2 + sum_j |k_j|^2 lambda_j) dt.

    Left rectangle rule over the grid points 0..n-1 of [0, T+M] (arrays carry
    n+1 time rows; the last row is the right endpoint and gets no weight),
    averaged over particles.

    Parameters
    ----------
    y : (n+1, N) array
    z : (n+1, N, d) array
    k : (n+1, N, m) array
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0] - 1
    lam = np.asarray(intensities, dtype=float)
    per_time = np.mean(y[:n] ** 2, axis=1)
    z = np.asarray(z, dtype=float)
    if z.size:
        per_time = per_time + np.mean(np.sum(z[:n] ** 2, axis=2), axis=1)
    k = np.asarray(k, dtype=float)
    if k.size and lam.size:
        per_time = per_time + np.mean(k[:n] ** 2 @ lam, axis=1)
    w = np.exp(beta * dt * np.arange(n))
    return float(np.sum(w * per_time) * dt)
