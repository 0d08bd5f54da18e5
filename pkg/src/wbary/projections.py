"""Exact Euclidean projections onto scaled probability simplices.

These projections are the computational kernel of the inner ADMM solver: every
plan update is a batch of independent column projections onto ``{z >= 0,
sum(z) = b_j}`` and every weight update is one projection onto the unit
simplex.  Both use the exact sort-and-threshold algorithm, so outputs contain
exact zeros and column sums match the requested radius to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class SimplexTarget:
    """Radius of a scaled simplex ``{z >= 0, sum(z) = radius}``."""

    radius: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.radius) or self.radius <= 0.0:
            raise ValidationError(f"simplex radius must be positive, got {self.radius!r}")


def project_simplex(v: np.ndarray, r: float = 1.0) -> np.ndarray:
    """Project ``v`` onto the scaled simplex ``{z >= 0, sum(z) = r}``.

    Uses the sort-based threshold rule: the projection is
    ``z_i = max(v_i - theta, 0)`` for the unique ``theta`` making the sum
    equal ``r``.  Exact up to rounding; ties at the threshold resolve
    through the ``max`` formula.

    Parameters
    ----------
    v : ndarray, shape (m,)
        Point to project.
    r : float
        Simplex radius, must be positive.

    Returns
    -------
    ndarray, shape (m,)
        The Euclidean projection; nonnegative, sums to ``r``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError(f"expected a nonempty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("cannot project a non-finite vector")
    if not np.isfinite(r) or r <= 0.0:
        raise ValidationError(f"simplex radius must be positive, got {r!r}")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - r
    ks = np.arange(1, v.size + 1)
    # Largest k with u_k > (sum of k largest - r)/k; always holds at k = 1.
    k = np.nonzero(u * ks > css)[0][-1]
    theta = css[k] / (k + 1.0)
    return np.maximum(v - theta, 0.0)


def project_sigma(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project each column ``j`` of ``M`` onto the simplex of radius ``b_j``.

    The result lies in the transport-plan set with prescribed column sums
    ``b``: entrywise nonnegative, column ``j`` summing to ``b_j``.  Columns
    are independent, so this is a vectorised batch of
    :func:`project_simplex` calls.

    Parameters
    ----------
    M : ndarray, shape (m, n)
        Matrix whose columns are projected.
    b : ndarray, shape (n,)
        Strictly positive column masses.

    Returns
    -------
    ndarray, shape (m, n)
    """
    M = np.asarray(M, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if M.ndim != 2 or b.ndim != 1 or M.shape[1] != b.size:
        raise ValidationError(
            f"shape mismatch: matrix {M.shape} versus {b.size} column masses"
        )
    if M.shape[0] == 0 or M.shape[1] == 0:
        raise ValidationError("cannot project an empty matrix")
    if not np.all(np.isfinite(M)):
        raise ValidationError("cannot project a non-finite matrix")
    if np.any(b <= 0.0) or not np.all(np.isfinite(b)):
        raise ValidationError("column masses must be strictly positive and finite")
    m = M.shape[0]
    u = -np.sort(-M, axis=0)
    css = np.cumsum(u, axis=0) - b[None, :]
    ks = np.arange(1, m + 1, dtype=np.float64)[:, None]
    hold = u * ks > css
    # Last row index where the threshold condition holds, per column.
    k = (m - 1) - np.argmax(hold[::-1, :], axis=0)
    theta = css[k, np.arange(M.shape[1])] / (k + 1.0)
    return np.maximum(M - theta[None, :], 0.0)
