"""Domain types and evaluation metrics for free-support barycenter problems.

A barycenter problem bundles ``N`` discrete distributions sharing an ambient
dimension ``d`` with a target support count ``m``.  Solver iterates are held
in :class:`BarycenterState`: one transport plan per distribution, barycenter
weights on the unit simplex, and the free support matrix.  The module also
provides the three quantities every solver reports: the coupled objective,
the primal infeasibility driven to zero, and the exact-LP objective value
used for all cross-method comparisons.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from .errors import ValidationError

WEIGHT_SUM_TOL = 1e-12
STATE_TOL = 1e-9

_T = TypeVar("_T")
_R = TypeVar("_R")


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out is a:
        out = out.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class DiscreteDistribution:
    """A discrete probability distribution with finite support.

    Parameters
    ----------
    support : ndarray, shape (n, d)
        Support points, one per row.
    weights : ndarray, shape (n,)
        Nonnegative probabilities.  Must sum to 1 within ``1e-12``; they are
        renormalized exactly on construction.
    """

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        support = np.atleast_2d(np.asarray(self.support, dtype=np.float64))
        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if support.ndim != 2 or support.shape[0] < 1:
            raise ValidationError(f"support must be a (n, d) array, got shape {support.shape}")
        if weights.shape[0] != support.shape[0]:
            raise ValidationError(
                f"{weights.shape[0]} weights for {support.shape[0]} support points"
            )
        if not np.all(np.isfinite(support)) or not np.all(np.isfinite(weights)):
            raise ValidationError("support and weights must be finite")
        if np.any(weights < -WEIGHT_SUM_TOL):
            raise ValidationError(f"negative weight {weights.min():.3e}")
        weights = np.maximum(weights, 0.0)
        total = weights.sum()
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValidationError(f"weights sum to {total!r}, expected 1 within {WEIGHT_SUM_TOL}")
        if total != 1.0:
            weights = weights / total
        object.__setattr__(self, "support", _readonly(support))
        object.__setattr__(self, "weights", _readonly(weights))

    @property
    def n(self) -> int:
        return self.support.shape[0]

    @property
    def d(self) -> int:
        return self.support.shape[1]

    def drop_zero_weights(self, label: str = "distribution") -> "DiscreteDistribution":
        """Return a copy without zero-weight support points (warns if any)."""
        keep = self.weights > 0.0
        if keep.all():
            return self
        if not keep.any():
            raise ValidationError(f"{label} has no positive-weight support point")
        warnings.warn(
            f"{label}: dropped {int((~keep).sum())} zero-weight support point(s)",
            stacklevel=2,
        )
        return DiscreteDistribution(self.support[keep], self.weights[keep])


class BarycenterProblem:
    """``N`` distributions sharing dimension ``d`` plus a target support count.

    Zero-weight support points are dropped on ingestion (with a warning):
    they would force identically-zero plan columns and break the
    multiplicative baseline updates.

    Attributes
    ----------
    distributions : tuple of DiscreteDistribution
    m : int
        Number of barycenter support points.
    supports_all : ndarray, shape (n_total, d)
        All supports concatenated in ascending-t order.
    b_all : ndarray, shape (n_total,)
        Concatenated weight vectors ``(b^1; ...; b^N)``.
    starts : ndarray, shape (N + 1,)
        Column offsets of each distribution's block in the stacked layout.
    """

    def __init__(self, distributions: Sequence[DiscreteDistribution], m: int):
        dists = tuple(
            dist.drop_zero_weights(f"distribution {t}") for t, dist in enumerate(distributions)
        )
        if len(dists) < 1:
            raise ValidationError("a problem needs at least one distribution")
        if int(m) < 1:
            raise ValidationError(f"target support count must be >= 1, got {m}")
        d = dists[0].d
        for t, dist in enumerate(dists):
            if dist.d != d:
                raise ValidationError(f"distribution {t} has dimension {dist.d}, expected {d}")
        self.distributions = dists
        self.m = int(m)
        self.supports_all = _readonly(np.vstack([dist.support for dist in dists]))
        self.b_all = _readonly(np.concatenate([dist.weights for dist in dists]))
        sizes = np.array([dist.n for dist in dists], dtype=np.intp)
        self.starts = np.concatenate(([0], np.cumsum(sizes)))
        self.starts.flags.writeable = False
        self.b_norm = float(np.linalg.norm(self.b_all))

    @property
    def N(self) -> int:
        return len(self.distributions)

    @property
    def d(self) -> int:
        return self.distributions[0].d

    @property
    def n_total(self) -> int:
        return int(self.starts[-1])

    def split(self, stacked: np.ndarray) -> list[np.ndarray]:
        """Split a stacked ``(m, n_total)`` array into per-distribution blocks."""
        return [
            stacked[:, self.starts[t]: self.starts[t + 1]].copy() for t in range(self.N)
        ]


@dataclass(frozen=True)
class BarycenterState:
    """Solver iterate: transport plans, barycenter weights, support points.

    Plans are entrywise nonnegative with column sums matching each ``b^t``
    (checked against the problem by the solvers); ``w`` lies on the unit
    simplex within ``1e-9``.  The row-sum residual ``Z^t e - w`` is the
    primal infeasibility being driven to zero and is reported, not enforced.
    """

    plans: tuple[np.ndarray, ...]
    w: np.ndarray
    x: np.ndarray

    def __post_init__(self) -> None:
        plans = tuple(_readonly(Z) for Z in self.plans)
        w = np.asarray(self.w, dtype=np.float64).ravel()
        x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        if len(plans) < 1:
            raise ValidationError("state needs at least one plan")
        m = w.size
        for t, Z in enumerate(plans):
            if Z.ndim != 2 or Z.shape[0] != m:
                raise ValidationError(f"plan {t} has shape {Z.shape}, expected {m} rows")
            if Z.min(initial=0.0) < 0.0:
                raise ValidationError(f"plan {t} has a negative entry")
        if x.shape[0] != m:
            raise ValidationError(f"support matrix has {x.shape[0]} rows, expected {m}")
        if not np.all(np.isfinite(w)) or not np.all(np.isfinite(x)):
            raise ValidationError("state must be finite")
        if w.min(initial=0.0) < 0.0 or abs(w.sum() - 1.0) > STATE_TOL:
            raise ValidationError("weights must be nonnegative and sum to 1 within 1e-9")
        object.__setattr__(self, "plans", plans)
        object.__setattr__(self, "w", _readonly(w))
        object.__setattr__(self, "x", _readonly(x))

    @property
    def m(self) -> int:
        return self.w.size


@dataclass
class SolveReport:
    """Summary of one barycenter solve."""

    method: str
    objval: float
    pinfeas: float
    outer_iterations: int
    inner_iterations: int
    wall_time_s: float
    m: int
    seed: int
    converged: bool
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.objval < 0.0 or self.pinfeas < 0.0:
            raise ValidationError("objval and pinfeas must be nonnegative")


def cost_matrix(x: np.ndarray, P: DiscreteDistribution) -> np.ndarray:
    """Squared-distance cost matrix between support candidates and ``P``.

    Entry ``(i, j)`` is ``||x_i - a_j||^2`` for the ``j``-th support point
    ``a_j`` of ``P``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != P.d:
        raise ValidationError(f"x has dimension {x.shape[1]}, distribution has {P.d}")
    return _pairwise_sq_dists(x, P.support)


def _pairwise_sq_dists(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    # Coordinate-wise accumulation: avoids BLAS so results are bit-identical
    # across thread counts.
    m, d = x.shape
    out = np.zeros((m, a.shape[0]))
    for k in range(d):
        diff = x[:, k][:, None] - a[:, k][None, :]
        out += diff * diff
    return out


def stacked_cost(x: np.ndarray, problem: BarycenterProblem) -> np.ndarray:
    """Cost matrices of all distributions, concatenated column-wise."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape != (problem.m, problem.d):
        raise ValidationError(f"x has shape {x.shape}, expected {(problem.m, problem.d)}")
    return _pairwise_sq_dists(x, problem.supports_all)


def block_row_sums(stacked: np.ndarray, problem: BarycenterProblem) -> np.ndarray:
    """Row sums of each block of a stacked plan array, shape ``(m, N)``."""
    return np.add.reduceat(stacked, problem.starts[:-1], axis=1)


def objective(state: BarycenterState, problem: BarycenterProblem) -> float:
    """Coupled transport objective ``(1/N) sum_t <Z^t, F^t(x)>``."""
    if len(state.plans) != problem.N:
        raise ValidationError(f"{len(state.plans)} plans for {problem.N} distributions")
    total = 0.0
    for t, (Z, P) in enumerate(zip(state.plans, problem.distributions)):
        if Z.shape[1] != P.n:
            raise ValidationError(f"plan {t} has {Z.shape[1]} columns, expected {P.n}")
        total += float(np.sum(Z * cost_matrix(state.x, P)))
    return total / problem.N


def pinfeas(state: BarycenterState) -> float:
    """Primal infeasibility ``max_t ||Z^t e - w|| / (1 + ||b||)``.

    ``b`` is the concatenation of all plan column sums, which equal the
    marginals ``b^t`` for any in-contract state.
    """
    col_sums = np.concatenate([Z.sum(axis=0) for Z in state.plans])
    b_norm = float(np.linalg.norm(col_sums))
    worst = max(float(np.linalg.norm(Z.sum(axis=1) - state.w)) for Z in state.plans)
    return worst / (1.0 + b_norm)


def evaluate_objval(
    w: np.ndarray,
    x: np.ndarray,
    problem: BarycenterProblem,
    threads: int = 1,
) -> float:
    """Exact objective of ``(w, x)``: mean squared transport distance to the data.

    Re-solves the ``N`` transportation LPs exactly with the barycenter fixed.
    This is the canonical ``objval`` reported in every comparison, independent
    of whatever coupled iterate a solver ended on.
    """
    from .transport import TransportInstance, solve_transport

    w = np.asarray(w, dtype=np.float64).ravel()
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if not np.all(np.isfinite(x)):
        raise ValidationError("support matrix must be finite")
    if w.size != x.shape[0]:
        raise ValidationError(f"{w.size} weights for {x.shape[0]} support rows")

    def one(P: DiscreteDistribution) -> float:
        inst = TransportInstance(cost_matrix(x, P), w, P.weights)
        return solve_transport(inst).value

    values = parallel_map(one, problem.distributions, threads)
    return math.fsum(values) / problem.N


def parallel_map(
    fn: Callable[[_T], _R], items: Iterable[_T], threads: int = 1
) -> list[_R]:
    """Map ``fn`` over ``items`` with results in input order.

    With ``threads > 1`` work is dispatched to a thread pool; collection
    order is fixed by index so output never depends on scheduling.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))
