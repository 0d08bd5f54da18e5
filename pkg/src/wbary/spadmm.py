"""Semi-proximal ADMM for the proximal transport QP subproblem.

Each outer iteration of the barycenter solver freezes the cost matrices and
proximal anchors and must solve a linearly constrained strongly convex QP:
plans stay in their column-sum sets, the weight vector stays on the unit
simplex, and the row-sum coupling ``Z^t e = w`` is enforced through
multipliers.  Choosing the semi-proximal operator ``(sigma_t - alpha) I -
beta A^t`` with ``sigma_t = alpha + beta n_t`` diagonalises the plan block,
so one sweep costs only simplex projections:

* plan block: ``Z^t <- proj(H^t / sigma_t)`` column-wise, where ``H^t``
  collects the proximal, cost, and multiplier terms;
* weight block: one projection of an averaged vector onto the simplex;
* multipliers: ``lambda^t += tau * beta * (Z^t e - w)``.

Progress is measured by the scaled primal residual and the relative
primal-dual gap; the dual value comes from the explicit dual function
(projection residuals of the shifted anchors), stored with the sign that
makes ``|obj_p + obj_d|`` vanish at the optimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import NumericalError, ValidationError
from .projections import project_sigma, project_simplex

TAU_MAX = (1.0 + math.sqrt(5.0)) / 2.0
MEMBERSHIP_TOL = 1e-9


@dataclass(frozen=True)
class SpadmmConfig:
    """Inner-solver parameters.

    ``beta`` is rebalanced every ``beta_update_every`` sweeps: doubled when
    the primal residual exceeds ``beta_ratio`` times the dual residual
    (measured as the ``beta``-scaled weight change), halved in the opposite
    case, and clamped to ``[beta_min, beta_max]``.  Multipliers are kept
    across rebalances.
    """

    beta0: float = 1.0
    tau: float = 1.618
    max_sweeps: int = 10_000
    adapt_beta: bool = True
    beta_update_every: int = 50
    beta_ratio: float = 10.0
    beta_factor: float = 2.0
    beta_min: float = 1e-4
    beta_max: float = 1e4

    def __post_init__(self) -> None:
        if self.beta0 <= 0.0:
            raise ValidationError(f"beta0 must be positive, got {self.beta0}")
        if not 0.0 < self.tau < TAU_MAX:
            raise ValidationError(f"tau must lie in (0, {TAU_MAX}), got {self.tau}")
        if self.max_sweeps < 1:
            raise ValidationError("max_sweeps must be >= 1")


class QpSubproblem:
    """Frozen data of one outer iteration's QP.

    Parameters
    ----------
    costs : sequence of (m, n_t) arrays
        Squared-distance cost matrices at the frozen support.
    anchor_plans : sequence of (m, n_t) arrays
        Proximal anchors for the plans; must lie in their column-sum sets.
    anchor_w : (m,) array
        Proximal anchor for the weights; must lie on the unit simplex.
    alpha : float
        Proximal weight, positive.
    marginals : sequence of (n_t,) arrays
        Column masses ``b^t`` of each distribution.
    """

    def __init__(
        self,
        costs: Sequence[np.ndarray],
        anchor_plans: Sequence[np.ndarray],
        anchor_w: np.ndarray,
        alpha: float,
        marginals: Sequence[np.ndarray],
    ):
        cost_all = np.hstack([np.asarray(C, dtype=np.float64) for C in costs])
        anchor_all = np.hstack([np.asarray(Z, dtype=np.float64) for Z in anchor_plans])
        b_all = np.concatenate([np.asarray(b, dtype=np.float64).ravel() for b in marginals])
        sizes = np.array([np.asarray(b).size for b in marginals], dtype=np.intp)
        starts = np.concatenate(([0], np.cumsum(sizes)))
        self._init_stacked(cost_all, anchor_all, np.asarray(anchor_w, np.float64), alpha, b_all, starts)

    @classmethod
    def from_stacked(cls, cost_all, anchor_all, anchor_w, alpha, b_all, starts) -> "QpSubproblem":
        sub = cls.__new__(cls)
        sub._init_stacked(cost_all, anchor_all, anchor_w, alpha, b_all, starts)
        return sub

    def _init_stacked(self, cost_all, anchor_all, anchor_w, alpha, b_all, starts) -> None:
        if alpha <= 0.0 or not np.isfinite(alpha):
            raise ValidationError(f"proximal weight must be positive, got {alpha}")
        if cost_all.shape != anchor_all.shape or cost_all.shape[1] != b_all.size:
            raise ValidationError("cost, anchors, and marginals have inconsistent shapes")
        col_sums = np.add.reduceat(anchor_all, np.minimum(np.arange(b_all.size), b_all.size - 1), axis=1) \
            if False else anchor_all.sum(axis=0)
        if np.max(np.abs(col_sums - b_all)) > MEMBERSHIP_TOL or anchor_all.min() < -MEMBERSHIP_TOL:
            raise ValidationError("anchor plans must satisfy the column-sum constraints")
        if abs(anchor_w.sum() - 1.0) > MEMBERSHIP_TOL or anchor_w.min() < -MEMBERSHIP_TOL:
            raise ValidationError("anchor weights must lie on the unit simplex")
        if np.any(b_all <= 0.0):
            raise ValidationError("marginals must be strictly positive")
        self.cost_all = cost_all
        self.anchor_all = anchor_all
        self.anchor_w = anchor_w
        self.alpha = float(alpha)
        self.b_all = b_all
        self.starts = np.asarray(starts, dtype=np.intp)
        self.N = len(self.starts) - 1
        self.m = cost_all.shape[0]
        self.n_ts = np.diff(self.starts)
        self.col_t = np.repeat(np.arange(self.N), self.n_ts)
        self.b_norm = float(np.linalg.norm(b_all))
        # Dual-value constant: squared norms of the anchors.
        self.anchor_sq = float(np.sum(anchor_all * anchor_all) + np.sum(anchor_w * anchor_w))

    def plans_of(self, stacked: np.ndarray) -> list[np.ndarray]:
        return [stacked[:, self.starts[t]: self.starts[t + 1]].copy() for t in range(self.N)]


@dataclass(frozen=True)
class SpadmmState:
    """One inner iterate: stacked plans, weights, multipliers, penalty."""

    Z_all: np.ndarray
    w: np.ndarray
    lam: np.ndarray
    beta: float
    tau: float = 1.618

    def __post_init__(self) -> None:
        if self.beta <= 0.0:
            raise ValidationError(f"penalty must be positive, got {self.beta}")
        if not 0.0 < self.tau < TAU_MAX:
            raise ValidationError(f"step factor must lie in (0, {TAU_MAX}), got {self.tau}")

    def sigma(self, sub: QpSubproblem) -> np.ndarray:
        """Per-block proximal shifts ``alpha + beta * n_t`` (PSD guarantee)."""
        return sub.alpha + self.beta * sub.n_ts.astype(np.float64)


@dataclass(frozen=True)
class Residuals:
    """Scaled primal residual, relative gap, and both objective values."""

    eta_p: float
    eta_gap: float
    eta: float
    obj_p: float
    obj_d: float


@dataclass
class SpadmmStats:
    sweeps: int
    converged: bool
    residuals: Residuals
    beta: float


def _block_row_sums(Z_all: np.ndarray, sub: QpSubproblem) -> np.ndarray:
    return np.add.reduceat(Z_all, sub.starts[:-1], axis=1)


def spadmm_step(state: SpadmmState, sub: QpSubproblem) -> SpadmmState:
    """One sweep: plan projections, weight projection, multiplier update."""
    alpha, beta, tau = sub.alpha, state.beta, state.tau
    sigma = state.sigma(sub)
    S = _block_row_sums(state.Z_all, sub)
    shift = beta * state.w[:, None] - state.lam
    H = (
        (sigma[sub.col_t] - alpha) * state.Z_all
        - beta * S[:, sub.col_t]
        + alpha * sub.anchor_all
        - sub.cost_all / sub.N
        + shift[:, sub.col_t]
    )
    if not np.all(np.isfinite(H)):
        raise NumericalError("non-finite intermediate in plan update (overflow)")
    Z_new = project_sigma(H / sigma[sub.col_t], sub.b_all)
    S_new = _block_row_sums(Z_new, sub)
    w_arg = (beta * S_new.sum(axis=1) + state.lam.sum(axis=1) + alpha * sub.anchor_w) / (
        beta * sub.N + alpha
    )
    w_new = project_simplex(w_arg, 1.0)
    lam_new = state.lam + tau * beta * (S_new - w_new[:, None])
    return SpadmmState(Z_new, w_new, lam_new, beta, tau)


def residuals(state: SpadmmState, sub: QpSubproblem) -> Residuals:
    """Stopping quantities at the current iterate.

    ``obj_p`` is the primal QP value at ``(Z, w)``; ``obj_d`` is the negative
    of the dual function at ``lam``, so the gap ``|obj_p + obj_d|`` shrinks
    to zero at the optimum.
    """
    alpha = sub.alpha
    S = _block_row_sums(state.Z_all, sub)
    resid = S - state.w[:, None]
    primal_norm = float(np.linalg.norm(resid))
    eta_p = primal_norm / (state.tau * state.beta * (1.0 + sub.b_norm))

    dZ = state.Z_all - sub.anchor_all
    dw = state.w - sub.anchor_w
    obj_p = float(
        np.sum(state.Z_all * sub.cost_all) / sub.N
        + 0.5 * alpha * (np.sum(dZ * dZ) + np.sum(dw * dw))
    )

    G = sub.anchor_all - sub.cost_all / (alpha * sub.N) - state.lam[:, sub.col_t] / alpha
    PG = project_sigma(G, sub.b_all)
    H = sub.anchor_w + state.lam.sum(axis=1) / alpha
    PH = project_simplex(H, 1.0)
    rG = PG - G
    rH = PH - H
    dual_val = 0.5 * alpha * (
        float(np.sum(rG * rG)) - float(np.sum(G * G))
        + float(np.sum(rH * rH)) - float(np.sum(H * H))
        + sub.anchor_sq
    )
    obj_d = -dual_val
    eta_gap = abs(obj_p + obj_d) / (1.0 + abs(obj_p) + abs(obj_d))
    return Residuals(eta_p, eta_gap, max(eta_p, eta_gap), obj_p, obj_d)


def initial_state(sub: QpSubproblem, config: SpadmmConfig) -> SpadmmState:
    """Cold start at the anchors with zero multipliers."""
    return SpadmmState(
        sub.anchor_all.copy(),
        sub.anchor_w.copy(),
        np.zeros((sub.m, sub.N)),
        config.beta0,
        config.tau,
    )


def solve_subproblem(
    sub: QpSubproblem,
    eps: float,
    config: SpadmmConfig | None = None,
    warm: SpadmmState | None = None,
) -> tuple[SpadmmState, SpadmmStats]:
    """Iterate sweeps until ``max(eta_p, 0.1 * eta_gap) <= eps``.

    Returns the final state and solve statistics.  Hitting the sweep cap is
    not an error: the best iterate comes back flagged as not converged and
    the outer loop decides what to do with it.
    """
    if eps <= 0.0:
        raise ValidationError(f"tolerance must be positive, got {eps}")
    config = config or SpadmmConfig()
    state = warm if warm is not None else initial_state(sub, config)
    if state.Z_all.shape != sub.cost_all.shape or state.lam.shape != (sub.m, sub.N):
        raise ValidationError("warm-start state does not match the subproblem shapes")

    res = residuals(state, sub)
    if max(res.eta_p, 0.1 * res.eta_gap) <= eps:
        return state, SpadmmStats(0, True, res, state.beta)

    w_prev = state.w
    for sweep in range(1, config.max_sweeps + 1):
        state = spadmm_step(state, sub)
        res = residuals(state, sub)
        if max(res.eta_p, 0.1 * res.eta_gap) <= eps:
            return state, SpadmmStats(sweep, True, res, state.beta)
        if config.adapt_beta and sweep % config.beta_update_every == 0:
            S = _block_row_sums(state.Z_all, sub)
            primal = float(np.linalg.norm(S - state.w[:, None]))
            dual = state.beta * float(np.linalg.norm(state.w - w_prev))
            beta = state.beta
            if primal > config.beta_ratio * dual:
                beta = min(beta * config.beta_factor, config.beta_max)
            elif dual > config.beta_ratio * primal:
                beta = max(beta / config.beta_factor, config.beta_min)
            if beta != state.beta:
                state = replace(state, beta=beta)
        w_prev = state.w
    return state, SpadmmStats(config.max_sweeps, False, res, state.beta)
