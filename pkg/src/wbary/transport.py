"""Exact transportation-LP solver.

Solves ``min <C, Z>`` over nonnegative plans with prescribed row and column
sums by the network simplex method on the bipartite transportation graph.
Exactness matters here: the headline comparison quantity of the whole toolkit
(``objval``) is defined through this solver, and the test suite certifies its
output against an exhaustive basic-solution enumeration plus dual optimality
certificates.

The simplex uses a most-negative-reduced-cost pivot by default and falls back
to Bland's rule after a run of degenerate pivots, which guarantees finite
termination.  Potentials are recomputed from the spanning tree every pivot to
keep rounding out of the optimality test.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .model import DiscreteDistribution, _pairwise_sq_dists

MARGINAL_TOL = 1e-12
BRUTE_FORCE_MAX_NODES = 8
# Consecutive degenerate pivots tolerated before switching to Bland's rule.
_DEGENERATE_RUN = 100


@dataclass(frozen=True)
class TransportInstance:
    """Costs and marginals of one transportation LP.

    ``cost`` is entrywise nonnegative; ``p`` and ``q`` are nonnegative and
    sum to 1 within ``1e-12`` (renormalized exactly on construction).
    """

    cost: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self) -> None:
        cost = np.atleast_2d(np.asarray(self.cost, dtype=np.float64))
        p = np.asarray(self.p, dtype=np.float64).ravel()
        q = np.asarray(self.q, dtype=np.float64).ravel()
        if cost.shape != (p.size, q.size):
            raise ValidationError(
                f"cost has shape {cost.shape}, marginals have sizes {p.size}, {q.size}"
            )
        if not np.all(np.isfinite(cost)) or cost.min() < 0.0:
            raise ValidationError("cost matrix must be finite and nonnegative")
        if p.min(initial=0.0) < 0.0 or q.min(initial=0.0) < 0.0:
            raise ValidationError("marginals must be nonnegative")
        sp, sq = p.sum(), q.sum()
        if abs(sp - sq) > MARGINAL_TOL:
            raise ValidationError(f"marginal mismatch: sums {sp!r} vs {sq!r}")
        if abs(sp - 1.0) > MARGINAL_TOL or abs(sq - 1.0) > MARGINAL_TOL:
            raise ValidationError("marginals must sum to 1 within 1e-12")
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "p", p / sp if sp != 1.0 else p)
        object.__setattr__(self, "q", q / sq if sq != 1.0 else q)


@dataclass(frozen=True)
class TransportSolution:
    """Optimal plan and value; dual potentials when the solver produces them."""

    plan: np.ndarray
    value: float
    row_duals: np.ndarray | None = None
    col_duals: np.ndarray | None = None


def _compensated_cost(plan: np.ndarray, cost: np.ndarray) -> float:
    nz = plan > 0.0
    return math.fsum((plan[nz] * cost[nz]).tolist())


def solve_transport(instance: TransportInstance) -> TransportSolution:
    """Solve the transportation LP exactly.

    Zero-mass rows and columns are eliminated before the simplex runs and
    reinserted as zero rows/columns of the plan; their dual potentials are
    filled in so the certificate ``u_i + v_j <= C_ij`` holds everywhere.
    """
    cost, p, q = instance.cost, instance.p, instance.q
    rows = np.nonzero(p > 0.0)[0]
    cols = np.nonzero(q > 0.0)[0]
    sub_cost = cost[np.ix_(rows, cols)]
    flows, u_sub, v_sub = _network_simplex(sub_cost, p[rows], q[cols])

    plan = np.zeros_like(cost)
    plan[np.ix_(rows, cols)] = flows
    u = np.empty(p.size)
    v = np.empty(q.size)
    u[rows] = u_sub
    v[cols] = v_sub
    dead_rows = np.setdiff1d(np.arange(p.size), rows, assume_unique=True)
    dead_cols = np.setdiff1d(np.arange(q.size), cols, assume_unique=True)
    # Potentials for eliminated nodes: tight enough to stay dual feasible.
    for i in dead_rows:
        u[i] = np.min(cost[i, cols] - v[cols])
    for j in dead_cols:
        v[j] = np.min(cost[:, j] - u)
    return TransportSolution(plan, _compensated_cost(plan, cost), u, v)


def w2_distance(P: DiscreteDistribution, Q: DiscreteDistribution) -> float:
    """Wasserstein distance: sqrt of the optimal squared-cost transport value."""
    if P.d != Q.d:
        raise ValidationError(f"dimension mismatch: {P.d} vs {Q.d}")
    cost = _pairwise_sq_dists(np.asarray(P.support), np.asarray(Q.support))
    value = solve_transport(TransportInstance(cost, P.weights, Q.weights)).value
    return math.sqrt(max(value, 0.0))


def _northwest_corner(p: np.ndarray, q: np.ndarray):
    """Initial basic feasible solution; returns exactly m+n-1 basic cells."""
    m, n = p.size, q.size
    rem_p = p.copy()
    rem_q = q.copy()
    flows = np.zeros((m, n))
    basis: list[tuple[int, int]] = []
    i = j = 0
    while True:
        z = min(rem_p[i], rem_q[j])
        flows[i, j] = z
        basis.append((i, j))
        rem_p[i] = max(rem_p[i] - z, 0.0)
        rem_q[j] = max(rem_q[j] - z, 0.0)
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif rem_p[i] <= rem_q[j]:
            i += 1
        else:
            j += 1
    return flows, basis


def _tree_potentials(cost: np.ndarray, basis: list[tuple[int, int]]):
    """Dual potentials from the basis tree: u_i + v_j = C_ij on basic cells."""
    m, n = cost.shape
    adj: list[list[tuple[int, int, int]]] = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append((m + j, i, j))
        adj[m + j].append((i, i, j))
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    stack = [0]
    seen = np.zeros(m + n, dtype=bool)
    seen[0] = True
    while stack:
        node = stack.pop()
        for other, i, j in adj[node]:
            if seen[other]:
                continue
            seen[other] = True
            if other >= m:
                v[j] = cost[i, j] - u[i]
            else:
                u[i] = cost[i, j] - v[j]
            stack.append(other)
    if not seen.all():
        raise NumericalError("basis does not span the transportation graph")
    return u, v


def _tree_path(basis: list[tuple[int, int]], m: int, n: int, i0: int, j0: int):
    """Basic cells on the unique tree path from row node i0 to column node j0."""
    adj: dict[int, list[tuple[int, tuple[int, int]]]] = {k: [] for k in range(m + n)}
    for i, j in basis:
        adj[i].append((m + j, (i, j)))
        adj[m + j].append((i, (i, j)))
    target = m + j0
    parent: dict[int, tuple[int, tuple[int, int]]] = {i0: (-1, (-1, -1))}
    stack = [i0]
    while stack:
        node = stack.pop()
        if node == target:
            break
        for other, cell in adj[node]:
            if other not in parent:
                parent[other] = (node, cell)
                stack.append(other)
    path: list[tuple[int, int]] = []
    node = target
    while node != i0:
        prev, cell = parent[node]
        path.append(cell)
        node = prev
    return path


def _network_simplex(cost: np.ndarray, p: np.ndarray, q: np.ndarray):
    m, n = cost.shape
    flows, basis = _northwest_corner(p, q)
    scale = max(1.0, float(np.abs(cost).max(initial=0.0)))
    tol = 1e-12 * scale
    max_pivots = 100 * m * n + 10_000
    degenerate_run = 0
    bland = False
    col_index = np.arange(n)

    for _ in range(max_pivots):
        u, v = _tree_potentials(cost, basis)
        reduced = cost - u[:, None] - v[None, :]
        for i, j in basis:
            reduced[i, j] = 0.0
        if bland:
            neg = np.nonzero(reduced < -tol)
            if neg[0].size == 0:
                return flows, u, v
            i0, j0 = int(neg[0][0]), int(neg[1][0])
        else:
            flat = int(np.argmin(reduced))
            i0, j0 = divmod(flat, n)
            if reduced[i0, j0] >= -tol:
                return flows, u, v

        path = _tree_path(basis, m, n, i0, j0)
        # Walking back from the column node, even positions share a node with
        # the entering cell's column side and lose flow; odd positions gain.
        minus = path[0::2]
        theta = min(flows[c] for c in minus)
        leaving = min(c for c in minus if flows[c] <= theta)
        for idx, c in enumerate(path):
            flows[c] = max(flows[c] - theta, 0.0) if idx % 2 == 0 else flows[c] + theta
        flows[i0, j0] = theta
        basis.remove(leaving)
        basis.append((i0, j0))
        flows[leaving] = 0.0

        if theta <= 1e-15:
            degenerate_run += 1
            if degenerate_run >= _DEGENERATE_RUN:
                bland = True
        else:
            degenerate_run = 0
    raise NumericalError(f"network simplex exceeded {max_pivots} pivots")


def brute_force_transport(instance: TransportInstance) -> TransportSolution:
    """Exact optimum by enumerating every spanning-tree basic solution.

    Only intended as a ground-truth oracle: requires ``m + n <= 8`` nodes.
    Every (m + n - 1)-edge subset of the complete bipartite graph is tested
    for being a spanning tree; flows on a tree are forced by leaf
    elimination, and the best feasible tree wins.
    """
    cost, p, q = instance.cost, instance.p, instance.q
    m, n = cost.shape
    if m + n > BRUTE_FORCE_MAX_NODES:
        raise ValidationError(
            f"brute force limited to {BRUTE_FORCE_MAX_NODES} nodes, got {m + n}"
        )
    edges = [(i, j) for i in range(m) for j in range(n)]
    ends = [(i, m + j) for i, j in edges]
    costs = [float(cost[i, j]) for i, j in edges]
    marginals = [float(x) for x in p] + [float(x) for x in q]
    nodes = m + n
    best_value = math.inf
    best_combo: tuple[int, ...] | None = None
    best_flows: list[float] | None = None

    for combo in itertools.combinations(range(len(edges)), nodes - 1):
        parent = list(range(nodes))
        acyclic = True
        for e in combo:
            ra, rb = ends[e]
            while parent[ra] != ra:
                ra = parent[ra]
            while parent[rb] != rb:
                rb = parent[rb]
            if ra == rb:
                acyclic = False
                break
            parent[ra] = rb
        if not acyclic:
            continue
        flows = _tree_flows(combo, ends, nodes, marginals)
        if flows is None:
            continue
        value = math.fsum(f * costs[e] for e, f in zip(combo, flows))
        if value < best_value - 1e-15:
            best_value = value
            best_combo = combo
            best_flows = flows
    if best_combo is None or best_flows is None:
        raise NumericalError("no feasible spanning tree found")
    plan = np.zeros((m, n))
    for e, f in zip(best_combo, best_flows):
        plan[edges[e]] = f
    return TransportSolution(plan, best_value)


def _tree_flows(combo, ends, nodes: int, marginals: list[float]):
    """Flows forced by a spanning tree, or None if any would be negative.

    Repeatedly strips leaves: a leaf's single incident edge must carry the
    leaf's remaining marginal.
    """
    rem = marginals.copy()
    degree = [0] * nodes
    incident: list[list[int]] = [[] for _ in range(nodes)]
    for pos, e in enumerate(combo):
        a, b = ends[e]
        degree[a] += 1
        degree[b] += 1
        incident[a].append(pos)
        incident[b].append(pos)
    done = [False] * len(combo)
    flows = [0.0] * len(combo)
    leaves = [k for k in range(nodes) if degree[k] == 1]
    while leaves:
        node = leaves.pop()
        pos = next((t for t in incident[node] if not done[t]), None)
        if pos is None:
            continue
        a, b = ends[combo[pos]]
        other = b if node == a else a
        f = rem[node]
        if f < -1e-12:
            return None
        f = max(f, 0.0)
        flows[pos] = f
        rem[node] = 0.0
        rem[other] -= f
        done[pos] = True
        degree[other] -= 1
        degree[node] -= 1
        if degree[other] == 1:
            leaves.append(other)
    if not all(done):
        return None
    return flows
