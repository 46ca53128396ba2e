"""Optimal transport between two uniform point sets.

Solves

    minimize    sum_ij F_ij * D_ij
    subject to  sum_j F_ij = 1/m   for every row i
                sum_i F_ij = 1/n   for every column j
                F_ij >= 0

for a non-negative m x n cost matrix D. The exact solver scales the uniform
marginals to integers (row supply lcm(m,n)/m units, column demand lcm(m,n)/n
units) and runs successive shortest paths with node potentials on the bipartite
residual graph, so the returned flow is exact up to the final float division.

For large point sets the entropic solver (Sinkhorn scaling on exp(-D/eps))
trades a small, controlled bias for speed.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

_INF = float("inf")


@dataclass
class TransportPlan:
    """A feasible (for the exact solver: optimal) flow and its transport cost."""

    flow: np.ndarray  # (m, n), non-negative, sums to 1
    cost: float

    def validate(self, tol: float = 1e-9) -> None:
        m, n = self.flow.shape
        if np.any(self.flow < -tol):
            raise ValueError("transport plan has negative entries")
        row_err = np.abs(self.flow.sum(axis=1) - 1.0 / m).max()
        col_err = np.abs(self.flow.sum(axis=0) - 1.0 / n).max()
        tot_err = abs(self.flow.sum() - 1.0)
        if row_err > tol or col_err > tol or tot_err > tol:
            raise ValueError(
                f"transport plan violates marginals: row {row_err:.2e}, "
                f"col {col_err:.2e}, total {tot_err:.2e}"
            )


def _check_cost_matrix(dist: np.ndarray) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] < 1 or dist.shape[1] < 1:
        raise ValueError("cost matrix must be 2-D and non-empty")
    if not np.isfinite(dist).all():
        raise ValueError("cost matrix entries must be finite")
    return dist


def _forced_plan(dist: np.ndarray) -> TransportPlan:
    # With a single row (or column) the marginal constraints pin F completely.
    m, n = dist.shape
    flow = np.full((m, n), 1.0 / (m * n))
    return TransportPlan(flow=flow, cost=float((flow * dist).sum()))


def solve_transport_exact(dist: np.ndarray) -> TransportPlan:
    """Exact minimizer of the uniform-marginal transportation problem."""
    dist = _check_cost_matrix(dist)
    m, n = dist.shape
    if m == 1 or n == 1:
        return _forced_plan(dist)

    scale = math.lcm(m, n)
    supply = [scale // m] * m  # integer units per row
    demand = [scale // n] * n  # integer units per column
    units = np.zeros((m, n), dtype=np.int64)

    # Node ids: rows 0..m-1, columns m..m+n-1, super-source, super-sink.
    # Source->row and column->sink arcs cost 0; their reverse arcs can never
    # lie on a simple source->sink path, so Dijkstra need not relax them.
    # Potentials keep every residual reduced cost non-negative across
    # augmentations, which keeps Dijkstra valid.
    src = m + n
    snk = m + n + 1
    total_nodes = m + n + 2
    potential = [0.0] * total_nodes
    remaining = scale

    while remaining > 0:
        dist_to = [_INF] * total_nodes
        parent = [-1] * total_nodes
        visited = [False] * total_nodes
        dist_to[src] = 0.0
        heap: list[tuple[float, int]] = [(0.0, src)]

        while heap:
            d, node = heapq.heappop(heap)
            if visited[node]:
                continue
            visited[node] = True
            if node == snk:
                break
            if node == src:
                for i in range(m):
                    if supply[i] > 0:
                        nd = d + max(potential[src] - potential[i], 0.0)
                        if nd < dist_to[i]:
                            dist_to[i] = nd
                            parent[i] = src
                            heapq.heappush(heap, (nd, i))
            elif node < m:
                i = node
                base = potential[i]
                row = dist[i]
                for j in range(n):
                    col = m + j
                    if visited[col]:
                        continue
                    rc = row[j] + base - potential[col]
                    if rc < 0.0:  # float noise from potential updates
                        rc = 0.0
                    nd = d + rc
                    if nd < dist_to[col]:
                        dist_to[col] = nd
                        parent[col] = i
                        heapq.heappush(heap, (nd, col))
            else:
                j = node - m
                base = potential[node]
                if demand[j] > 0:
                    nd = d + max(base - potential[snk], 0.0)
                    if nd < dist_to[snk]:
                        dist_to[snk] = nd
                        parent[snk] = node
                        heapq.heappush(heap, (nd, snk))
                for i in range(m):
                    if visited[i] or units[i, j] <= 0:
                        continue
                    rc = -dist[i, j] + base - potential[i]
                    if rc < 0.0:
                        rc = 0.0
                    nd = d + rc
                    if nd < dist_to[i]:
                        dist_to[i] = nd
                        parent[i] = node
                        heapq.heappush(heap, (nd, i))

        if dist_to[snk] == _INF:
            raise RuntimeError("transportation problem became infeasible")
        best_d = dist_to[snk]
        # min(distance, best_d) for every node, unreached counting as best_d;
        # this is what keeps all residual reduced costs non-negative.
        for node in range(total_nodes):
            d = dist_to[node]
            potential[node] += best_d if d >= best_d else d

        # walk src -> ... -> snk and find the bottleneck
        path: list[int] = []
        node = snk
        while node != -1:
            path.append(node)
            node = parent[node]
        path.reverse()
        first_row = path[1]
        last_col = path[-2] - m
        amount = min(supply[first_row], demand[last_col])
        for a, b in zip(path[1:-2], path[2:-1]):
            if a >= m:  # backward arc column -> row
                amount = min(amount, int(units[b, a - m]))
        for a, b in zip(path[1:-2], path[2:-1]):
            if a < m:
                units[a, b - m] += amount
            else:
                units[b, a - m] -= amount
        supply[first_row] -= amount
        demand[last_col] -= amount
        remaining -= amount

    flow = units.astype(np.float64) / scale
    return TransportPlan(flow=flow, cost=float((flow * dist).sum()))


def solve_transport_entropic(
    dist: np.ndarray,
    epsilon: float,
    max_iter: int = 10_000,
    tol: float = 1e-12,
) -> TransportPlan:
    """Entropy-regularized approximation via Sinkhorn scaling in log space.

    The returned plan satisfies the marginals to ``tol`` but its cost upper
    bounds the exact optimum by an O(epsilon) regularization bias.
    """
    dist = _check_cost_matrix(dist)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    m, n = dist.shape
    if m == 1 or n == 1:
        return _forced_plan(dist)

    log_a = np.full(m, -math.log(m))
    log_b = np.full(n, -math.log(n))
    log_kernel = -dist / epsilon
    f = np.zeros(m)  # scaled dual potentials: plan = exp(log_kernel + f_i + g_j)
    g = np.zeros(n)
    for _ in range(max_iter):
        f = log_a - _logsumexp(log_kernel + g[None, :], axis=1)
        g = log_b - _logsumexp(log_kernel + f[:, None], axis=0)
        plan = np.exp(log_kernel + f[:, None] + g[None, :])
        if np.abs(plan.sum(axis=1) - 1.0 / m).max() < tol:
            break
    plan = np.exp(log_kernel + f[:, None] + g[None, :])
    # final row rescale: rows exact, columns within the convergence tolerance
    plan *= (1.0 / m) / plan.sum(axis=1, keepdims=True)
    return TransportPlan(flow=plan, cost=float((plan * dist).sum()))


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    hi = np.max(x, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(x - hi), axis=axis, keepdims=True)) + hi
    return np.squeeze(out, axis=axis)
