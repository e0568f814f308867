"""
Batched max-pool graph matching between target and predicted graphs.

Node correspondence is found in three stages: the affinity between every
pair of node/edge correspondences, a power iteration with max pooling over
candidate matches, and a Hungarian assignment on the resulting similarity.
Naive index-loop versions of the first two stages are kept next to the
batched ones and serve as reference implementations.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
import torch

import config
from src.kg_data import SparseGraph
from src.tensor_core import ContractError, ShapeError, check_last_dim

logger = logging.getLogger(__name__)

_NORM_FLOOR = 1e-12


@dataclass
class AffinityPair:
    """S_r: (b, n, n, k, k) edge affinities; S_e: (b, n, k) node affinities."""

    S_r: torch.Tensor
    S_e: torch.Tensor


@dataclass
class SimilarityMatrix:
    """Soft correspondence X*: (b, n, k), plus a per-graph flag for annihilated affinities."""

    X_star: torch.Tensor
    degenerate: torch.Tensor


def _zero_diagonal(t: torch.Tensor) -> torch.Tensor:
    """Zero the diagonal over axes 1 and 2 of a (b, m, m, ...) tensor."""
    m = t.shape[1]
    mask = 1 - torch.eye(m, dtype=t.dtype, device=t.device)
    mask = mask.view(1, m, m, *([1] * (t.dim() - 3)))
    return t * mask


def _check_pair(target: SparseGraph, pred: SparseGraph) -> None:
    if len(target) != len(pred):
        raise ShapeError(f"Batch size mismatch: {tuple(target.A.shape)} vs {tuple(pred.A.shape)}")
    check_last_dim(target.E, pred.E, "edge attributes")
    check_last_dim(target.F, pred.F, "node attributes")
    if target.n > pred.n:
        raise ShapeError(f"Target has more nodes than prediction: {tuple(target.A.shape)} vs {tuple(pred.A.shape)}")


def affinity_batch(target: SparseGraph, pred: SparseGraph) -> AffinityPair:
    """
    Affinity between a discrete target and a continuous prediction.

    Args:
        target: Discrete graphs with n nodes
        pred: Activated prediction with k >= n nodes (A in [0, 1], E and F probabilities)

    Returns:
        AffinityPair with S_r zero wherever i == j or a == b
    """
    _check_pair(target, pred)
    A = _zero_diagonal(target.A)
    E = _zero_diagonal(target.E)
    A_pred = _zero_diagonal(pred.A)
    E_pred = _zero_diagonal(pred.E)
    node_weight = torch.diagonal(pred.A, dim1=1, dim2=2)  # (b, k)

    S_r = torch.einsum('zijl,zabl->zijab', E, E_pred)
    S_r = S_r * A[:, :, :, None, None] * A_pred[:, None, None, :, :]
    S_r = S_r * node_weight[:, None, None, :, None] * node_weight[:, None, None, None, :]

    S_e = torch.einsum('zil,zal->zia', target.F, pred.F) * node_weight[:, None, :]
    return AffinityPair(S_r=S_r, S_e=S_e)


def affinity_loop(target: SparseGraph, pred: SparseGraph) -> AffinityPair:
    """Index-by-index reference for :func:`affinity_batch`."""
    _check_pair(target, pred)
    b, n, k = len(target), target.n, pred.n
    S_r = torch.zeros(b, n, n, k, k, dtype=pred.A.dtype)
    S_e = torch.zeros(b, n, k, dtype=pred.A.dtype)
    for z in range(b):
        for i in range(n):
            for a in range(k):
                S_e[z, i, a] = torch.dot(target.F[z, i], pred.F[z, a]) * pred.A[z, a, a]
            for j in range(n):
                if i == j:
                    continue
                for a in range(k):
                    for c in range(k):
                        if a == c:
                            continue
                        S_r[z, i, j, a, c] = (torch.dot(target.E[z, i, j], pred.E[z, a, c])
                                              * target.A[z, i, j] * pred.A[z, a, c]
                                              * pred.A[z, a, a] * pred.A[z, c, c])
    return AffinityPair(S_r=S_r, S_e=S_e)


def maxpool_similarity(aff: AffinityPair, iterations: int = config.MATCH_ITERATIONS) -> SimilarityMatrix:
    """
    Power iteration with max pooling over candidate correspondences.

    Each step computes X*[i,a]·S_e[i,a] + Σ_j max_b X*[j,b]·S_r[i,j,a,b] and
    rescales every graph to unit Frobenius norm. Graphs whose update vanishes
    keep a uniform X* and are flagged degenerate.
    """
    if iterations < 1:
        raise ContractError(f"iterations must be >= 1, got {iterations}")
    b, n, k = aff.S_e.shape
    uniform = torch.full((n, k), 1.0 / (n * k) ** 0.5, dtype=aff.S_e.dtype, device=aff.S_e.device)
    X = torch.ones(b, n, k, dtype=aff.S_e.dtype, device=aff.S_e.device)
    degenerate = torch.zeros(b, dtype=torch.bool, device=aff.S_e.device)

    for _ in range(iterations):
        # (b, i, j, a, b') * X[b, j, b'] -> max over b' -> sum over j
        pooled = (aff.S_r * X[:, None, :, None, :]).amax(dim=-1).sum(dim=2)
        update = X * aff.S_e + pooled
        norm = update.flatten(1).norm(dim=1)
        vanished = norm <= _NORM_FLOOR
        degenerate = degenerate | vanished
        X = update / torch.where(vanished, torch.ones_like(norm), norm)[:, None, None]
        X = torch.where(degenerate[:, None, None], uniform.expand(b, n, k), X)

    if degenerate.any():
        logger.debug(f"{int(degenerate.sum())} of {b} graphs have degenerate affinities")
    return SimilarityMatrix(X_star=X, degenerate=degenerate)


def maxpool_loop(aff: AffinityPair, iterations: int = config.MATCH_ITERATIONS) -> SimilarityMatrix:
    """Index-by-index reference for :func:`maxpool_similarity`."""
    b, n, k = aff.S_e.shape
    X_out = torch.zeros(b, n, k, dtype=aff.S_e.dtype)
    degenerate = torch.zeros(b, dtype=torch.bool)
    for z in range(b):
        X = [[1.0] * k for _ in range(n)]
        for _ in range(iterations):
            update = [[0.0] * k for _ in range(n)]
            for i in range(n):
                for a in range(k):
                    total = X[i][a] * float(aff.S_e[z, i, a])
                    for j in range(n):
                        total += max(X[j][c] * float(aff.S_r[z, i, j, a, c]) for c in range(k))
                    update[i][a] = total
            norm = sum(v * v for row in update for v in row) ** 0.5
            if norm <= _NORM_FLOOR:
                degenerate[z] = True
                X = [[1.0 / (n * k) ** 0.5] * k for _ in range(n)]
                break
            X = [[v / norm for v in row] for row in update]
        X_out[z] = torch.tensor(X, dtype=aff.S_e.dtype)
    return SimilarityMatrix(X_star=X_out, degenerate=degenerate)


def _shortest_augmenting_path(cost: np.ndarray) -> List[int]:
    """Row-to-column assignment of minimum cost for an n×k matrix, n <= k."""
    n, k = cost.shape
    inf = float('inf')
    u = [0.0] * (n + 1)   # row potentials
    v = [0.0] * (k + 1)   # column potentials
    p = [0] * (k + 1)     # p[j] = row assigned to column j (1-based, 0 = free)
    way = [0] * (k + 1)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (k + 1)
        used = [False] * (k + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, k + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(k + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break

    assignment = [-1] * n
    for j in range(1, k + 1):
        if p[j]:
            assignment[p[j] - 1] = j - 1
    return assignment


def _optimal_total(cost: np.ndarray) -> float:
    if cost.shape[0] == 0:
        return 0.0
    assignment = _shortest_augmenting_path(cost)
    return float(sum(cost[i, c] for i, c in enumerate(assignment)))


def hungarian_assign(cost: Union[np.ndarray, torch.Tensor, Sequence[Sequence[float]]]) -> List[int]:
    """
    Minimum-cost assignment of every row to a distinct column.

    Among assignments of equal total cost the lexicographically smallest
    column sequence is returned.

    Args:
        cost: n×k cost matrix with n <= k

    Returns:
        assignment[i] = column assigned to row i
    """
    if isinstance(cost, torch.Tensor):
        cost = cost.detach().cpu().numpy()
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ContractError(f"Cost matrix must be rank 2, got shape {cost.shape}")
    n, k = cost.shape
    if n > k:
        raise ContractError(f"Cost matrix needs rows <= columns, got {n}×{k}")
    if not np.isfinite(cost).all():
        raise ContractError("Cost matrix contains non-finite entries")
    if n == 0:
        return []

    total = _optimal_total(cost)
    tolerance = 1e-9 * max(1.0, abs(total), float(np.abs(cost).max()))

    # Fix rows in order to the smallest column that keeps the optimum reachable
    assignment: List[int] = []
    fixed = 0.0
    free = list(range(k))
    for row in range(n):
        for col in free:
            rest = [c for c in free if c != col]
            sub = cost[np.ix_(range(row + 1, n), rest)] if row + 1 < n else np.zeros((0, len(rest)))
            if fixed + cost[row, col] + _optimal_total(sub) <= total + tolerance:
                assignment.append(col)
                fixed += cost[row, col]
                free = rest
                break
        else:
            # Numerically unreachable; fall back to the solver's own choice
            return _shortest_augmenting_path(cost)
    return assignment


def assignment_cost(cost: np.ndarray, assignment: Sequence[int]) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    return float(sum(cost[i, c] for i, c in enumerate(assignment)))


def discretize(sim: Union[SimilarityMatrix, torch.Tensor]) -> torch.Tensor:
    """
    Hungarian assignment on 1 − X* per graph.

    Returns:
        Binary (b, n, k) permutation matrices; degenerate graphs get the identity
    """
    if isinstance(sim, SimilarityMatrix):
        X_star, degenerate = sim.X_star, sim.degenerate
    else:
        X_star, degenerate = sim, torch.zeros(sim.shape[0], dtype=torch.bool)
    b, n, k = X_star.shape
    X = torch.zeros(b, n, k, dtype=X_star.dtype, device=X_star.device)
    cost = (1 - X_star.detach()).cpu().numpy()
    for z in range(b):
        if bool(degenerate[z]):
            X[z] = torch.eye(n, k, dtype=X_star.dtype)
            continue
        for i, a in enumerate(hungarian_assign(cost[z])):
            X[z, i, a] = 1
    return X


def match(target: SparseGraph, pred: SparseGraph,
          iterations: int = config.MATCH_ITERATIONS) -> Tuple[torch.Tensor, torch.Tensor]:
    """Affinity, max pooling and discretization in one call; returns (X, degenerate)."""
    with torch.no_grad():
        sim = maxpool_similarity(affinity_batch(target, pred), iterations)
        X = discretize(sim)
    if sim.degenerate.any():
        logger.warning(f"Identity fallback for {int(sim.degenerate.sum())} degenerate matchings")
    return X, sim.degenerate


def apply_permutation(X: torch.Tensor, A: torch.Tensor, E_pred: torch.Tensor,
                      F_pred: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Align target and prediction with a target-major permutation X (b, n, k).

    Returns:
        A′ (b, k, k): target adjacency in prediction node order
        Ẽ′ (b, n, n, d_r): predicted edge attributes in target node order
        F̃′ (b, n, d_e): predicted node attributes in target node order
    """
    b, n, k = X.shape
    if A.shape[-2:] != (n, n):
        raise ShapeError(f"Adjacency {tuple(A.shape)} does not fit permutation {tuple(X.shape)}")
    if E_pred.shape[1:3] != (k, k):
        raise ShapeError(f"Edge attributes {tuple(E_pred.shape)} do not fit permutation {tuple(X.shape)}")
    if F_pred.shape[1] != k:
        raise ShapeError(f"Node attributes {tuple(F_pred.shape)} do not fit permutation {tuple(X.shape)}")

    X = X.to(E_pred.dtype)
    A_perm = torch.einsum('zia,zij,zjc->zac', X, A.to(E_pred.dtype), X)
    E_perm = torch.einsum('zia,zacl,zjc->zijl', X, E_pred, X)
    F_perm = torch.einsum('zia,zal->zil', X, F_pred)
    return A_perm, E_perm, F_perm


def permutation_rate(X: torch.Tensor) -> float:
    """Fraction of graphs whose matching is not the identity."""
    if X.shape[0] == 0:
        return 0.0
    b, n, k = X.shape
    identity = torch.eye(n, k, dtype=X.dtype, device=X.device)
    moved = (X != identity).flatten(1).any(dim=1)
    return float(moved.to(torch.float64).mean())
