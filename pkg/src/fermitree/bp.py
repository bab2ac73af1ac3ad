"""Exact normalization and ancestral sampling for graphical models on trees.

A :class:`TreeModel` assigns a nonnegative factor to every (vertex, state)
pair and a nonnegative matrix to every tree edge. The unnormalized weight of
an assignment ``x_1..x_s`` is ``prod_i vf[i, x_i] * prod_(i,j) E_ij[x_i, x_j]``.
Messages are max-normalized with the scale kept in log form.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import _kernels as K
from .errors import DomainError
from .greens import GreensProvider
from .model import InteractionTerm
from .tree_sampler import LabeledTree, contraction_tensor, pack_terms

__all__ = [
    "TreeModel",
    "BPSolution",
    "neighbour_lists",
    "bp_solve",
    "bp_run",
    "bp_truncated",
    "bp_conditioned",
    "tree_model_from_terms",
    "brute_force",
]


def neighbour_lists(n_states: int, distance: np.ndarray | None = None, R: int | None = None, allowed=None):
    """CSR lists of the states reachable from each state.

    Without ``R`` every state neighbours every state. ``allowed`` restricts the
    targets (columns) to a boolean mask.
    """
    mask = np.ones((n_states, n_states), dtype=bool)
    if R is not None:
        if distance is None:
            raise DomainError("truncation needs a state distance matrix")
        if R < 0:
            raise DomainError("R must be nonnegative")
        mask &= np.asarray(distance) <= R
    if allowed is not None:
        mask &= np.asarray(allowed, dtype=bool)[None, :]
    ptr = np.zeros(n_states + 1, dtype=np.int64)
    ptr[1:] = np.cumsum(mask.sum(axis=1))
    idx = np.nonzero(mask)[1].astype(np.int64)
    return ptr, idx


@dataclass(frozen=True, eq=False)
class TreeModel:
    """Tree-structured factor model.

    ``edge_factor[(i, j)]`` (1-based ``i < j``) is indexed ``[x_i, x_j]``.
    ``distance`` between states is only needed by the truncated variant.
    """

    tree: LabeledTree
    vertex_factor: np.ndarray
    edge_factor: Mapping[tuple[int, int], np.ndarray]
    taus: Sequence[float] | None = None
    distance: np.ndarray | None = None

    def __post_init__(self):
        vf = np.array(self.vertex_factor, dtype=float)
        if vf.ndim != 2 or vf.shape[0] != self.tree.s:
            raise DomainError("vertex_factor must have shape (s, n_states)")
        if np.any(vf < 0) or not np.all(np.isfinite(vf)):
            raise DomainError("vertex factors must be finite and nonnegative")
        ef = {}
        for edge in self.tree.edges:
            E = np.array(self.edge_factor[edge], dtype=float)
            if E.shape != (vf.shape[1], vf.shape[1]) or np.any(E < 0):
                raise DomainError(f"edge factor on {edge} must be a nonnegative square matrix")
            ef[edge] = E
        object.__setattr__(self, "vertex_factor", vf)
        object.__setattr__(self, "edge_factor", ef)

    @property
    def s(self) -> int:
        return self.tree.s

    @property
    def n_states(self) -> int:
        return self.vertex_factor.shape[1]

    def oriented(self, child: int) -> np.ndarray:
        """Edge matrix for ``child`` (0-based) indexed ``[x_parent, x_child]``."""
        parent = self.tree.parent[child + 1]
        i, j = min(parent, child + 1), max(parent, child + 1)
        E = self.edge_factor[(i, j)]
        return E if parent == i else E.T


@dataclass(frozen=True, eq=False)
class BPSolution:
    """Upward-pass result; ``sample`` draws exact ancestral samples."""

    log_Z: float
    order: np.ndarray
    parent: np.ndarray
    cprod: np.ndarray
    ev: np.ndarray
    nbr_ptr: np.ndarray
    nbr_idx: np.ndarray

    @property
    def Z(self) -> float:
        return float(np.exp(self.log_Z))

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """One configuration (shape ``(s,)``) or ``n`` of them (shape ``(n, s)``), 0-based states."""
        if self.log_Z == -np.inf:
            raise DomainError("cannot sample from a model with zero total weight")
        s = len(self.order)
        U = rng.random((1 if n is None else n, s))
        out = K.bp_sample_many(self.order, self.parent, self.cprod, self.ev, self.nbr_ptr, self.nbr_idx, U)
        return out[0] if n is None else out


def bp_solve(model: TreeModel, R: int | None = None, root_state: int | None = None) -> BPSolution:
    """Upward message pass. ``root_state`` pins vertex 1 with factor one."""
    s, n = model.s, model.n_states
    vf = model.vertex_factor.copy()
    if root_state is not None:
        vf[0] = 0.0
        vf[0, root_state] = 1.0
    ptr, idx = neighbour_lists(n, model.distance, R)
    adj_ptr, adj_idx, _ = model.tree.adjacency()
    order, parent = K.bfs(adj_ptr, adj_idx, s)
    ch_ptr, ch_idx = K.children_csr(parent, s)
    rows = np.repeat(np.arange(n), np.diff(ptr))
    ev = np.zeros((s, len(idx)))
    for child in range(1, s):
        ev[child] = model.oriented(child)[rows, idx]
    log_Z, cprod, _ = K.bp_messages(order, parent, ch_ptr, ch_idx, vf, ev, ptr, idx)
    return BPSolution(float(log_Z), order, parent, cprod, ev, ptr, idx)


def bp_run(model: TreeModel, rng: np.random.Generator):
    """``(Z, sample)`` with ``sample`` a tuple of 0-based states for vertices ``1..s``.

    An empty measure gives ``(0.0, None)``.
    """
    sol = bp_solve(model)
    if sol.log_Z == -np.inf:
        return 0.0, None
    return sol.Z, tuple(int(x) for x in sol.sample(rng))


def bp_truncated(model: TreeModel, R: int, rng: np.random.Generator):
    """As :func:`bp_run` but tree-adjacent states must lie within distance ``R``."""
    sol = bp_solve(model, R=R)
    if sol.log_Z == -np.inf:
        return 0.0, None
    return sol.Z, tuple(int(x) for x in sol.sample(rng))


def bp_conditioned(model: TreeModel, root_state: int, R: int | None, rng: np.random.Generator):
    """Normalization with vertex 1 pinned to ``root_state`` (its own factor omitted).

    Returns ``(Z_cond, states of vertices 2..s)``.
    """
    sol = bp_solve(model, R=R, root_state=root_state)
    if sol.log_Z == -np.inf:
        return 0.0, None
    return sol.Z, tuple(int(x) for x in sol.sample(rng)[1:])


def tree_model_from_terms(
    tree: LabeledTree,
    taus: Sequence[float],
    terms: Sequence[InteractionTerm],
    provider: GreensProvider,
    distance: np.ndarray | None = None,
) -> TreeModel:
    """Vertex factors ``|v_P|`` and edge factors equal to the total contraction amplitude."""
    s = tree.s
    G = contraction_tensor(provider, np.asarray(taus, dtype=float))
    t_m, plus, minus, v = pack_terms(terms)
    n = len(terms)
    vf = np.tile(np.abs(v), (s, 1))
    ef = {}
    for i, j in tree.edges:
        E = np.empty((n, n))
        for p in range(n):
            for q in range(n):
                E[p, q] = K.edge_amplitude(G, i - 1, j - 1, p, q, t_m, plus, minus)
        ef[(i, j)] = E
    return TreeModel(tree, vf, ef, tuple(taus), distance)


def brute_force(model: TreeModel, R: int | None = None, root_state: int | None = None):
    """Exhaustive ``(Z, probabilities)`` over all state assignments; tiny models only.

    ``probabilities`` is an array of shape ``(n_states,) * s``.
    """
    s, n = model.s, model.n_states
    vf = model.vertex_factor.copy()
    if root_state is not None:
        vf[0] = 0.0
        vf[0, root_state] = 1.0
    grids = np.meshgrid(*[np.arange(n)] * s, indexing="ij")
    w = np.ones((n,) * s)
    for v in range(s):
        w = w * vf[v][grids[v]]
    for i, j in model.tree.edges:
        E = model.edge_factor[(i, j)]
        if R is not None:
            E = np.where(np.asarray(model.distance) <= R, E, 0.0)
        w = w * E[grids[i - 1], grids[j - 1]]
    Z = float(w.sum())
    return Z, (w / Z if Z > 0 else w)
