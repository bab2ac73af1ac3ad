"""Random labeled trees, growing paths, contraction assignments and the
weighted Green's-function determinant.

Vertices are labeled ``1..s`` in this module's public types; the compiled
kernels use 0-based labels internally.

Propagator convention: contractions use ``G_tau(a, b) = -g_tau(a, b)`` for
two distinct vertices and ``<psi^dag_b psi_a>_0 = (1 + e^{beta h})^{-1}`` for
the equal-time diagonal blocks (the ``tau -> 0^-`` limit of ``-g``). With
this choice the free time-ordered correlator of ``s`` monomials equals
``prod_i (-1)^{m_i (m_i - 1) / 2}`` times the block determinant. Its
connected part is the sum over trees ``T`` and assignments ``chi`` of
``sign_alpha * prod_edges g(chi_e) * h(T, chi)``, where ``g(chi_e)`` are the
plain Green's function values and ``h`` averages the determinant of
:func:`weighted_greens_matrix` over growing paths and ``t``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import _kernels as K
from .errors import DomainError
from .greens import GreensProvider
from .model import InteractionTerm

__all__ = [
    "LabeledTree",
    "GrowingPath",
    "ContractionAssignment",
    "decode_prufer",
    "encode_prufer",
    "sample_tree",
    "sample_tree_edges",
    "all_trees",
    "sample_growing_path_and_t",
    "enumerate_growing_paths",
    "growing_path_measure",
    "path_weight_matrix",
    "contraction_tensor",
    "edge_amplitude_M",
    "sample_assignment",
    "assemble_G_and_det",
    "weighted_greens_matrix",
    "sign_alpha",
    "alpha_P",
    "wick_correlator",
    "pack_terms",
]


@dataclass(frozen=True)
class LabeledTree:
    s: int
    edges: tuple[tuple[int, int], ...]
    parent: Mapping[int, int] = field(init=False, compare=False, repr=False)
    degree: tuple[int, ...] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        s = int(self.s)
        edges = tuple(sorted((min(i, j), max(i, j)) for i, j in self.edges))
        if s < 1:
            raise DomainError("a tree needs at least one vertex")
        if len(edges) != s - 1:
            raise DomainError(f"a tree on {s} vertices has {s - 1} edges, got {len(edges)}")
        root = list(range(s + 1))

        def find(x):
            while root[x] != x:
                root[x] = root[root[x]]
                x = root[x]
            return x

        for i, j in edges:
            if not 1 <= i < j <= s:
                raise DomainError(f"edge {(i, j)} is not a pair of distinct labels in 1..{s}")
            ri, rj = find(i), find(j)
            if ri == rj:
                raise DomainError(f"edges {edges} contain a cycle")
            root[ri] = rj
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "edges", edges)
        arr = self.edge_array()
        adj_ptr, adj_idx, deg = K.adjacency(arr, s)
        _, parent = K.bfs(adj_ptr, adj_idx, s)
        object.__setattr__(self, "parent", {v + 1: int(p) + 1 for v, p in enumerate(parent) if p >= 0})
        object.__setattr__(self, "degree", tuple(int(d) for d in deg))

    def edge_array(self) -> np.ndarray:
        """0-based ``(s-1, 2)`` int64 array."""
        return np.array(self.edges, dtype=np.int64).reshape(-1, 2) - 1

    def adjacency(self):
        return K.adjacency(self.edge_array(), self.s)

    @property
    def max_degree(self) -> int:
        return max(self.degree, default=0)


def decode_prufer(seq: Sequence[int], s: int | None = None) -> LabeledTree:
    """Tree on ``1..s`` with Pruefer code ``seq`` (symbols in ``1..s``)."""
    seq = np.asarray(seq, dtype=np.int64).reshape(-1)
    s = len(seq) + 2 if s is None else int(s)
    if s < 2 or len(seq) != s - 2:
        raise DomainError(f"a Pruefer code for s={s} has length {s - 2}")
    if np.any(seq < 1) or np.any(seq > s):
        raise DomainError(f"Pruefer symbols must lie in 1..{s}")
    edges = K.decode_prufer(seq - 1, s) + 1
    return LabeledTree(s, tuple(map(tuple, edges.tolist())))


def encode_prufer(tree: LabeledTree) -> tuple[int, ...]:
    """Inverse of :func:`decode_prufer`: repeatedly remove the smallest leaf."""
    s = tree.s
    nbrs = {v: set() for v in range(1, s + 1)}
    for i, j in tree.edges:
        nbrs[i].add(j)
        nbrs[j].add(i)
    seq = []
    for _ in range(s - 2):
        leaf = min(v for v, n in nbrs.items() if len(n) == 1)
        (other,) = nbrs.pop(leaf)
        nbrs[other].discard(leaf)
        seq.append(other)
    return tuple(seq)


def all_trees(s: int):
    """Every labeled tree on ``1..s`` (``s^(s-2)`` of them)."""
    if s == 1:
        yield LabeledTree(1, ())
        return
    for seq in itertools.product(range(1, s + 1), repeat=s - 2):
        yield decode_prufer(seq, s)


def sample_tree(s: int, rng: np.random.Generator) -> LabeledTree:
    """Uniform labeled tree via a uniform Pruefer code."""
    if s < 1:
        raise DomainError("s must be positive")
    if s == 1:
        return LabeledTree(1, ())
    return decode_prufer(rng.integers(1, s + 1, size=s - 2), s)


def sample_tree_edges(s: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` uniform trees as 1-based sorted edge arrays of shape ``(n, s - 1, 2)``.

    Uses the same compiled decoder and symbol map as the estimator.
    """
    if s < 1:
        raise DomainError("s must be positive")
    U = rng.random((n, max(s - 2, 0)))
    return K.decode_prufer_many(U, s) + 1


@dataclass(frozen=True)
class GrowingPath:
    """Vertex order ``omega`` (1-based, ``omega[0] == 1``) and branch counts ``b``."""

    omega: tuple[int, ...]
    b: tuple[int, ...]

    def validate(self, tree: LabeledTree) -> None:
        if sorted(self.omega) != list(range(1, tree.s + 1)) or self.omega[0] != 1:
            raise DomainError("omega must be a permutation starting at vertex 1")
        seen = {1}
        for v in self.omega[1:]:
            if tree.parent[v] not in seen:
                raise DomainError(f"vertex {v} appears before its parent")
            seen.add(v)
        for i, bi in enumerate(self.b, start=1):
            prefix = set(self.omega[:i])
            crossing = sum((x in prefix) != (y in prefix) for x, y in tree.edges)
            if bi != crossing or bi < 1:
                raise DomainError(f"b_{i}={bi} but {crossing} edges cross the prefix")


def sample_growing_path_and_t(tree: LabeledTree, rng: np.random.Generator):
    """Growing path with each next vertex uniform among the frontier, and ``t_i ~ b_i t^(b_i - 1)``."""
    n = max(tree.s - 1, 0)
    u = rng.random(2 * n)
    adj_ptr, adj_idx, _ = tree.adjacency()
    omega, b, t = K.growing_path(adj_ptr, adj_idx, tree.s, u[:n], u[n:])
    return GrowingPath(tuple(int(v) + 1 for v in omega), tuple(int(x) for x in b)), t


def enumerate_growing_paths(tree: LabeledTree):
    """Yield every growing path of ``tree`` rooted at vertex 1."""
    nbrs = {v: [] for v in range(1, tree.s + 1)}
    for i, j in tree.edges:
        nbrs[i].append(j)
        nbrs[j].append(i)

    def extend(omega, visited, b):
        frontier = sorted({w for v in omega for w in nbrs[v] if w not in visited})
        if not frontier:
            yield GrowingPath(tuple(omega), tuple(b))
            return
        for w in frontier:
            yield from extend(omega + [w], visited | {w}, b + [len(frontier)])

    yield from extend([1], {1}, [])


def growing_path_measure(tree: LabeledTree, exact: bool = True):
    """``sum over growing paths of prod 1/b_i``; equals one for every tree."""
    one = Fraction(1) if exact else 1.0
    total = 0 * one
    for path in enumerate_growing_paths(tree):
        w = one
        for bi in path.b:
            w = w / bi
        total += w
    return total


def path_weight_matrix(omega: Sequence[int], t: Sequence[float]) -> np.ndarray:
    """``a[j, k]`` (0-based rows) for a 1-based ``omega``."""
    omega = np.asarray(omega, dtype=np.int64) - 1
    return K.path_weights(omega, np.asarray(t, dtype=float), len(omega))


def pack_terms(terms: Sequence[InteractionTerm]):
    """Dense arrays ``(m, plus, minus, v)`` consumed by the kernels."""
    n = len(terms)
    M = max((t.m for t in terms), default=1)
    t_m = np.array([t.m for t in terms], dtype=np.int64).reshape(n)
    plus = np.zeros((n, M), dtype=np.int64)
    minus = np.zeros((n, M), dtype=np.int64)
    for k, t in enumerate(terms):
        plus[k, : t.m] = t.p_plus
        minus[k, : t.m] = t.p_minus
    v = np.array([t.v for t in terms], dtype=float).reshape(n)
    return t_m, plus, minus, v


def contraction_tensor(provider: GreensProvider, taus) -> np.ndarray:
    """Propagators ``G[..., i, j, :, :]`` between vertices at times ``taus[..., i]``.

    Off-diagonal blocks are ``-g_{tau_i - tau_j}``; diagonal blocks are the
    equal-time contraction ``(1 + e^{beta h})^{-1}``.
    """
    taus = np.asarray(taus, dtype=float)
    deltas = taus[..., :, None] - taus[..., None, :]
    return np.ascontiguousarray(-provider.g_tensor(deltas, left=True))


def edge_amplitude_M(P: InteractionTerm, Q: InteractionTerm, tau_p: float, tau_q: float, provider) -> float:
    """Total ``|g|`` over all single contractions between ``P`` at ``tau_p`` and ``Q`` at ``tau_q``."""
    G = contraction_tensor(provider, [tau_p, tau_q])
    t_m, plus, minus, _ = pack_terms([P, Q])
    return float(K.edge_amplitude(G, 0, 1, 0, 1, t_m, plus, minus))


@dataclass(frozen=True)
class ContractionAssignment:
    """``chi[(i, j)] = (sigma, k, l)`` with 1-based ``k, l``."""

    chi: Mapping[tuple[int, int], tuple[int, int, int]]
    valid: bool


def _offsets(terms):
    return np.concatenate([[0], np.cumsum([t.m for t in terms])]).astype(np.int64)


def _choice_array(tree: LabeledTree, chi: ContractionAssignment | Mapping, terms) -> np.ndarray:
    chi = chi.chi if isinstance(chi, ContractionAssignment) else chi
    off = _offsets(terms)
    choice = np.zeros((tree.s - 1, 5), dtype=np.int64)
    for e, (i, j) in enumerate(tree.edges):
        sigma, k, l = chi[(i, j)]
        if not (1 <= k <= terms[i - 1].m and 1 <= l <= terms[j - 1].m) or sigma not in (-1, 1):
            raise DomainError(f"contraction {chi[(i, j)]} out of range on edge {(i, j)}")
        if sigma == -1:
            row, col = off[i - 1] + k - 1, off[j - 1] + l - 1
        else:
            row, col = off[j - 1] + l - 1, off[i - 1] + k - 1
        choice[e] = (sigma, k - 1, l - 1, row, col)
    return choice


def _is_valid(choice: np.ndarray) -> bool:
    return len(set(choice[:, 3])) == len(choice) and len(set(choice[:, 4])) == len(choice)


def sample_assignment(tree: LabeledTree, terms: Sequence[InteractionTerm], taus, provider, rng):
    """Independent per-edge contraction draws; returns ``(assignment, product of |g|)``."""
    G = contraction_tensor(provider, taus)
    t_m, plus, minus, _ = pack_terms(terms)
    choice = np.zeros((tree.s - 1, 5), dtype=np.int64)
    u = rng.random(max(tree.s - 1, 0))
    status, _, amp = K.assignment(
        tree.edge_array(), np.arange(tree.s, dtype=np.int64), G, t_m, plus, minus, u, choice
    )
    if status == K.REJECT_ZERO_EDGE:
        return ContractionAssignment({}, False), 0.0
    chi = {
        edge: (int(c[0]), int(c[1]) + 1, int(c[2]) + 1) for edge, c in zip(tree.edges, choice)
    }
    return ContractionAssignment(chi, status == K.OK), float(amp)


def weighted_greens_matrix(tree, chi, omega, t, terms, taus, provider) -> np.ndarray:
    G = contraction_tensor(provider, taus)
    t_m, plus, minus, _ = pack_terms(terms)
    a = path_weight_matrix(omega, t)
    choice = _choice_array(tree, chi, terms)
    return K.weighted_matrix(np.arange(tree.s, dtype=np.int64), G, a, t_m, plus, minus, choice, tree.s - 1)


def assemble_G_and_det(tree, chi, omega, t, terms, taus, provider) -> float:
    """Determinant of the path-weighted propagator matrix after removing contracted slots."""
    mat = weighted_greens_matrix(tree, chi, omega, t, terms, taus, provider)
    return float(K.determinant(mat))


def alpha_P(term: InteractionTerm) -> int:
    """Sign from reversing the annihilators of one monomial, ``(-1)^(m(m-1)/2)``."""
    return -1 if (term.m * (term.m - 1) // 2) % 2 else 1


def sign_alpha(tree: LabeledTree, chi, terms: Sequence[InteractionTerm]) -> int:
    choice = _choice_array(tree, chi, terms)
    if not _is_valid(choice):
        raise DomainError("sign_alpha needs a valid contraction assignment")
    t_m = np.array([t.m for t in terms], dtype=np.int64)
    return int(K.alpha_sign(tree.edge_array(), np.arange(tree.s, dtype=np.int64), t_m, choice))


def wick_correlator(terms: Sequence[InteractionTerm], taus, provider) -> float:
    """Free time-ordered correlator of the monomials by a single block determinant."""
    s = len(terms)
    G = contraction_tensor(provider, taus)
    t_m, plus, minus, _ = pack_terms(terms)
    mat = K.weighted_matrix(
        np.arange(s, dtype=np.int64), G, np.ones((s, s)), t_m, plus, minus,
        np.zeros((0, 5), dtype=np.int64), 0,
    )
    sign = 1
    for term in terms:
        sign *= alpha_P(term)
    return sign * float(K.determinant(mat))
