"""Exact Fock-space reference values for small systems (Jordan-Wigner)."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.special import logsumexp

from .errors import DomainError, NumericError, ResourceError
from .model import InteractionSet, InteractionTerm, QuadraticHamiltonian

__all__ = [
    "MAX_MODES",
    "FockOperators",
    "ExactResult",
    "build_fock",
    "exact_logZ",
    "exact_logZ0_free",
    "exact_observable",
    "exact_time_ordered",
    "exact_cumulant",
    "set_partitions",
]

MAX_MODES = 14
MAX_MODES_TIME_ORDERED = 10
_SAMPLED_PAIRS = 64


@dataclass(frozen=True, eq=False)
class FockOperators:
    """Annihilators ``psi[a]`` as sparse ``2^N x 2^N`` matrices."""

    n_modes: int
    psi: tuple[sp.csr_matrix, ...]
    psi_dag: tuple[sp.csr_matrix, ...]

    @property
    def dim(self) -> int:
        return 2**self.n_modes

    def monomial(self, term: InteractionTerm) -> sp.csr_matrix:
        """``psi^dag_{p+_1} ... psi^dag_{p+_m} psi_{p-_1} ... psi_{p-_m}`` (without ``v``)."""
        out = sp.identity(self.dim, format="csr")
        for a in term.p_plus:
            out = out @ self.psi_dag[a]
        for a in term.p_minus:
            out = out @ self.psi[a]
        return out.tocsr()

    def quadratic(self, h: np.ndarray) -> sp.csr_matrix:
        out = sp.csr_matrix((self.dim, self.dim))
        n_ops = [self.psi_dag[a] @ self.psi[a] for a in range(self.n_modes)]
        for a, b in zip(*np.nonzero(h)):
            op = n_ops[a] if a == b else self.psi_dag[a] @ self.psi[b]
            out = out + h[a, b] * op
        return out.tocsr()


def _max_abs(m: sp.spmatrix) -> float:
    return float(np.abs(m.data).max()) if m.nnz else 0.0


def _check_anticommutators(ops: FockOperators, rng_seed: int = 0) -> None:
    N = ops.n_modes
    pairs = list(itertools.product(range(N), repeat=2))
    if N > 6:
        rng = np.random.default_rng(rng_seed)
        pairs = [pairs[i] for i in rng.choice(len(pairs), size=_SAMPLED_PAIRS, replace=False)]
    eye = sp.identity(ops.dim, format="csr")
    for a, b in pairs:
        pa, pb, pbd = ops.psi[a], ops.psi[b], ops.psi_dag[b]
        mixed = pa @ pbd + pbd @ pa
        if a == b:
            mixed = mixed - eye
        same = pa @ pb + pb @ pa
        if _max_abs(mixed) > 1e-12 or _max_abs(same) > 1e-12:
            raise NumericError(f"canonical anticommutation fails for modes ({a}, {b})")


@lru_cache(maxsize=8)
def build_fock(n_modes: int) -> FockOperators:
    """Jordan-Wigner annihilators, ``psi_a = Z^{(x) a} (x) sigma^- (x) I``."""
    if n_modes > MAX_MODES:
        raise ResourceError(f"the exact oracle is capped at {MAX_MODES} modes, got {n_modes}")
    if n_modes < 0:
        raise DomainError("n_modes must be nonnegative")
    Z = sp.csr_matrix(np.diag([1.0, -1.0]))
    lower = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
    eye2 = sp.identity(2, format="csr")
    psi = []
    for a in range(n_modes):
        op = sp.identity(1, format="csr")
        for j in range(n_modes):
            op = sp.kron(op, Z if j < a else (lower if j == a else eye2), format="csr")
        psi.append(op.tocsr())
    ops = FockOperators(n_modes, tuple(psi), tuple(p.T.tocsr() for p in psi))
    _check_anticommutators(ops)
    return ops


@dataclass(frozen=True)
class ExactResult:
    """``logZ`` is for ``H0 + V``; the constant shift is reported separately.

    ``logZ_with_offset`` is the log partition function of the physical
    Hamiltonian including ``energy_offset``.
    """

    logZ: float
    logZ0: float
    log_ratio: float
    energy_offset: float = 0.0
    beta: float = 1.0
    observables: Mapping[str, float] = field(default_factory=dict)

    @property
    def logZ_with_offset(self) -> float:
        return self.logZ - self.beta * self.energy_offset


def _hamiltonian(h: QuadraticHamiltonian, V: InteractionSet | None) -> tuple[FockOperators, np.ndarray]:
    ops = build_fock(h.n_modes)
    H = ops.quadratic(h.h)
    if V is not None:
        V.validate_modes(h.n_modes)
        for t in V.terms:
            H = H + t.v * ops.monomial(t)
    H = H.toarray()
    if np.max(np.abs(H - H.T), initial=0.0) > 1e-10:
        raise DomainError("the Hamiltonian is not Hermitian; include the conjugate of every term")
    return ops, H


def _eigh(H: np.ndarray):
    try:
        E, W = scipy.linalg.eigh(H)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"Fock-space diagonalization failed: {exc}") from exc
    if not np.all(np.isfinite(E)):
        raise NumericError("non-finite Fock-space eigenvalue")
    return E, W


def exact_logZ0_free(h: QuadraticHamiltonian, beta: float) -> float:
    """``sum_k log(1 + e^{-beta eps_k})`` from single-particle eigenvalues."""
    eps = np.linalg.eigvalsh(h.h)
    return float(np.sum(np.logaddexp(0.0, -beta * eps)))


def exact_logZ(h: QuadraticHamiltonian, V: InteractionSet, beta: float) -> ExactResult:
    _, H = _hamiltonian(h, V)
    E, _ = _eigh(H)
    _, H0 = _hamiltonian(h, None)
    E0, _ = _eigh(H0)
    logZ = float(logsumexp(-beta * E))
    logZ0 = float(logsumexp(-beta * E0))
    return ExactResult(logZ, logZ0, logZ - logZ0, V.energy_offset, float(beta))


def exact_observable(h: QuadraticHamiltonian, V: InteractionSet, beta: float, O: InteractionTerm) -> float:
    """Thermal expectation ``Tr(Psi_O e^{-beta H}) / Tr(e^{-beta H})``."""
    ops, H = _hamiltonian(h, V)
    E, W = _eigh(H)
    w = np.exp(-beta * (E - E.min()))
    Oe = W.T @ (ops.monomial(O) @ W)
    return float(np.dot(np.diag(Oe), w) / w.sum())


def exact_time_ordered(
    h: QuadraticHamiltonian, beta: float, terms: Sequence[tuple[InteractionTerm, float]]
) -> float:
    """Free-state correlator ``< T Psi_{P_1}(tau_1) ... Psi_{P_s}(tau_s) >_0``.

    Operators are ordered by decreasing time. Monomials have an even number
    of fermion operators, so reordering introduces no sign.
    """
    if h.n_modes > MAX_MODES_TIME_ORDERED:
        raise ResourceError(
            f"time-ordered oracle is capped at {MAX_MODES_TIME_ORDERED} modes, got {h.n_modes}"
        )
    taus = np.array([float(tau) for _, tau in terms])
    if np.any(taus < 0) or np.any(taus > beta):
        raise DomainError("all tau must lie in [0, beta]")
    if len(np.unique(taus)) != len(taus):
        raise DomainError("coincident times make the time ordering ambiguous")
    ops, H0 = _hamiltonian(h, None)
    E, W = _eigh(H0)
    E = E - E.min()
    order = np.argsort(-taus, kind="stable")
    prod = np.eye(ops.dim)
    for k in order:
        term, tau = terms[k]
        P = W.T @ (ops.monomial(term) @ W)
        # e^{tau H0} P e^{-tau H0} in the eigenbasis
        prod = prod @ (np.exp(tau * E)[:, None] * P * np.exp(-tau * E)[None, :])
    rho = np.exp(-beta * E)
    return float(np.dot(rho, np.diag(prod)) / rho.sum())


def set_partitions(items: Sequence[int]):
    """All set partitions of ``items`` as lists of tuples."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [(first,)] + part
        for i in range(len(part)):
            yield part[:i] + [(first,) + part[i]] + part[i + 1 :]


def exact_cumulant(
    h: QuadraticHamiltonian, beta: float, terms: Sequence[tuple[InteractionTerm, float]]
) -> float:
    """Connected part of ``exact_time_ordered`` by Moebius inversion over set partitions."""
    cache: dict[tuple[int, ...], float] = {}

    def moment(block):
        if block not in cache:
            cache[block] = exact_time_ordered(h, beta, [terms[i] for i in block])
        return cache[block]

    total = 0.0
    for part in set_partitions(range(len(terms))):
        k = len(part)
        coeff = (-1) ** (k - 1) * float(np.prod(np.arange(1, k)))
        total += coeff * float(np.prod([moment(tuple(sorted(b))) for b in part]))
    return total
