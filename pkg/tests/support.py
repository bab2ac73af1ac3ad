"""Independent references used by the tests.

The propagators here are built from numpy and scipy directly rather than from
the package's providers, so the quadrature reference shares no code with the sampler.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.stats

from fermitree.model import InteractionSet, InteractionTerm, Lattice, QuadraticHamiltonian


def random_h(rng, n_modes, norm=2.0) -> QuadraticHamiltonian:
    A = rng.normal(size=(n_modes, n_modes))
    h = 0.5 * (A + A.T)
    h *= rng.uniform(0.2, 1.0) * norm / np.linalg.norm(h, 2)
    return QuadraticHamiltonian(h, Lattice((n_modes // 2,)))


def random_term(rng, n_modes, m, v=1.0) -> InteractionTerm:
    return InteractionTerm(tuple(rng.permutation(n_modes)[:m]), tuple(rng.permutation(n_modes)[:m]), v)


def conjugate(term: InteractionTerm) -> InteractionTerm:
    """Hermitian conjugate of a real monomial."""
    return InteractionTerm(term.p_minus[::-1], term.p_plus[::-1], term.v)


def hermitian_set(terms) -> InteractionSet:
    """The terms plus whichever conjugates are missing."""
    out = []
    for t in terms:
        for u in (t, conjugate(t)):
            if (u.p_plus, u.p_minus) not in {(x.p_plus, x.p_minus) for x in out}:
                out.append(u)
    return InteractionSet(tuple(out))


class ExpmGreens:
    """Free propagators built from matrix exponentials."""

    def __init__(self, h: np.ndarray, beta: float):
        self.h = np.asarray(h, dtype=float)
        self.beta = beta
        n = len(self.h)
        self.occ = np.linalg.inv(np.eye(n) + scipy.linalg.expm(beta * self.h))
        self.empty = np.linalg.inv(np.eye(n) + scipy.linalg.expm(-beta * self.h))
        eps, U = np.linalg.eigh(self.h)
        self._eps, self._U = eps, U

    def g(self, tau):
        """``g_tau`` for an array of nonzero ``tau``; shape ``tau.shape + (n, n)``."""
        tau = np.asarray(tau, dtype=float)
        # expm per grid point would be too slow; the eigen form is cross-checked
        # against expm in test_greens.
        E = np.exp(-tau[..., None] * self._eps)
        prop = np.einsum("ak,...k,bk->...ab", self._U, E, self._U)
        return np.where((tau > 0)[..., None, None], prop @ self.empty, -(prop @ self.occ))


def contraction_blocks(G: ExpmGreens, P, Q, tau1, tau2):
    """Blocks of the Wick matrix for ``P`` at ``tau1`` and ``Q`` at ``tau2`` (rows annihilators)."""
    gPQ = -G.g(tau1 - tau2)
    gQP = -G.g(tau2 - tau1)
    A = G.occ[np.ix_(P.p_minus, P.p_plus)]
    D = G.occ[np.ix_(Q.p_minus, Q.p_plus)]
    B = gPQ[..., P.p_minus, :][..., Q.p_plus]
    C = gQP[..., Q.p_minus, :][..., P.p_plus]
    return A, B, C, D


def _sign(term):
    return -1.0 if (term.m * (term.m - 1) // 2) % 2 else 1.0


def wick_pair(G: ExpmGreens, P, Q, tau1, tau2):
    """``< T Psi_P(tau1) Psi_Q(tau2) >_0`` as a block determinant."""
    A, B, C, D = contraction_blocks(G, P, Q, tau1, tau2)
    shape = np.broadcast(np.asarray(tau1), np.asarray(tau2)).shape
    top = np.concatenate([np.broadcast_to(A, shape + A.shape), B], axis=-1)
    bot = np.concatenate([C, np.broadcast_to(D, shape + D.shape)], axis=-1)
    return _sign(P) * _sign(Q) * np.linalg.det(np.concatenate([top, bot], axis=-2))


def tree_integrand(G: ExpmGreens, P, Q, tau1, tau2, t_nodes, t_weights):
    """Connected correlator of two monomials from the two-vertex tree expansion.

    The single edge contracts one cross entry ``(r, c)``; the remaining matrix
    has its cross blocks scaled by the interpolation variable ``t`` and is
    integrated over ``t`` in ``[0, 1]``. The sign of each contraction is the
    cofactor sign ``(-1)^(r + c)``.
    """
    A, B, C, D = contraction_blocks(G, P, Q, tau1, tau2)
    mP, mQ = P.m, Q.m
    n = mP + mQ
    shape = np.asarray(tau1).shape
    total = np.zeros(shape)
    for t, wt in zip(t_nodes, t_weights):
        top = np.concatenate([np.broadcast_to(A, shape + A.shape), t * B], axis=-1)
        bot = np.concatenate([t * C, np.broadcast_to(D, shape + D.shape)], axis=-1)
        M = np.concatenate([top, bot], axis=-2)
        full = np.concatenate(
            [np.concatenate([np.broadcast_to(A, shape + A.shape), B], -1),
             np.concatenate([C, np.broadcast_to(D, shape + D.shape)], -1)], -2)
        for r in range(n):
            for c in range(n):
                if (r < mP) == (c < mP):
                    continue
                keep_r = [i for i in range(n) if i != r]
                keep_c = [j for j in range(n) if j != c]
                minor = M[..., keep_r, :][..., keep_c]
                det = np.linalg.det(minor) if n > 1 else np.ones(shape)
                total += wt * (-1) ** (r + c) * full[..., r, c] * det
    return _sign(P) * _sign(Q) * total


def order2_quadrature(h: np.ndarray, V: InteractionSet, beta: float, degree=64):
    """``Xi_2 = 1/2 sum_{P,Q} v_P v_Q int int E_c`` by Gauss-Legendre quadrature.

    The square is split along ``tau1 = tau2`` where the integrand jumps, and each
    triangle is mapped to the unit square (Duffy map), so the rule is exact up to
    the smoothness of the propagators.
    """
    G = ExpmGreens(h, beta)
    x, w = np.polynomial.legendre.leggauss(degree)
    x, w = 0.5 * (x + 1), 0.5 * w
    X, Y = np.meshgrid(x, x, indexing="ij")
    WXY = np.outer(w, w) * X * beta**2
    hi, lo = beta * X, beta * X * Y
    total = 0.0
    for P in V.terms:
        for Q in V.terms:
            for t1, t2 in ((hi, lo), (lo, hi)):
                f = tree_integrand(G, P, Q, t1, t2, x, w)
                total += 0.5 * P.v * Q.v * float(np.sum(WXY * f))
    return total


def pooled_chi2_z(observed, expected_p, min_expected=5.0):
    """Standardized chi-square ``(X - df) / sqrt(2 df)`` after pooling sparse cells."""
    observed = np.asarray(observed, dtype=float).ravel()
    expected = np.asarray(expected_p, dtype=float).ravel() * observed.sum()
    support = expected > 0
    if np.any(observed[~support] > 0):
        return np.inf
    observed, expected = observed[support], expected[support]
    small = expected < min_expected
    if small.any():
        observed = np.append(observed[~small], observed[small].sum())
        expected = np.append(expected[~small], expected[small].sum())
    df = len(expected) - 1
    if df < 1:
        return 0.0
    stat = float(np.sum((observed - expected) ** 2 / expected))
    return (stat - df) / np.sqrt(2 * df)


def chi2_quantile(q, df):
    return float(scipy.stats.chi2.ppf(q, df))
