"""Non-interacting imaginary-time Green's function.

For ``tau`` in ``[-beta, beta]``::

    g_tau = e^{-tau h} (1 + e^{-beta h})^{-1}     tau >= 0
    g_tau = -e^{-tau h} (1 + e^{beta h})^{-1}     tau < 0

Two backends evaluate it: a dense spectral decomposition and a Chebyshev
expansion in the rescaled matrix ``h / b``. Both expose a batched
``g_tensor`` used by the sampler. Passing ``left=True`` there (or to
``matrix``) selects the ``tau < 0`` branch at ``tau == 0``, which is the
``0^-`` limit.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse

from .errors import DomainError, NumericError, ResourceError
from .model import Lattice, ModeIndex, QuadraticHamiltonian

__all__ = [
    "Backend",
    "GreensProvider",
    "DenseGreens",
    "ChebyshevGreens",
    "DecayProfile",
    "build_dense",
    "build_chebyshev",
    "build_provider",
    "eval_g",
    "estimate_Lg",
    "decay_profile",
    "chebyshev_rho",
    "chebyshev_degree",
]

DEFAULT_MAX_DEGREE = 10_000


class Backend(str, Enum):
    DENSE = "dense_spectral"
    CHEBYSHEV = "chebyshev"


def _branch(x, tau, beta, left):
    """Scalar Green's function ``f(x, tau)`` broadcast over arrays.

    ``logaddexp`` keeps ``beta * x`` of either sign from overflowing.
    """
    x = np.asarray(x, dtype=float)
    tau = np.asarray(tau, dtype=float)
    pos = (tau > 0) | ((tau == 0) & (not left))
    up = np.exp(-tau * x - np.logaddexp(0.0, -beta * x))
    down = -np.exp(-tau * x - np.logaddexp(0.0, beta * x))
    return np.where(pos, up, down)


class GreensProvider:
    """Common interface. Subclasses implement ``g_tensor``."""

    backend: Backend
    beta: float
    hamiltonian: QuadraticHamiltonian

    @property
    def n_modes(self) -> int:
        return self.hamiltonian.n_modes

    @property
    def lattice(self) -> Lattice:
        return self.hamiltonian.lattice

    def _check_tau(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        bound = self.beta * (1 + 1e-14)
        if np.any(~np.isfinite(tau)) or np.any(np.abs(tau) > bound):
            raise DomainError(f"tau must lie in [-beta, beta] = [{-self.beta}, {self.beta}]")
        return tau

    def g_tensor(self, taus, left: bool = False) -> np.ndarray:
        """Stack of full matrices ``g_tau`` with shape ``taus.shape + (N, N)``."""
        raise NotImplementedError

    def matrix(self, tau: float, left: bool = False) -> np.ndarray:
        return self.g_tensor(np.asarray([tau]), left=left)[0]

    def entry(self, a: int, b: int, tau: float, left: bool = False) -> float:
        return float(self.matrix(tau, left=left)[a, b])


@dataclass(frozen=True, eq=False)
class DenseGreens(GreensProvider):
    hamiltonian: QuadraticHamiltonian
    beta: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    backend: Backend = Backend.DENSE

    def g_tensor(self, taus, left: bool = False) -> np.ndarray:
        taus = self._check_tau(taus)
        f = _branch(self.eigenvalues, taus[..., None], self.beta, left)
        U = self.eigenvectors
        return np.matmul(U * f[..., None, :], U.T)

    def entry(self, a: int, b: int, tau: float, left: bool = False) -> float:
        tau = float(self._check_tau(tau))
        f = _branch(self.eigenvalues, tau, self.beta, left)
        U = self.eigenvectors
        return float(np.dot(U[a] * f, U[b]))


def chebyshev_rho(beta: float, norm: float) -> float:
    """Bernstein ellipse parameter on which the rescaled branch functions stay bounded."""
    q = np.pi / (2.0 * beta * norm)
    return float(q + np.sqrt(1.0 + q * q))


def chebyshev_degree(beta: float, norm: float, eps_g: float, max_degree: int = DEFAULT_MAX_DEGREE) -> int:
    """Smallest ``n`` with ``2 rho^-n / (rho - 1) <= eps_g / 2``.

    The extra factor 2 covers the aliasing of interpolation coefficients
    relative to the truncated Chebyshev series.
    """
    if eps_g <= 0:
        raise DomainError("eps_g must be positive")
    if norm == 0.0:
        return 0
    rho = chebyshev_rho(beta, norm)
    n = int(np.ceil(np.log(4.0 / ((rho - 1.0) * eps_g)) / np.log(rho)))
    n = max(n, 0)
    if n > max_degree:
        raise ResourceError(
            f"Chebyshev degree {n} required for eps_g={eps_g:g} exceeds the cap {max_degree}"
        )
    return n


@dataclass(frozen=True, eq=False)
class ChebyshevGreens(GreensProvider):
    hamiltonian: QuadraticHamiltonian
    beta: float
    eps_g: float
    scale: float
    degree: int
    h_scaled: scipy.sparse.csr_matrix
    backend: Backend = Backend.CHEBYSHEV

    def coefficients(self, taus, left: bool = False) -> np.ndarray:
        """Interpolation coefficients of ``x -> f(b x, tau)``, shape ``taus.shape + (n+1,)``."""
        taus = np.asarray(taus, dtype=float)
        n1 = self.degree + 1
        if self.scale == 0.0:
            return _branch(0.0, taus, self.beta, left)[..., None]
        nodes = np.cos(np.pi * (np.arange(n1) + 0.5) / n1)
        vals = _branch(self.scale * nodes, taus[..., None], self.beta, left)
        c = scipy.fft.dct(vals, type=2, axis=-1) / n1
        c[..., 0] *= 0.5
        return c

    def _powers(self) -> np.ndarray:
        T = self.__dict__.get("_tstack")
        if T is None:
            N = self.n_modes
            hs = self.h_scaled.toarray()
            T = np.empty((self.degree + 1, N, N))
            T[0] = np.eye(N)
            if self.degree >= 1:
                T[1] = hs
            for k in range(2, self.degree + 1):
                T[k] = 2.0 * hs @ T[k - 1] - T[k - 2]
            T.setflags(write=False)
            self.__dict__["_tstack"] = T
        return T

    def g_tensor(self, taus, left: bool = False) -> np.ndarray:
        taus = self._check_tau(taus)
        c = self.coefficients(taus, left)
        return np.tensordot(c, self._powers(), axes=([-1], [0]))

    def entry(self, a: int, b: int, tau: float, left: bool = False) -> float:
        """Single entry by the three-term recurrence on the vector ``|b>``."""
        tau = float(self._check_tau(tau))
        c = self.coefficients(tau, left)
        v_prev = np.zeros(self.n_modes)
        v_prev[b] = 1.0
        total = c[0] * v_prev[a]
        if self.degree == 0:
            return float(total)
        v = self.h_scaled @ v_prev
        total += c[1] * v[a]
        for k in range(2, self.degree + 1):
            v, v_prev = 2.0 * (self.h_scaled @ v) - v_prev, v
            total += c[k] * v[a]
        return float(total)


def build_dense(h: QuadraticHamiltonian, beta: float) -> DenseGreens:
    if not beta > 0:
        raise DomainError("beta must be positive")
    try:
        eps, U = scipy.linalg.eigh(h.h)
    except (np.linalg.LinAlgError, ValueError) as exc:
        cond = np.linalg.cond(h.h)
        raise NumericError(f"eigendecomposition of h failed (condition number {cond:.3g}): {exc}") from exc
    recon = (U * eps) @ U.T
    if np.max(np.abs(recon - h.h), initial=0.0) > 1e-10 * max(1.0, np.abs(h.h).max(initial=0.0)):
        raise NumericError("eigendecomposition does not reconstruct h to 1e-10")
    eps.setflags(write=False)
    U.setflags(write=False)
    return DenseGreens(h, float(beta), eps, U)


def build_chebyshev(
    h: QuadraticHamiltonian, beta: float, eps_g: float, max_degree: int = DEFAULT_MAX_DEGREE
) -> ChebyshevGreens:
    """Chebyshev backend scaled by the certified bound ``sqrt(|h|_1 |h|_inf)``."""
    if not beta > 0:
        raise DomainError("beta must be positive")
    hs = scipy.sparse.csr_matrix(h.h)
    absh = abs(hs)
    norm1 = float(absh.sum(axis=0).max()) if hs.nnz else 0.0
    norm_inf = float(absh.sum(axis=1).max()) if hs.nnz else 0.0
    b = float(np.sqrt(norm1 * norm_inf))
    n = chebyshev_degree(beta, b, eps_g, max_degree)
    scaled = hs / b if b > 0 else hs
    return ChebyshevGreens(h, float(beta), float(eps_g), b, n, scipy.sparse.csr_matrix(scaled))


def build_provider(h: QuadraticHamiltonian, beta: float, backend: str = "auto", eps_g: float = 1e-10):
    """Dense by default; Chebyshev on request or for declared finite-range ``h``."""
    if backend == "auto":
        backend = "chebyshev" if (h.range_r1 is not None or h.n_modes > 4096) else "dense"
    if backend in ("dense", Backend.DENSE.value):
        return build_dense(h, beta)
    if backend in ("chebyshev", Backend.CHEBYSHEV.value):
        return build_chebyshev(h, beta, eps_g)
    raise DomainError(f"unknown Green's function backend {backend!r}")


def eval_g(provider: GreensProvider, a: ModeIndex | int, b: ModeIndex | int, tau: float) -> float:
    """``g_tau(a, b)``; ``tau == 0`` takes the ``tau >= 0`` branch."""
    a = a.flat if isinstance(a, ModeIndex) else int(a)
    b = b.flat if isinstance(b, ModeIndex) else int(b)
    return provider.entry(a, b, tau)


def _tau_grid_tensors(provider: GreensProvider, tau_grid_size: int):
    if tau_grid_size < 2:
        raise DomainError("tau_grid_size must be at least 2")
    grid = np.linspace(-provider.beta, provider.beta, tau_grid_size)
    yield provider.g_tensor(grid)
    yield provider.g_tensor(np.zeros(1), left=True)
    yield provider.g_tensor(np.zeros(1), left=False)


def estimate_Lg(provider: GreensProvider, tau_grid_size: int = 64) -> float:
    """Grid estimate (a lower bound) of ``sup_tau max_a sum_b |g_tau(a, b)|``."""
    best = 0.0
    for g in _tau_grid_tensors(provider, tau_grid_size):
        best = max(best, float(np.abs(g).sum(axis=-1).max()))
    return best


@dataclass(frozen=True)
class DecayProfile:
    distances: tuple[int, ...]
    max_abs_g: tuple[float, ...]
    fitted_K: float | None = None
    fitted_xi: float | None = None

    def rows(self):
        return list(zip(self.distances, self.max_abs_g))


def decay_profile(provider: GreensProvider, tau_grid_size: int = 64) -> DecayProfile:
    """Largest ``|g|`` at each lattice distance, plus a log-linear tail fit ``K e^{-d/xi}``."""
    if provider.backend is not Backend.DENSE:
        raise DomainError("decay_profile needs the dense backend")
    dmat = provider.lattice.mode_distance_matrix()
    gmax = np.zeros_like(dmat, dtype=float)
    for g in _tau_grid_tensors(provider, tau_grid_size):
        gmax = np.maximum(gmax, np.abs(g).max(axis=0))
    distances = np.unique(dmat)
    values = np.array([gmax[dmat == d].max() for d in distances])
    K = xi = None
    tail = distances >= 2
    if len(distances) >= 3 and tail.sum() >= 2:
        y = np.log(np.maximum(values[tail], 1e-300))
        slope, intercept = np.polyfit(distances[tail].astype(float), y, 1)
        K = float(np.exp(intercept))
        xi = float(-1.0 / slope) if slope < 0 else float("inf")
    return DecayProfile(
        tuple(int(d) for d in distances), tuple(float(v) for v in values), K, xi
    )
