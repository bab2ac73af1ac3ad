"""Lattice geometry, quadratic Hamiltonians and interaction lists.

Modes are numbered ``flat = 2 * site + spin`` where ``site`` is the
row-major (C order) index of the lattice coordinate and ``spin`` is 0 for
up and 1 for down.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "Spin",
    "ModeIndex",
    "Lattice",
    "QuadraticHamiltonian",
    "InteractionTerm",
    "InteractionSet",
    "build_hubbard",
    "dist",
    "term_distance",
    "summability_LV",
    "convergence_diagnostic",
    "number_operator",
]


class Spin(IntEnum):
    UP = 0
    DOWN = 1


@dataclass(frozen=True)
class ModeIndex:
    site: tuple[int, ...]
    spin: Spin
    flat: int


@dataclass(frozen=True)
class Lattice:
    """Hypercubic lattice with optional periodic wrap in every direction."""

    dims: tuple[int, ...]
    periodic: bool = False

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise ConfigurationError(f"lattice.dims must be positive integers, got {self.dims!r}")
        if self.periodic and any(d == 2 for d in dims):
            raise ConfigurationError(
                "periodic lattices need every direction of length 1 or >= 3 "
                f"(length 2 double-counts the bond), got {dims}"
            )
        object.__setattr__(self, "dims", dims)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_modes(self) -> int:
        return 2 * self.n_sites

    def coords(self, site: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(site, self.dims))

    def site_of(self, coords: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(coords), self.dims))

    def mode(self, flat: int) -> ModeIndex:
        if not 0 <= flat < self.n_modes:
            raise IndexError(f"mode {flat} outside [0, {self.n_modes})")
        return ModeIndex(self.coords(flat // 2), Spin(flat % 2), int(flat))

    def flat(self, coords: Sequence[int], spin: Spin | int) -> int:
        return 2 * self.site_of(coords) + int(spin)

    def site_distance(self, x: Sequence[int], y: Sequence[int]) -> int:
        d = 0
        for xi, yi, n in zip(x, y, self.dims):
            step = abs(int(xi) - int(yi))
            if self.periodic:
                step = min(step, n - step)
            d += step
        return d

    @property
    def diameter(self) -> int:
        if self.periodic:
            return sum(n // 2 for n in self.dims)
        return sum(n - 1 for n in self.dims)

    def mode_distance_matrix(self) -> np.ndarray:
        """Pairwise graph distances between all modes, spin ignored."""
        coords = np.array([self.coords(i) for i in range(self.n_sites)], dtype=np.int64)
        diff = np.abs(coords[:, None, :] - coords[None, :, :])
        if self.periodic:
            diff = np.minimum(diff, np.asarray(self.dims)[None, None, :] - diff)
        site_d = diff.sum(axis=-1)
        return np.repeat(np.repeat(site_d, 2, axis=0), 2, axis=1)

    def bonds(self) -> list[tuple[int, int]]:
        """Nearest-neighbour site pairs ``(i, j)`` with ``i < j``, each listed once."""
        out = set()
        for i in range(self.n_sites):
            c = self.coords(i)
            for axis, n in enumerate(self.dims):
                if n == 1:
                    continue
                nxt = list(c)
                nxt[axis] += 1
                if nxt[axis] == n:
                    if not self.periodic:
                        continue
                    nxt[axis] = 0
                j = self.site_of(nxt)
                out.add((min(i, j), max(i, j)))
        return sorted(out)


def dist(a: ModeIndex, b: ModeIndex, lattice: Lattice) -> int:
    """Graph distance between the sites of two modes."""
    return lattice.site_distance(a.site, b.site)


@dataclass(frozen=True, eq=False)
class QuadraticHamiltonian:
    """Real symmetric single-particle matrix ``h`` on a lattice."""

    h: np.ndarray
    lattice: Lattice
    range_r1: int | None = None

    def __post_init__(self):
        h = np.array(self.h, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ConfigurationError(f"h must be square, got shape {h.shape}")
        if h.shape[0] != self.lattice.n_modes:
            raise ConfigurationError(
                f"h has {h.shape[0]} modes but the lattice has {self.lattice.n_modes}"
            )
        if not np.all(np.isfinite(h)):
            raise ConfigurationError("h contains non-finite entries")
        if np.max(np.abs(h - h.T), initial=0.0) > 1e-12:
            raise ConfigurationError("h must be real symmetric")
        h = 0.5 * (h + h.T)
        if self.range_r1 is not None:
            d = self.lattice.mode_distance_matrix()
            if np.any(h[d >= self.range_r1] != 0.0) or np.max(np.abs(h), initial=0.0) > 1.0:
                raise ConfigurationError(
                    f"h violates the declared finite range r1={self.range_r1}"
                )
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def n_modes(self) -> int:
        return self.h.shape[0]

    @property
    def lattice_dims(self) -> tuple[int, ...]:
        return self.lattice.dims


@dataclass(frozen=True)
class InteractionTerm:
    """Normal-ordered monomial ``v * psi^dag_{p+_1}..psi^dag_{p+_m} psi_{p-_1}..psi_{p-_m}``.

    Modes are flat indices.
    """

    p_plus: tuple[int, ...]
    p_minus: tuple[int, ...]
    v: float = 1.0

    def __post_init__(self):
        pp = tuple(int(a) for a in self.p_plus)
        pm = tuple(int(a) for a in self.p_minus)
        if len(pp) != len(pm) or not pp:
            raise ConfigurationError(
                f"creation and annihilation lists must be nonempty and of equal length: {pp}, {pm}"
            )
        if len(set(pp)) != len(pp) or len(set(pm)) != len(pm):
            raise ConfigurationError(f"repeated mode inside a term vanishes by nilpotency: {pp}, {pm}")
        if not np.isfinite(self.v):
            raise ConfigurationError("term coefficient must be finite")
        object.__setattr__(self, "p_plus", pp)
        object.__setattr__(self, "p_minus", pm)
        object.__setattr__(self, "v", float(self.v))

    @property
    def m(self) -> int:
        return len(self.p_plus)

    @property
    def modes(self) -> frozenset[int]:
        return frozenset(self.p_plus) | frozenset(self.p_minus)


def number_operator(mode: int) -> InteractionTerm:
    return InteractionTerm((mode,), (mode,), 1.0)


def _index_terms(terms: Sequence[InteractionTerm]) -> dict[int, tuple[int, ...]]:
    index: dict[int, list[int]] = {}
    for k, term in enumerate(terms):
        for a in sorted(term.modes):
            index.setdefault(a, []).append(k)
    return {a: tuple(ks) for a, ks in sorted(index.items())}


@dataclass(frozen=True)
class InteractionSet:
    """The interaction list together with the constant energy shift.

    Terms with ``v == 0`` are dropped at construction.
    """

    terms: tuple[InteractionTerm, ...] = ()
    energy_offset: float = 0.0
    site_index: Mapping[int, tuple[int, ...]] = field(default=None, compare=False)

    def __post_init__(self):
        kept = tuple(t for t in self.terms if t.v != 0.0)
        object.__setattr__(self, "terms", kept)
        object.__setattr__(self, "energy_offset", float(self.energy_offset))
        object.__setattr__(self, "site_index", _index_terms(kept))

    @property
    def max_order_M(self) -> int:
        return max((t.m for t in self.terms), default=0)

    def __len__(self) -> int:
        return len(self.terms)

    def rebuild_site_index(self) -> dict[int, tuple[int, ...]]:
        return _index_terms(self.terms)

    def validate_modes(self, n_modes: int) -> None:
        for t in self.terms:
            bad = [a for a in t.modes if not 0 <= a < n_modes]
            if bad:
                raise ConfigurationError(f"term {t} references modes {bad} outside [0, {n_modes})")


def term_distance(p: InteractionTerm, q: InteractionTerm, mode_dist: np.ndarray) -> int:
    """Smallest graph distance between any mode of ``p`` and any mode of ``q``."""
    a = sorted(p.modes)
    b = sorted(q.modes)
    return int(mode_dist[np.ix_(a, b)].min())


def build_hubbard(
    dims: Iterable[int],
    t_hop: float = 1.0,
    mu: float = 0.0,
    U: float = 0.0,
    periodic: bool = False,
) -> tuple[QuadraticHamiltonian, InteractionSet]:
    """Fermi-Hubbard model with the interaction written as ``U (n_up - 1/2)(n_dn - 1/2)``.

    The single-particle part of the interaction goes into the diagonal of
    ``h`` and the constant ``U/4`` per site into ``energy_offset``, so the
    returned interaction list only holds the quartic ``U n_up n_dn`` terms.
    """
    lattice = Lattice(tuple(dims), bool(periodic))
    n = lattice.n_modes
    h = np.zeros((n, n))
    for i, j in lattice.bonds():
        for spin in (0, 1):
            a, b = 2 * i + spin, 2 * j + spin
            h[a, b] -= t_hop
            h[b, a] -= t_hop
    h[np.diag_indices(n)] = -mu - 0.5 * U
    terms = []
    if U != 0.0:
        for i in range(lattice.n_sites):
            up, dn = 2 * i, 2 * i + 1
            terms.append(InteractionTerm((up, dn), (dn, up), U))
    offset = 0.25 * U * lattice.n_sites
    return QuadraticHamiltonian(h, lattice), InteractionSet(tuple(terms), offset)


def summability_LV(V: InteractionSet) -> float:
    """Twice the largest total ``|v|`` attached to a single annihilation or creation mode."""
    minus: dict[int, float] = {}
    plus: dict[int, float] = {}
    for t in V.terms:
        for x in t.p_minus:
            minus[x] = minus.get(x, 0.0) + abs(t.v)
        for y in t.p_plus:
            plus[y] = plus.get(y, 0.0) + abs(t.v)
    return 2.0 * max(max(minus.values(), default=0.0), max(plus.values(), default=0.0))


def convergence_diagnostic(V: InteractionSet, Lg: float, beta: float) -> float:
    """Ratio ``beta * M * 4**M * L_V * L_g`` controlling series convergence."""
    M = V.max_order_M
    return float(beta * M * 4.0**M * summability_LV(V) * Lg)
