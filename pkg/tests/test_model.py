import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fermitree.errors import ConfigurationError
from fermitree.model import (
    InteractionSet,
    InteractionTerm,
    Lattice,
    QuadraticHamiltonian,
    Spin,
    build_hubbard,
    convergence_diagnostic,
    dist,
    number_operator,
    summability_LV,
    term_distance,
)

dims_strategy = st.lists(st.integers(1, 4), min_size=1, max_size=3)


@given(dims=dims_strategy, periodic=st.booleans())
def test_hubbard_without_u_has_no_interaction(dims, periodic):
    if periodic and 2 in dims:
        return
    h, V = build_hubbard(dims, t_hop=1.0, mu=0.3, U=0.0, periodic=periodic)
    assert len(V) == 0 and V.energy_offset == 0.0
    assert h.n_modes == 2 * int(np.prod(dims))


@given(dims=dims_strategy, U=st.floats(-2, 2).filter(lambda u: u != 0))
def test_site_index_rebuild_matches(dims, U):
    _, V = build_hubbard(dims, U=U)
    assert V.rebuild_site_index() == dict(V.site_index)


@given(perm_seed=st.integers(0, 2**32 - 1))
def test_summability_permutation_invariant(perm_seed):
    rng = np.random.default_rng(perm_seed)
    terms = [InteractionTerm(tuple(rng.permutation(6)[:2]), tuple(rng.permutation(6)[:2]), rng.normal())
             for _ in range(5)]
    a = summability_LV(InteractionSet(tuple(terms)))
    b = summability_LV(InteractionSet(tuple(terms[i] for i in rng.permutation(5))))
    assert a == pytest.approx(b, rel=1e-15)


@settings(max_examples=200)
@given(dims=st.lists(st.integers(3, 6), min_size=1, max_size=3), periodic=st.booleans(), data=st.data())
def test_dist_triangle_inequality(dims, periodic, data):
    lat = Lattice(tuple(dims), periodic)
    a, b, c = (lat.mode(data.draw(st.integers(0, lat.n_modes - 1))) for _ in range(3))
    assert dist(a, c, lat) <= dist(a, b, lat) + dist(b, c, lat)
    assert dist(a, b, lat) == dist(b, a, lat)
    assert dist(a, a, lat) == 0


def test_lattice_rejects_periodic_length_two():
    with pytest.raises(ConfigurationError):
        Lattice((2,), periodic=True)
    with pytest.raises(ConfigurationError):
        Lattice((0, 3))


def test_lattice_geometry():
    lat = Lattice((4, 3), periodic=False)
    assert lat.diameter == 5
    assert Lattice((5,), periodic=True).diameter == 2
    m = lat.mode(lat.flat((2, 1), Spin.DOWN))
    assert m.site == (2, 1) and m.spin is Spin.DOWN
    assert len(lat.bonds()) == 3 * 3 + 4 * 2
    assert len(Lattice((4,), periodic=True).bonds()) == 4


def test_hubbard_counterterms_and_offset():
    h, V = build_hubbard((3,), t_hop=1.0, mu=0.25, U=0.8)
    assert np.allclose(np.diag(h.h), -0.25 - 0.4)
    assert V.energy_offset == pytest.approx(0.2 * 3)
    assert [t.modes for t in V.terms] == [frozenset({0, 1}), frozenset({2, 3}), frozenset({4, 5})]
    assert h.h[0, 2] == -1.0 and h.h[0, 3] == 0.0 and h.h[0, 4] == 0.0


def test_quadratic_hamiltonian_validation():
    lat = Lattice((1,))
    with pytest.raises(ConfigurationError):
        QuadraticHamiltonian(np.array([[0.0, 1.0], [0.5, 0.0]]), lat)
    with pytest.raises(ConfigurationError):
        QuadraticHamiltonian(np.zeros((3, 3)), lat)
    h = QuadraticHamiltonian(np.eye(2), lat)
    with pytest.raises(ValueError):
        h.h[0, 0] = 2.0
    chain = Lattice((3,))
    hop, _ = build_hubbard((3,))
    with pytest.raises(ConfigurationError):
        QuadraticHamiltonian(hop.h, chain, range_r1=1)
    assert QuadraticHamiltonian(hop.h, chain, range_r1=2).range_r1 == 2


def test_interaction_term_validation():
    with pytest.raises(ConfigurationError):
        InteractionTerm((0, 0), (1, 2))
    with pytest.raises(ConfigurationError):
        InteractionTerm((0,), (1, 2))
    with pytest.raises(ConfigurationError):
        InteractionTerm((), ())
    t = number_operator(3)
    assert t.m == 1 and t.modes == frozenset({3}) and t.v == 1.0


def test_interaction_set_drops_zero_terms():
    V = InteractionSet((InteractionTerm((0,), (1,), 0.0), InteractionTerm((0, 1), (1, 0), 2.0)))
    assert len(V) == 1 and V.max_order_M == 2
    with pytest.raises(ConfigurationError):
        V.validate_modes(1)


def test_term_distance_is_closest_pair():
    lat = Lattice((5,))
    D = lat.mode_distance_matrix()
    p = InteractionTerm((0,), (8,))
    q = InteractionTerm((4,), (6,))
    assert term_distance(p, q, D) == 1


def test_convergence_diagnostic_formula():
    _, V = build_hubbard((2,), U=0.5)
    assert summability_LV(V) == pytest.approx(1.0)
    assert convergence_diagnostic(V, Lg=0.7, beta=2.0) == pytest.approx(2.0 * 2 * 16 * 1.0 * 0.7)
