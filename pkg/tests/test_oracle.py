import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from fermitree.errors import DomainError, ResourceError
from fermitree.model import InteractionSet, InteractionTerm, Lattice, QuadraticHamiltonian, build_hubbard, number_operator
from fermitree.oracle import (
    build_fock,
    exact_cumulant,
    exact_logZ,
    exact_logZ0_free,
    exact_observable,
    exact_time_ordered,
    set_partitions,
)
from support import random_h, random_term


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.sampled_from([2, 4, 6, 8]))
def test_free_logz_matches_fock_space(seed, n):
    rng = np.random.default_rng(seed)
    h = random_h(rng, n, norm=3.0)
    res = exact_logZ(h, InteractionSet(), 1.7)
    assert res.logZ0 == pytest.approx(exact_logZ0_free(h, 1.7), abs=1e-10)
    assert res.log_ratio == pytest.approx(0.0, abs=1e-10)


def test_single_level_by_hand():
    h = QuadraticHamiltonian(np.diag([0.7, -0.2]), Lattice((1,)))
    assert exact_logZ0_free(h, 2.0) == pytest.approx(math.log1p(math.exp(-1.4)) + math.log1p(math.exp(0.4)))


def test_zero_hamiltonian_propagators_are_half():
    h = QuadraticHamiltonian(np.zeros((2, 2)), Lattice((1,)))
    n = number_operator(0)
    assert exact_time_ordered(h, 1.0, [(n, 0.3)]) == pytest.approx(0.5)
    hop = InteractionTerm((0,), (1,))
    back = InteractionTerm((1,), (0,))
    # <T c0+ c1 (0.6) c1+ c0 (0.2)> = <c0+ c0> <c1 c1+> = 1/4 at h = 0
    assert exact_time_ordered(h, 1.0, [(hop, 0.6), (back, 0.2)]) == pytest.approx(0.25)


def test_fock_operators_anticommute():
    ops = build_fock(3)
    eye = np.eye(ops.dim)
    for a in range(3):
        for b in range(3):
            anti = (ops.psi[a] @ ops.psi_dag[b] + ops.psi_dag[b] @ ops.psi[a]).toarray()
            assert np.allclose(anti, eye * (a == b))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_time_ordering_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    h = random_h(rng, 4)
    terms = [random_term(rng, 4, int(rng.integers(1, 3))) for _ in range(3)]
    taus = rng.uniform(0, 1.0, size=3)
    base = exact_time_ordered(h, 1.0, list(zip(terms, taus)))
    perm = rng.permutation(3)
    shuffled = exact_time_ordered(h, 1.0, [(terms[i], taus[i]) for i in perm])
    assert shuffled == pytest.approx(base, abs=1e-12)


def test_time_ordered_rejections():
    h = random_h(np.random.default_rng(0), 2)
    t = number_operator(0)
    with pytest.raises(DomainError):
        exact_time_ordered(h, 1.0, [(t, 0.5), (t, 0.5)])
    with pytest.raises(DomainError):
        exact_time_ordered(h, 1.0, [(t, 1.5)])
    big, _ = build_hubbard((6,))
    with pytest.raises(ResourceError):
        exact_time_ordered(big, 1.0, [(t, 0.5)])


def test_non_hermitian_interaction_rejected():
    h, _ = build_hubbard((2,))
    with pytest.raises(DomainError):
        exact_logZ(h, InteractionSet((InteractionTerm((0,), (2,), 0.3),)), 1.0)


def test_observable_at_zero_interaction_is_fermi_function():
    h, _ = build_hubbard((3,), mu=0.4)
    occ = np.linalg.inv(np.eye(6) + scipy.linalg.expm(1.2 * h.h))
    assert exact_observable(h, InteractionSet(), 1.2, number_operator(2)) == pytest.approx(occ[2, 2], abs=1e-12)


def test_offset_reporting():
    h, V = build_hubbard((2,), U=0.6)
    res = exact_logZ(h, V, 1.5)
    assert res.logZ_with_offset == pytest.approx(res.logZ - 1.5 * 0.3)


def test_set_partitions_bell_numbers():
    assert [sum(1 for _ in set_partitions(range(n))) for n in range(6)] == [1, 1, 2, 5, 15, 52]


def test_cumulant_of_one_term_is_the_moment():
    rng = np.random.default_rng(3)
    h = random_h(rng, 4)
    t = random_term(rng, 4, 2)
    assert exact_cumulant(h, 1.0, [(t, 0.4)]) == pytest.approx(exact_time_ordered(h, 1.0, [(t, 0.4)]))


def test_cumulant_vanishes_for_decoupled_terms():
    h = QuadraticHamiltonian(np.diag([0.3, -0.1, 0.5, 0.2]), Lattice((2,)))
    a, b = InteractionTerm((0,), (0,)), InteractionTerm((2,), (2,))
    assert exact_cumulant(h, 1.0, [(a, 0.2), (b, 0.7)]) == pytest.approx(0.0, abs=1e-13)
