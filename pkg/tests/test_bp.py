import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fermitree import tree_sampler as ts
from fermitree.bp import (
    TreeModel,
    bp_conditioned,
    bp_run,
    bp_solve,
    bp_truncated,
    brute_force,
    neighbour_lists,
    tree_model_from_terms,
)
from fermitree.errors import DomainError
from fermitree.greens import build_dense
from support import pooled_chi2_z, random_h, random_term


def random_model(rng, s, n, with_distance=False):
    tree = ts.sample_tree(s, rng)
    vf = rng.uniform(0.05, 1.0, size=(s, n))
    ef = {e: rng.uniform(0.0, 1.0, size=(n, n)) for e in tree.edges}
    D = None
    if with_distance:
        pos = rng.integers(0, 4, size=n)
        D = np.abs(pos[:, None] - pos[None, :])
    return TreeModel(tree, vf, ef, distance=D)


@settings(max_examples=60)
@given(seed=st.integers(0, 2**32 - 1), s=st.integers(1, 5), n=st.integers(1, 4))
def test_partition_function_matches_enumeration(seed, s, n):
    model = random_model(np.random.default_rng(seed), s, n)
    Z, _ = brute_force(model)
    assert bp_solve(model).Z == pytest.approx(Z, rel=1e-12)


@settings(max_examples=40)
@given(seed=st.integers(0, 2**32 - 1), s=st.integers(2, 4), n=st.integers(2, 4), R=st.integers(0, 3))
def test_truncated_partition_function(seed, s, n, R):
    model = random_model(np.random.default_rng(seed), s, n, with_distance=True)
    Z, _ = brute_force(model, R=R)
    got = bp_solve(model, R=R).Z
    assert got == pytest.approx(Z, rel=1e-12, abs=1e-300)


@settings(max_examples=40)
@given(seed=st.integers(0, 2**32 - 1), s=st.integers(1, 4), n=st.integers(1, 4), data=st.data())
def test_conditioned_partition_function(seed, s, n, data):
    model = random_model(np.random.default_rng(seed), s, n)
    root = data.draw(st.integers(0, n - 1))
    Z, _ = brute_force(model, root_state=root)
    assert bp_solve(model, root_state=root).Z == pytest.approx(Z, rel=1e-12)


def test_conditioned_samples_respect_root_and_distribution():
    rng = np.random.default_rng(1)
    model = random_model(rng, 3, 3, with_distance=True)
    Z, probs = brute_force(model, R=2, root_state=1)
    sol = bp_solve(model, R=2, root_state=1)
    draws = sol.sample(rng, 50_000)
    assert np.all(draws[:, 0] == 1)
    counts = np.bincount(np.ravel_multi_index(draws.T, (3, 3, 3)), minlength=27)
    assert pooled_chi2_z(counts, probs) < 4
    Zc, rest = bp_conditioned(model, 1, 2, rng)
    assert Zc == pytest.approx(Z) and len(rest) == 2


def test_single_vertex_model():
    model = TreeModel(ts.LabeledTree(1, ()), np.array([[0.2, 0.3, 0.5]]), {})
    Z, x = bp_run(model, np.random.default_rng(0))
    assert Z == pytest.approx(1.0) and len(x) == 1


def test_empty_measure():
    tree = ts.LabeledTree(2, ((1, 2),))
    model = TreeModel(tree, np.ones((2, 2)), {(1, 2): np.zeros((2, 2))})
    assert bp_run(model, np.random.default_rng(0)) == (0.0, None)
    with pytest.raises(DomainError):
        bp_solve(model).sample(np.random.default_rng(0))
    dmodel = TreeModel(tree, np.ones((2, 2)), {(1, 2): np.eye(2)[::-1]}, distance=np.array([[0, 5], [5, 0]]))
    assert bp_truncated(dmodel, 1, np.random.default_rng(0)) == (0.0, None)


def test_validation():
    tree = ts.LabeledTree(2, ((1, 2),))
    with pytest.raises(DomainError):
        TreeModel(tree, -np.ones((2, 2)), {(1, 2): np.ones((2, 2))})
    with pytest.raises(DomainError):
        TreeModel(tree, np.ones((2, 2)), {(1, 2): np.ones((3, 3))})
    with pytest.raises(DomainError):
        neighbour_lists(3, R=1)


def test_messages_survive_extreme_scales():
    rng = np.random.default_rng(3)
    tree = ts.sample_tree(6, rng)
    vf = np.full((6, 3), 1e-120)
    ef = {e: np.full((3, 3), 1e-100) for e in tree.edges}
    sol = bp_solve(TreeModel(tree, vf, ef))
    assert sol.log_Z == pytest.approx(6 * np.log(3e-120) + 5 * np.log(1e-100), rel=1e-12)


def test_edge_factors_from_terms_are_total_amplitudes():
    rng = np.random.default_rng(4)
    h = random_h(rng, 4)
    g = build_dense(h, 1.0)
    terms = [random_term(rng, 4, 2, 0.3), random_term(rng, 4, 1, -0.7)]
    tree = ts.LabeledTree(3, ((1, 2), (1, 3)))
    taus = [0.1, 0.5, 0.9]
    model = tree_model_from_terms(tree, taus, terms, g)
    assert np.allclose(model.vertex_factor, [[0.3, 0.7]] * 3)
    for (i, j), E in model.edge_factor.items():
        for p in range(2):
            for q in range(2):
                ref = ts.edge_amplitude_M(terms[p], terms[q], taus[i - 1], taus[j - 1], g)
                assert E[p, q] == pytest.approx(ref, rel=1e-12)
