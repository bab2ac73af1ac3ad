"""Self-checks run by ``fermitree verify`` against exact references."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
import scipy.stats

from . import tree_sampler as ts
from .bp import TreeModel, bp_solve, brute_force
from .config import Config
from .errors import ConfigurationError
from .estimator import RunConfig, deterministic_order1, estimate_log_ratio, sample_order_weights
from .greens import build_chebyshev, build_dense
from .model import InteractionSet, InteractionTerm, Lattice, QuadraticHamiltonian
from .oracle import MAX_MODES, exact_logZ, exact_time_ordered

__all__ = ["CheckResult", "run_checks", "random_symmetric", "random_term", "fd_order1"]


@dataclass(frozen=True)
class CheckResult:
    check: str
    passed: bool
    observed: float
    expected: float
    tolerance: float

    def to_record(self) -> dict:
        return asdict(self)


def random_symmetric(rng, n, norm=2.0):
    A = rng.normal(size=(n, n))
    h = 0.5 * (A + A.T)
    return h * (rng.uniform(0.1, 1.0) * norm / np.linalg.norm(h, 2))


def random_term(rng, n_modes, m, v=1.0):
    return InteractionTerm(tuple(rng.permutation(n_modes)[:m]), tuple(rng.permutation(n_modes)[:m]), v)


def _chain(n_modes):
    return Lattice((n_modes // 2,))


def check_wick(rng, n_instances=50) -> CheckResult:
    worst = 0.0
    for _ in range(n_instances):
        N = int(rng.integers(2, 5)) // 2 * 2
        h = QuadraticHamiltonian(random_symmetric(rng, N), _chain(N))
        beta = float(rng.choice([0.5, 1.0, 2.0]))
        s = int(rng.integers(1, 4))
        terms = [random_term(rng, N, int(rng.integers(1, 3))) for _ in range(s)]
        taus = rng.uniform(0, beta, size=s)
        exact = exact_time_ordered(h, beta, list(zip(terms, taus)))
        worst = max(worst, abs(exact - ts.wick_correlator(terms, taus, build_dense(h, beta))))
    return CheckResult("wick_identity", worst <= 1e-8, worst, 0.0, 1e-8)


def _random_tree_model(rng, s, n):
    tree = ts.sample_tree(s, rng)
    vf = rng.uniform(0.1, 1.0, size=(s, n))
    ef = {e: rng.uniform(0.0, 1.0, size=(n, n)) for e in tree.edges}
    return TreeModel(tree, vf, ef)


def check_bp(rng, n_models=20) -> CheckResult:
    worst = 0.0
    for _ in range(n_models):
        model = _random_tree_model(rng, int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        Z_ref, _ = brute_force(model)
        worst = max(worst, abs(bp_solve(model).Z / Z_ref - 1.0))
    return CheckResult("bp_bruteforce", worst <= 1e-12, worst, 0.0, 1e-12)


def check_prufer(rng, n_draws=160_000) -> CheckResult:
    codes = rng.integers(1, 5, size=(n_draws, 2))
    trees = [ts.decode_prufer(c, 4).edges for c in codes]
    _, counts = np.unique(np.array([str(t) for t in trees]), return_counts=True)
    counts = np.concatenate([counts, np.zeros(16 - len(counts))])
    stat = float(scipy.stats.chisquare(counts).statistic)
    q = float(scipy.stats.chi2.ppf(0.999, 15))
    return CheckResult("prufer_uniformity", stat < q, stat, 15.0, q)


def check_growing_paths(max_s=5) -> CheckResult:
    worst = 0.0
    ok = True
    for s in range(1, max_s + 1):
        for tree in ts.all_trees(s):
            ok &= ts.growing_path_measure(tree, exact=True) == Fraction(1)
            worst = max(worst, abs(ts.growing_path_measure(tree, exact=False) - 1.0))
    return CheckResult("growing_path_normalization", ok and worst <= 1e-12, worst, 0.0, 1e-12)


def check_determinant_bound(config: Config, samples=2000) -> CheckResult:
    h, V = config.build_model()
    run = config.run_config()
    provider = build_dense(h, run.beta)
    violations = 0
    for s in range(1, run.S + 1):
        cfg = RunConfig(beta=run.beta, S=s, L=samples, seed=run.seed + s)
        _, status, det, dim = sample_order_weights(s, cfg, V, provider)
        ok = status == 0
        violations += int(np.sum(ok & (np.abs(det) > np.ldexp(1.0, 2 * dim) * (1 + 1e-12))))
    return CheckResult("determinant_bound", violations == 0, float(violations), 0.0, 0.0)


def check_chebyshev(config: Config, rng, n_points=100, eps_g=1e-8) -> CheckResult:
    h, _ = config.build_model()
    beta = config["run.beta"]
    dense = build_dense(h, beta)
    cheb = build_chebyshev(h, beta, eps_g)
    worst = 0.0
    for _ in range(n_points):
        a, b = rng.integers(0, h.n_modes, size=2)
        tau = rng.uniform(-beta, beta)
        worst = max(worst, abs(cheb.entry(a, b, tau) - dense.entry(a, b, tau)))
    return CheckResult("chebyshev_vs_dense", worst <= eps_g, worst, 0.0, eps_g)


def fd_order1(h, V: InteractionSet, beta: float, step=1e-4):
    """Central difference of ``log Z(lambda)`` at zero for ``H0 + lambda V``; returns value and error estimate."""

    def logZ(lam):
        scaled = InteractionSet(tuple(InteractionTerm(t.p_plus, t.p_minus, lam * t.v) for t in V.terms))
        return exact_logZ(h, scaled, beta).logZ

    def central(d):
        return (logZ(d) - logZ(-d)) / (2 * d)

    coarse, fine = central(step), central(step / 2)
    return coarse, abs(coarse - fine) * 4.0 / 3.0


def check_order1(config: Config) -> CheckResult:
    h, V = config.build_model()
    beta = config["run.beta"]
    det1 = deterministic_order1(V, build_dense(h, beta), beta)
    fd, err = fd_order1(h, V, beta)
    tol = 1e-6 + 3 * err
    return CheckResult("order1_deterministic", abs(det1 - fd) <= tol, det1, fd, tol)


def check_end_to_end(config: Config) -> CheckResult:
    h, V = config.build_model()
    run = config.run_config()
    cfg = RunConfig(beta=run.beta, S=run.S, L=config["verify.samples"], seed=run.seed, threads=run.threads)
    est = estimate_log_ratio(cfg, V, build_dense(h, run.beta))
    exact = exact_logZ(h, V, run.beta).log_ratio
    tol = max(3 * est.std_error, 0.01 * h.n_modes)
    return CheckResult("end_to_end", abs(est.value - exact) <= tol, est.value, exact, tol)


def run_checks(config: Config):
    """Yield one :class:`CheckResult` per check, in a fixed order."""
    h, _ = config.build_model()
    if h.n_modes > MAX_MODES:
        raise ConfigurationError(f"verify needs N <= {MAX_MODES} modes for the exact oracle, got {h.n_modes}")
    rng = np.random.default_rng(config["run.seed"])
    yield check_wick(rng)
    yield check_bp(rng)
    yield check_prufer(rng)
    yield check_growing_paths()
    yield check_determinant_bound(config)
    yield check_chebyshev(config, rng)
    yield check_order1(config)
    yield check_end_to_end(config)
