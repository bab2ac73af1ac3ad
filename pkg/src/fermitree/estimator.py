"""Importance-sampling estimator of ``log(Z/Z0)`` and of local observables.

Each sample ``l`` contributes ``W_l = sum_{s=1}^S w_s`` where ``w_s`` is one
independent draw at order ``s``: a uniform labeled tree, uniform times,
interaction terms sampled exactly by BP, one contraction per edge, and a
random growing path with interpolation variables.

Random numbers are generated per block of :data:`CHUNK` consecutive samples
and per order from a Philox stream keyed by ``(seed, block, order)``. Blocks
are processed in any order by any number of workers and merged by index, so
results do not depend on the worker count.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Sequence

import numpy as np

from . import _kernels as K
from .errors import ConfigurationError, DomainError, NumericError
from .greens import GreensProvider, estimate_Lg
from .model import (
    InteractionSet,
    InteractionTerm,
    QuadraticHamiltonian,
    convergence_diagnostic,
    summability_LV,
    term_distance,
)
from .tree_sampler import (
    LabeledTree,
    alpha_P,
    contraction_tensor,
    pack_terms,
)

__all__ = [
    "CHUNK",
    "Mode",
    "RunConfig",
    "OrderEstimate",
    "Estimate",
    "SampleDraw",
    "draw_order_s",
    "trace_draw",
    "sample_order_weights",
    "deterministic_order1",
    "estimate_log_ratio",
    "estimate_observable",
    "suggest_truncation",
    "hoeffding_samples",
    "term_distance_matrix",
]

CHUNK = 1024
_TENSOR_BYTES = 32 * 2**20


class Mode(str, Enum):
    GENERAL = "general"
    LOCAL_TRUNCATED = "local_truncated"
    TRANSLATION_INVARIANT = "translation_invariant"


@dataclass(frozen=True)
class RunConfig:
    beta: float = 1.0
    S: int = 6
    L: int = 200_000
    seed: int = 0
    mode: Mode = Mode.GENERAL
    R: int | None = None
    target_eps: float | None = None
    threads: int = 1
    diagnostic_threshold: float = 0.5
    tau_grid: int = 64

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.beta > 0:
            raise ConfigurationError("beta must be positive")
        if self.S < 1:
            raise ConfigurationError("S must be at least 1")
        if self.L < 1:
            raise ConfigurationError("L must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if self.threads < 1:
            raise ConfigurationError("threads must be at least 1")
        if self.mode is Mode.LOCAL_TRUNCATED and self.R is None:
            raise ConfigurationError("local_truncated mode needs R")
        if self.R is not None and self.R < 0:
            raise ConfigurationError("R must be nonnegative")


@dataclass(frozen=True)
class OrderEstimate:
    order: int
    value: float
    std_error: float


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float
    n_samples: int
    per_order: tuple[OrderEstimate, ...]
    n_zero_weight: int
    diagnostics: dict = field(default_factory=dict, compare=False)

    def to_record(self) -> dict[str, Any]:
        rec = asdict(self)
        rec["per_order"] = [asdict(o) for o in self.per_order]
        return rec


def _as_interactions(model) -> InteractionSet:
    if isinstance(model, InteractionSet):
        return model
    if isinstance(model, tuple) and len(model) == 2 and isinstance(model[1], InteractionSet):
        return model[1]
    raise TypeError("model must be an InteractionSet or a (QuadraticHamiltonian, InteractionSet) pair")


def term_distance_matrix(terms: Sequence[InteractionTerm], provider: GreensProvider) -> np.ndarray:
    """Lattice distance between every pair of terms (closest pair of modes)."""
    mode_dist = provider.lattice.mode_distance_matrix()
    n = len(terms)
    D = np.zeros((n, n), dtype=np.int64)
    for p in range(n):
        for q in range(p, n):
            D[p, q] = D[q, p] = term_distance(terms[p], terms[q], mode_dist)
    return D


def _cayley(s: int) -> float:
    return 1.0 if s < 3 else float(s) ** (s - 2)


class _Sampler:
    """Precomputed arrays for one (model, mode, observable) combination."""

    def __init__(self, config: RunConfig, V: InteractionSet, provider: GreensProvider, observable=None):
        if abs(provider.beta - config.beta) > 1e-12 * config.beta:
            raise ConfigurationError(
                f"provider built for beta={provider.beta} but the run uses beta={config.beta}"
            )
        V.validate_modes(provider.n_modes)
        self.config = config
        self.provider = provider
        terms = list(V.terms)
        self.n_real = len(terms)
        M = V.max_order_M
        if observable is not None:
            if config.mode is Mode.TRANSLATION_INVARIANT:
                raise ConfigurationError("observables are not available in translation_invariant mode")
            if observable.m > max(M, 1) and self.n_real:
                raise ConfigurationError(
                    f"observable order {observable.m} exceeds the interaction order M={M}"
                )
            terms.append(InteractionTerm(observable.p_plus, observable.p_minus, 1.0))
            M = max(M, observable.m)
        self.terms = terms
        self.observable = observable
        self.max_degree = 2 * M
        n = len(terms)
        self.t_m, self.t_plus, self.t_minus, self.t_v = pack_terms(terms) if n else pack_terms([])
        absv = np.abs(self.t_v)
        self.vf_child = absv.copy()
        if observable is not None:
            self.vf_child[-1] = 0.0
            self.root = n - 1
        elif config.mode is Mode.TRANSLATION_INVARIANT:
            self.root = 0
        else:
            self.root = -1
        if self.root >= 0:
            self.vf_root = np.zeros(n)
            self.vf_root[self.root] = 1.0
        else:
            self.vf_root = absv.copy()
        mask = np.ones((n, n), dtype=bool)
        if config.mode is Mode.LOCAL_TRUNCATED and n:
            mask &= term_distance_matrix(terms, provider) <= config.R
        mask &= (self.vf_child > 0)[None, :]
        self.nbr_ptr = np.zeros(n + 1, dtype=np.int64)
        self.nbr_ptr[1:] = np.cumsum(mask.sum(axis=1))
        self.nbr_idx = np.nonzero(mask)[1].astype(np.int64)

    @property
    def empty(self) -> bool:
        return self.n_real == 0 and self.observable is None

    def prefactor(self, s: int) -> float:
        beta = self.config.beta
        tree_count = _cayley(s)
        if self.observable is not None:
            return (-1) ** (s - 1) / (beta * math.factorial(s - 1)) * tree_count * beta**s
        c = (-1) ** s * tree_count / math.factorial(s) * beta**s
        if self.config.mode is Mode.TRANSLATION_INVARIANT:
            c *= self.n_real * abs(self.t_v[0])
        return c

    def weights(self, s: int, U: np.ndarray):
        """Weights for the rows of ``U`` plus per-draw status, determinant and dimension."""
        n = U.shape[0]
        if self.empty or (self.n_real == 0 and s > 1):
            zeros = np.zeros(n)
            return zeros, np.full(n, K.REJECT_EMPTY_MEASURE), zeros, np.zeros(n, dtype=np.int64)
        N = self.provider.n_modes
        per_draw = s * s * N * N * 8
        batch = max(1, min(n, _TENSOR_BYTES // per_draw))
        out = [np.empty(n), np.empty(n, dtype=np.int64), np.empty(n), np.empty(n, dtype=np.int64)]
        pref = self.prefactor(s)
        for lo in range(0, n, batch):
            hi = min(n, lo + batch)
            taus = self.config.beta * U[lo:hi, s : 2 * s]
            G = contraction_tensor(self.provider, taus)
            status, core, log_Z, det, dim = K.draw_batch(
                s, np.ascontiguousarray(U[lo:hi]), G, self.t_m, self.t_plus, self.t_minus, self.t_v,
                self.nbr_ptr, self.nbr_idx, self.vf_root, self.vf_child, self.max_degree,
            )
            with np.errstate(over="ignore", invalid="ignore"):
                w = np.where(status == K.OK, pref * core * np.exp(np.where(status == K.OK, log_Z, 0.0)), 0.0)
            out[0][lo:hi] = w
            out[1][lo:hi] = status
            out[2][lo:hi] = det
            out[3][lo:hi] = dim
        if not np.all(np.isfinite(out[0])):
            raise NumericError(f"non-finite weight at order {s}")
        return tuple(out)


def _stream(seed: int, block: int, order: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(block, order))
    return np.random.Generator(np.random.Philox(ss))


def _block_uniforms(seed: int, block: int, order: int, n: int) -> np.ndarray:
    return _stream(seed, block, order).random((n, K.UNIFORMS_PER_VERTEX * order))


def _run_blocks(sampler: _Sampler, orders: Sequence[int]):
    cfg = sampler.config
    n_blocks = -(-cfg.L // CHUNK)

    def work(block):
        n = min(CHUNK, cfg.L - block * CHUNK)
        cols = []
        for s in orders:
            cols.append(sampler.weights(s, _block_uniforms(cfg.seed, block, s, n)))
        return cols

    if cfg.threads == 1:
        results = [work(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(work, range(n_blocks)))
    W = np.concatenate([np.stack([c[0] for c in r], axis=1) for r in results])
    status = np.concatenate([np.stack([c[1] for c in r], axis=1) for r in results])
    det = np.concatenate([np.stack([c[2] for c in r], axis=1) for r in results])
    dim = np.concatenate([np.stack([c[3] for c in r], axis=1) for r in results])
    return W, status, det, dim


def sample_order_weights(s: int, config: RunConfig, model, provider, observable=None):
    """The ``L`` weights at a single order ``s`` together with draw status, det and dim."""
    sampler = _Sampler(config, _as_interactions(model), provider, observable)
    W, status, det, dim = _run_blocks(sampler, [s])
    return W[:, 0], status[:, 0], det[:, 0], dim[:, 0]


def _summarize(sampler: _Sampler, W, status, det, dim, extra: dict) -> Estimate:
    L, S = W.shape
    total = W.sum(axis=1)
    sd = lambda x: float(np.std(x, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0
    per_order = tuple(
        OrderEstimate(s + 1, float(W[:, s].mean()), sd(W[:, s])) for s in range(S)
    )
    ok = status == K.OK
    with np.errstate(over="ignore"):
        bound = np.ldexp(1.0, 2 * dim)
    violations = int(np.sum(ok & (np.abs(det) > bound * (1 + 1e-12))))
    diag = dict(extra)
    # inside the proven regime every weight is bounded by the number of modes
    if math.e * diag.get("convergence_ratio", math.inf) <= 1.0:
        diag["weight_bound_violations"] = int(np.sum(np.abs(W) > sampler.provider.n_modes))
    else:
        diag["weight_bound_violations"] = None
    diag.update(
        rejected_degree=int(np.sum(status == K.REJECT_DEGREE)),
        rejected_collision=int(np.sum(status == K.REJECT_COLLISION)),
        rejected_empty=int(np.sum(status == K.REJECT_EMPTY_MEASURE) + np.sum(status == K.REJECT_ZERO_EDGE)),
        det_bound_violations=violations,
        max_abs_weight=[float(np.abs(W[:, s]).max()) for s in range(S)],
    )
    return Estimate(
        float(total.mean()), sd(total), int(L), per_order, int(np.sum(~ok)), diag
    )


def _diagnostics(config: RunConfig, V: InteractionSet, provider) -> dict:
    Lg = estimate_Lg(provider, config.tau_grid)
    ratio = convergence_diagnostic(V, Lg, config.beta)
    diag = dict(L_V=summability_LV(V), L_g=Lg, convergence_ratio=ratio, warning=None)
    if ratio > config.diagnostic_threshold:
        diag["warning"] = (
            f"convergence ratio {ratio:.4g} exceeds {config.diagnostic_threshold:g}; "
            "the truncated series may not be accurate"
        )
    if config.target_eps is not None:
        try:
            S, R = suggest_truncation(config.target_eps, ratio)
            diag["suggested_S"] = S
        except DomainError as exc:
            diag["suggested_S"] = None
            diag["suggestion_error"] = str(exc)
    return diag


def estimate_log_ratio(config: RunConfig, model, provider: GreensProvider) -> Estimate:
    """Estimate of ``log(Z/Z0)`` truncated at order ``config.S``."""
    V = _as_interactions(model)
    t0 = time.perf_counter()
    sampler = _Sampler(config, V, provider)
    W, status, det, dim = _run_blocks(sampler, range(1, config.S + 1))
    diag = _diagnostics(config, V, provider)
    diag["sampling_time_s"] = time.perf_counter() - t0
    return _summarize(sampler, W, status, det, dim, diag)


def estimate_observable(config: RunConfig, model, provider: GreensProvider, O: InteractionTerm) -> Estimate:
    """Estimate of ``<Psi_O>`` from the series with the first vertex pinned to ``O``."""
    V = _as_interactions(model)
    t0 = time.perf_counter()
    sampler = _Sampler(config, V, provider, observable=O)
    W, status, det, dim = _run_blocks(sampler, range(1, config.S + 1))
    diag = _diagnostics(config, V, provider)
    diag["sampling_time_s"] = time.perf_counter() - t0
    return _summarize(sampler, W, status, det, dim, diag)


def draw_order_s(s: int, config: RunConfig, model, provider: GreensProvider, rng: np.random.Generator) -> float:
    """A single weight ``w_s`` using uniforms from ``rng``."""
    if s < 1:
        raise DomainError("s must be at least 1")
    sampler = _Sampler(config, _as_interactions(model), provider)
    U = rng.random((1, K.UNIFORMS_PER_VERTEX * s))
    return float(sampler.weights(s, U)[0][0])


@dataclass(frozen=True)
class SampleDraw:
    """Audit record of one draw, with 1-based vertex labels and term indices into the list."""

    s: int
    status: str
    tree_edges: tuple[tuple[int, int], ...]
    taus: tuple[float, ...]
    terms: tuple[int, ...] = ()
    chi: tuple[tuple[int, int, int], ...] = ()
    omega: tuple[int, ...] = ()
    b: tuple[int, ...] = ()
    t: tuple[float, ...] = ()
    log_Z: float = float("-inf")
    alpha: int = 0
    sign: float = 0.0
    det: float = 0.0
    weight: float = 0.0

    def to_record(self) -> dict:
        return asdict(self)


_STATUS = {
    K.OK: "ok",
    K.REJECT_DEGREE: "degree_cap",
    K.REJECT_EMPTY_MEASURE: "empty_measure",
    K.REJECT_COLLISION: "slot_collision",
    K.REJECT_ZERO_EDGE: "zero_edge",
}


def trace_draw(s: int, config: RunConfig, model, provider, u: np.ndarray, observable=None) -> SampleDraw:
    """Replay the compiled draw step by step from its uniforms ``u`` and record every choice."""
    sampler = _Sampler(config, _as_interactions(model), provider, observable)
    u = np.asarray(u, dtype=float)
    taus = config.beta * u[s : 2 * s]
    G = contraction_tensor(provider, taus)
    edges = K.decode_prufer(K.prufer_from_uniforms(u, s), s)
    tree = LabeledTree(s, tuple(map(tuple, (edges + 1).tolist())))
    base = dict(s=s, tree_edges=tree.edges, taus=tuple(taus.tolist()))
    if tree.max_degree > sampler.max_degree:
        return SampleDraw(status=_STATUS[K.REJECT_DEGREE], **base)
    adj_ptr, adj_idx, _ = K.adjacency(edges, s)
    order, parent = K.bfs(adj_ptr, adj_idx, s)
    ch_ptr, ch_idx = K.children_csr(parent, s)
    vf = np.vstack([sampler.vf_root] + [sampler.vf_child] * (s - 1))
    ev = K.edge_values_from_G(G, parent, s, vf, sampler.nbr_ptr, sampler.nbr_idx, sampler.t_m, sampler.t_plus, sampler.t_minus)
    log_Z, cprod, _ = K.bp_messages(order, parent, ch_ptr, ch_idx, vf, ev, sampler.nbr_ptr, sampler.nbr_idx)
    if log_Z == -np.inf:
        return SampleDraw(status=_STATUS[K.REJECT_EMPTY_MEASURE], **base)
    P = np.empty(s, dtype=np.int64)
    K.bp_sample(order, parent, cprod, ev, sampler.nbr_ptr, sampler.nbr_idx, u[2 * s : 3 * s], P)
    base.update(terms=tuple(int(p) for p in P), log_Z=float(log_Z))
    choice = np.zeros((s - 1, 5), dtype=np.int64)
    status, sign, _ = K.assignment(edges, P, G, sampler.t_m, sampler.t_plus, sampler.t_minus, u[3 * s : 4 * s], choice)
    base["chi"] = tuple((int(c[0]), int(c[1]) + 1, int(c[2]) + 1) for c in choice)
    if status != K.OK:
        return SampleDraw(status=_STATUS[status], **base)
    sign *= float(np.prod(np.sign(sampler.t_v[P])))
    alpha = int(K.alpha_sign(edges, P, sampler.t_m, choice))
    omega, b, t = K.growing_path(adj_ptr, adj_idx, s, u[4 * s : 5 * s], u[5 * s : 6 * s])
    a = K.path_weights(omega, t, s)
    det = float(K.determinant(K.weighted_matrix(P, G, a, sampler.t_m, sampler.t_plus, sampler.t_minus, choice, s - 1)))
    w = sampler.prefactor(s) * alpha * sign * det * math.exp(log_Z)
    return SampleDraw(
        status="ok", omega=tuple(int(x) + 1 for x in omega), b=tuple(int(x) for x in b),
        t=tuple(t.tolist()), alpha=alpha, sign=sign, det=det, weight=w, **base,
    )


def deterministic_order1(model, provider: GreensProvider, beta: float) -> float:
    """Exact first-order term ``-beta * sum_P v_P <Psi_P>_0``."""
    V = _as_interactions(model)
    if abs(provider.beta - beta) > 1e-12 * beta:
        raise ConfigurationError("provider and beta disagree")
    occ = -provider.matrix(0.0, left=True)  # (1 + e^{beta h})^{-1}
    total = 0.0
    for term in V.terms:
        block = occ[np.ix_(term.p_minus, term.p_plus)]
        total += term.v * alpha_P(term) * float(np.linalg.det(block))
    return -beta * total


def suggest_truncation(target_eps: float, diagnostics, xi: float | None = None, r0: int = 0,
                       S_max: int = 64, R_max: int | None = None) -> tuple[int, int | None]:
    """Truncation order ``S`` (and radius ``R`` when a decay length is given) for accuracy ``target_eps``."""
    rho = diagnostics["convergence_ratio"] if isinstance(diagnostics, dict) else float(diagnostics)
    if not 0 < target_eps:
        raise DomainError("target_eps must be positive")
    if rho >= 1:
        raise DomainError(f"convergence ratio {rho:.4g} >= 1 is outside the proven convergence regime")
    if target_eps >= 1 or rho <= 0:
        S = 1
    else:
        S = math.ceil(math.log(1.0 / target_eps) / math.log(1.0 / rho))
    S = min(max(S, 1), S_max)
    R = None
    if xi is not None and math.isfinite(xi):
        R = max(math.ceil(xi * math.log(1.0 / min(target_eps, 1.0))) + r0, 1)
        if R_max is not None:
            R = min(R, R_max)
    return S, R


def hoeffding_samples(target_abs_err_per_site: float, delta: float) -> int:
    """A-priori sample count ``ceil(2 log(2/delta) / eps^2)`` for weights bounded by ``N``."""
    if not (target_abs_err_per_site > 0 and delta > 0):
        raise DomainError("accuracy and failure probability must be positive")
    return math.ceil(2.0 * math.log(2.0 / delta) / target_abs_err_per_site**2)
