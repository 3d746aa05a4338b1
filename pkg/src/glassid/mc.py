"""Metropolis and parallel-tempering sampling beyond exact enumeration.

All models are reduced to a pair-coupling form
``H(sigma) = H0 - sum_{i<j} W_ij sigma_i sigma_j`` stored as a CSR neighbour
list, so a single-spin flip costs O(degree).  Uniform variates are drawn
from numpy generators outside the compiled kernel, which keeps runs
replayable from a seed.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from glassid.errors import DomainError, SampleSizeError
from glassid.identities import BetaGrid
from glassid.quenched import QuenchedEstimate, jackknife_estimate, sample_stream
from glassid.replica import MonomialSum, ReplicaMonomial
from glassid.spin_core import (
    DisorderRealization,
    ModelSpec,
    SpinConfig,
    _check_disorder,
    bond_features,
    sample_disorder,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChainConfig:
    """Sweep schedule for one disorder realization.

    ``thin`` counts sweeps (N proposals each) between retained samples.
    ``pt_betas`` switches on parallel tempering over that ladder.
    """

    sweeps: int
    burn_in: int | None = None
    thin: int = 1
    n_replicas: int = 2
    pt_betas: BetaGrid | Sequence[float] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sweeps < 1:
            raise DomainError("sweeps must be positive")
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", max(1, self.sweeps // 5))
        if not 0 < self.burn_in < self.sweeps:
            raise DomainError(f"need 0 < burn_in < sweeps, got {self.burn_in} / {self.sweeps}")
        if self.thin < 1:
            raise DomainError("thin must be >= 1")
        if self.n_replicas < 2:
            raise DomainError("need at least two replicas to measure overlaps")
        if self.pt_betas is not None:
            raw = self.pt_betas.values if isinstance(self.pt_betas, BetaGrid) else self.pt_betas
            betas = tuple(float(b) for b in raw)
            if not betas or any(b < 0 for b in betas):
                raise DomainError("pt_betas must be non-empty and non-negative")
            if any(b1 < b0 for b0, b1 in zip(betas, betas[1:])):
                raise DomainError("pt_betas must be non-decreasing")
            object.__setattr__(self, "pt_betas", betas)


@dataclass
class OverlapSampleSet:
    """Retained replica overlaps at one beta for one disorder realization.

    ``q[t, p]`` is the site overlap of pair ``pairs[p]`` at retained sweep t
    and ``c[t, p]`` the model's generalized overlap for the same pair.
    """

    beta: float
    pairs: list[tuple[int, int]]
    q: np.ndarray
    c: np.ndarray
    disorder_index: int = 0


@dataclass
class PTResult:
    samples: list[OverlapSampleSet]
    swap_acceptance: np.ndarray
    low_acceptance: bool = False


@dataclass
class CouplingGraph:
    ptr: np.ndarray
    idx: np.ndarray
    w: np.ndarray
    offset: float
    N: int
    bonds: np.ndarray = field(repr=False)
    bond_w: np.ndarray = field(repr=False)

    def energy(self, spins: np.ndarray) -> np.ndarray:
        """H for one configuration or a stack of them (last axis = sites)."""
        s = np.asarray(spins, dtype=np.float64)
        prod = s[..., self.bonds[:, 0]] * s[..., self.bonds[:, 1]]
        return self.offset - prod @ self.bond_w


def coupling_graph(model: ModelSpec, disorder: DisorderRealization | None) -> CouplingGraph:
    N = model.N
    if model.kind == "CW":
        # -N m^2 = -1 - (2/N) sum_{i<j} s_i s_j
        bonds = np.array([(i, j) for i in range(N) for j in range(i + 1, N)], dtype=np.int64)
        bond_w = np.full(len(bonds), 2.0 / N)
        offset = -1.0
    else:
        J = _check_disorder(model, disorder)
        bonds = np.asarray(model.bonds, dtype=np.int64)
        bond_w = model.bond_scale * J
        offset = 0.0
    bonds = bonds.reshape(-1, 2)
    nbrs: list[list[tuple[int, float]]] = [[] for _ in range(N)]
    for (i, j), w in zip(bonds, bond_w):
        nbrs[i].append((j, w))
        nbrs[j].append((i, w))
    ptr = np.zeros(N + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(x) for x in nbrs])
    idx = np.array([j for row in nbrs for j, _ in row], dtype=np.int64)
    w = np.array([w for row in nbrs for _, w in row], dtype=np.float64)
    return CouplingGraph(ptr, idx, w, offset, N, bonds, bond_w)


@numba.njit(cache=True)
def _site_update(spins, i, ptr, idx, w, beta, u):
    field = 0.0
    for k in range(ptr[i], ptr[i + 1]):
        field += w[k] * spins[idx[k]]
    dH = 2.0 * spins[i] * field
    if dH <= 0.0 or u < math.exp(-beta * dH):
        spins[i] = -spins[i]
        return dH
    return 0.0


@numba.njit(cache=True)
def _sweeps(spins, ptr, idx, w, beta, uniforms):
    """Sequential sweeps, one row of ``uniforms`` per sweep; returns the energy change."""
    total = 0.0
    for s in range(uniforms.shape[0]):
        for i in range(spins.shape[0]):
            total += _site_update(spins, i, ptr, idx, w, beta, uniforms[s, i])
    return total


def site_update(graph: CouplingGraph, spins: np.ndarray, i: int, beta: float, u: float) -> float:
    """One Metropolis proposal at site ``i`` (0-based), in place."""
    return _site_update(spins, i, graph.ptr, graph.idx, graph.w, beta, u)


def run_sweeps(
    graph: CouplingGraph, spins: np.ndarray, beta: float, rng: np.random.Generator, n: int
) -> float:
    """``n`` sequential sweeps in place; returns the accumulated energy change."""
    uniforms = rng.random((n, graph.N))
    return _sweeps(spins, graph.ptr, graph.idx, graph.w, beta, uniforms)


def metropolis_sweep(
    model: ModelSpec,
    disorder: DisorderRealization | None,
    beta: float,
    state: SpinConfig,
    rng: np.random.Generator,
) -> SpinConfig:
    """N single-spin-flip proposals in site order 1..N."""
    graph = coupling_graph(model, disorder)
    spins = state.as_array().astype(np.int64)
    run_sweeps(graph, spins, beta, rng, 1)
    return SpinConfig(tuple(int(s) for s in spins))


def _overlaps(model: ModelSpec, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    N = model.N
    q = (a * b).sum(axis=-1) / N
    if model.kind == "SK":
        c = q * q / 2 - 1 / (2 * N)
    elif model.kind == "EA":
        c = (bond_features(model, a) * bond_features(model, b)).sum(axis=-1) / N
    else:
        c = np.full_like(q, np.nan)
    return q, c


def _pairs(R: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(1, R + 1) for j in range(i + 1, R + 1)]


def _sample_set(model, beta, trace: np.ndarray, disorder_index: int) -> OverlapSampleSet:
    # trace: (T, R, N) retained configurations of the R replicas
    pairs = _pairs(trace.shape[1])
    q = np.empty((trace.shape[0], len(pairs)))
    c = np.empty_like(q)
    for p, (i, j) in enumerate(pairs):
        q[:, p], c[:, p] = _overlaps(model, trace[:, i - 1], trace[:, j - 1])
    return OverlapSampleSet(beta, pairs, q, c, disorder_index)


def _chain_rngs(seed: int, disorder_index: int, R: int) -> list[np.random.Generator]:
    return [
        np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(disorder_index, r))))
        for r in range(R)
    ]


def metropolis_run(
    model: ModelSpec,
    disorder: DisorderRealization | None,
    beta: float,
    cfg: ChainConfig,
    disorder_index: int = 0,
) -> OverlapSampleSet:
    """``cfg.n_replicas`` independent chains at one beta on the same couplings."""
    graph = coupling_graph(model, disorder)
    rngs = _chain_rngs(cfg.seed, disorder_index, cfg.n_replicas)
    spins = [np.where(r.random(model.N) < 0.5, -1, 1).astype(np.int64) for r in rngs]
    for s, r in zip(spins, rngs):
        run_sweeps(graph, s, beta, r, cfg.burn_in)
    kept = []
    for _ in range((cfg.sweeps - cfg.burn_in) // cfg.thin):
        for s, r in zip(spins, rngs):
            run_sweeps(graph, s, beta, r, cfg.thin)
        kept.append(np.stack(spins))
    if not kept:
        raise SampleSizeError("no retained samples; increase sweeps or reduce thin")
    return _sample_set(model, beta, np.asarray(kept), disorder_index)


def parallel_tempering_run(
    model: ModelSpec,
    disorder: DisorderRealization | None,
    cfg: ChainConfig,
    disorder_index: int = 0,
) -> PTResult:
    """Independent tempering ladders, one per replica, over ``cfg.pt_betas``.

    After every sweep neighbouring temperatures propose a configuration swap
    accepted with ``min(1, exp((b_k - b_{k+1}) (E_k - E_{k+1})))``.
    """
    if cfg.pt_betas is None:
        raise DomainError("parallel tempering needs pt_betas")
    betas = np.asarray(cfg.pt_betas)
    K, R, N = len(betas), cfg.n_replicas, model.N
    graph = coupling_graph(model, disorder)
    rngs = _chain_rngs(cfg.seed, disorder_index, R)
    spins = [[np.where(r.random(N) < 0.5, -1, 1).astype(np.int64) for _ in range(K)] for r in rngs]
    energies = [[float(graph.energy(s)) for s in ladder] for ladder in spins]
    attempts = np.zeros(max(K - 1, 0))
    accepted = np.zeros(max(K - 1, 0))
    traces: list[list[np.ndarray]] = [[] for _ in range(K)]
    for sweep in range(cfg.sweeps):
        for ladder, en, rng in zip(spins, energies, rngs):
            uniforms = rng.random((K, N))
            for k in range(K):
                en[k] += _sweeps(ladder[k], graph.ptr, graph.idx, graph.w, betas[k], uniforms[k : k + 1])
            swap_u = rng.random(max(K - 1, 0))
            for k in range(K - 1):
                delta = (betas[k] - betas[k + 1]) * (en[k] - en[k + 1])
                attempts[k] += 1
                if delta >= 0 or swap_u[k] < math.exp(delta):
                    accepted[k] += 1
                    ladder[k], ladder[k + 1] = ladder[k + 1], ladder[k]
                    en[k], en[k + 1] = en[k + 1], en[k]
        if sweep >= cfg.burn_in and (sweep - cfg.burn_in) % cfg.thin == cfg.thin - 1:
            for k in range(K):
                traces[k].append(np.stack([ladder[k] for ladder in spins]))
    rate = np.divide(accepted, attempts, out=np.zeros_like(accepted), where=attempts > 0)
    low = bool(K > 1 and rate.mean() < 0.01)
    if low:
        log.warning("parallel tempering swap acceptance below 1%%: %s", rate)
    if not traces[0]:
        raise SampleSizeError("no retained samples; increase sweeps or reduce thin")
    samples = [_sample_set(model, float(b), np.asarray(t), disorder_index) for b, t in zip(betas, traces)]
    return PTResult(samples, rate, low)


def monomial_from_samples(s: OverlapSampleSet, m: ReplicaMonomial) -> float:
    """Time average of ``m`` over retained samples, symmetrised over chain labels.

    Every injective map of the monomial's replicas onto the available chains
    gives an unbiased estimator; their mean is used.
    """
    if not m.factors:
        return m.coefficient
    R = max(j for pair in s.pairs for j in pair)
    used = sorted({r for i, j, _ in m.factors for r in (i, j)})
    if len(used) > R:
        raise DomainError(f"monomial uses {len(used)} replicas, only {R} chains were run")
    col = {pair: p for p, pair in enumerate(s.pairs)}
    total = np.zeros(s.c.shape[0])
    count = 0
    for chains in itertools.permutations(range(1, R + 1), len(used)):
        label = dict(zip(used, chains))
        prod = np.ones(s.c.shape[0])
        for i, j, k in m.factors:
            a, b = sorted((label[i], label[j]))
            prod = prod * s.c[:, col[(a, b)]] ** k
        total += prod
        count += 1
    return m.coefficient * float(total.mean()) / count


def _per_disorder(args) -> float:
    model, beta, monomial, cfg, idx, master_seed = args
    disorder = sample_disorder(model, sample_stream(master_seed, idx), seed=master_seed)
    if cfg.pt_betas is not None:
        ladder = np.asarray(cfg.pt_betas)
        k = int(np.argmin(np.abs(ladder - beta)))
        if abs(ladder[k] - beta) > 1e-12:
            raise DomainError(f"beta={beta} is not on the tempering ladder")
        samples = parallel_tempering_run(model, disorder, cfg, idx).samples[k]
    else:
        samples = metropolis_run(model, disorder, beta, cfg, idx)
    terms = monomial.terms if isinstance(monomial, MonomialSum) else (monomial,)
    return sum(monomial_from_samples(samples, t) for t in terms)


def mc_overlap_moment(
    model: ModelSpec,
    beta: float,
    monomial: MonomialSum | ReplicaMonomial,
    cfg: ChainConfig,
    n_disorder: int,
    master_seed: int,
    *,
    workers: int = 1,
) -> QuenchedEstimate:
    """Quenched overlap moment from sampled replicas, jackknife over disorder.

    Disorder sample ``i`` uses the same couplings as the exact Monte Carlo
    disorder average with the same ``master_seed``, so the two can be
    compared sample by sample.
    """
    if not model.is_gaussian:
        raise DomainError("overlap moments need a Gaussian model (SK or EA)")
    if n_disorder < 2:
        raise SampleSizeError("need at least two disorder samples for an error bar")
    n = monomial.n
    if n > cfg.n_replicas:
        raise DomainError(f"monomial needs {n} replicas, config runs {cfg.n_replicas}")
    tasks = [(model, beta, monomial, cfg, i, master_seed) for i in range(n_disorder)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            values = np.array(list(pool.map(_per_disorder, tasks)))
    else:
        values = np.array([_per_disorder(t) for t in tasks])
    w = np.full(n_disorder, 1.0 / n_disorder)
    value, err = jackknife_estimate(values, w, lambda m: m, True)
    return QuenchedEstimate(float(value), float(err), n_disorder, f"metropolis(seed={master_seed})")


def write_sample_dump(path: str | Path, sets: Sequence[OverlapSampleSet]) -> None:
    """Plain-text dump: ``disorder_idx beta q12 q13 ...`` per retained sweep."""
    lines = []
    for s in sets:
        cols = " ".join(f"q{i}{j}" for i, j in s.pairs)
        lines.append(f"# disorder_idx beta {cols}")
        for row in s.q:
            vals = " ".join(f"{v:.17g}" for v in row)
            lines.append(f"{s.disorder_index} {s.beta:.17g} {vals}")
    Path(path).write_text("\n".join(lines) + "\n")
