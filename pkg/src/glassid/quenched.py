"""Disorder averages of exact thermal quantities.

Everything here goes through one path: for each disorder draw (Monte Carlo
sample or Gauss-Hermite node) a small table of per-disorder thermal values
is computed by enumeration, then estimators are formed from weighted means
of the table columns.  Monte Carlo errors come from a leave-one-out
jackknife over disorder samples; quadrature is treated as exact.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from glassid.errors import DomainError, InstabilityError, SampleSizeError, SizeLimitError
from glassid.gibbs import Constant, EnergyPower, ObservableSpec, boltzmann, observable_values
from glassid.replica import MonomialSum, ReplicaMonomial, contract
from glassid.spin_core import ModelSpec, all_energies, config_matrix

QUADRATURE_BUDGET = 10**8
MC_CHUNK = 32
QUAD_CHUNK = 4096


@dataclass(frozen=True)
class MonteCarlo:
    samples: int
    master_seed: int

    def __post_init__(self) -> None:
        if self.samples < 2:
            raise SampleSizeError("Monte Carlo disorder averages need at least 2 samples")

    @property
    def tag(self) -> str:
        return f"mc(S={self.samples},seed={self.master_seed})"


@dataclass(frozen=True)
class Quadrature:
    nodes_per_dim: int

    def __post_init__(self) -> None:
        if not 4 <= self.nodes_per_dim <= 128:
            raise DomainError(f"nodes_per_dim must be in [4, 128], got {self.nodes_per_dim}")

    @property
    def tag(self) -> str:
        return f"quad(nodes={self.nodes_per_dim})"


QuenchMode = Union[MonteCarlo, Quadrature]
Quantity = Union[ObservableSpec, ReplicaMonomial, MonomialSum]


@dataclass(frozen=True)
class QuenchedEstimate:
    value: float
    std_error: float
    S_effective: int
    mode_tag: str


def sample_stream(master_seed: int, index: int) -> np.random.Generator:
    """Independent generator for disorder sample ``index``.

    Philox is keyed from ``(master_seed, index)``, so a sample's couplings do
    not depend on which worker draws them or in what order.
    """
    seq = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(seq))


# -- per-disorder terms ------------------------------------------------------


@dataclass(frozen=True)
class Obs:
    """``omega(f**f_power * h**h_power)``."""

    f: ObservableSpec
    h_power: int = 0
    f_power: int = 1


@dataclass(frozen=True)
class Mono:
    """``Omega`` of a monomial or monomial sum (coefficients included)."""

    m: ReplicaMonomial | MonomialSum


@dataclass(frozen=True)
class Tilted:
    """``omega(f e^{-lam h}) / omega(e^{-lam h})``."""

    f: ObservableSpec
    lam: float


@dataclass(frozen=True)
class LogTilt:
    """``ln omega(e^{-lam h})``."""

    lam: float


Term = Union[Obs, Mono, Tilted, LogTilt]


def as_term(f: Quantity | Term) -> Term:
    if isinstance(f, (Obs, Mono, Tilted, LogTilt)):
        return f
    if isinstance(f, (ReplicaMonomial, MonomialSum)):
        return Mono(f)
    return Obs(f)


def _evaluate(
    model: ModelSpec,
    J: np.ndarray,
    Jp: np.ndarray | None,
    betas: np.ndarray,
    lam_field: float,
    terms: Sequence[Term],
) -> np.ndarray:
    """Per-disorder term values, shape (len(J), len(betas), len(terms))."""
    N = model.N
    H = np.asarray(all_energies(model, J))
    h = H / N
    logw = -betas[None, :, None] * H[:, None, :]
    if Jp is not None:
        K = np.asarray(all_energies(model, Jp)) / math.sqrt(N)
        logw = logw + math.sqrt(lam_field) * K[:, None, :]
    probs, _ = boltzmann(logw)
    hb = h[:, None, :]
    cache: dict = {}
    out = np.empty(probs.shape[:2] + (len(terms),))
    for t, term in enumerate(terms):
        if isinstance(term, Obs):
            vals = observable_values(term.f, N, hb) ** term.f_power
            if term.h_power:
                vals = vals * hb**term.h_power
            out[..., t] = (probs * vals).sum(axis=-1)
        elif isinstance(term, Mono):
            parts = term.m.terms if isinstance(term.m, MonomialSum) else (term.m,)
            acc = np.zeros(probs.shape[:2])
            for mono in parts:
                acc = acc + mono.coefficient * contract(model, probs, mono, cache)
            out[..., t] = acc
        elif isinstance(term, Tilted):
            tilted, _ = boltzmann(logw - term.lam * hb)
            out[..., t] = (tilted * observable_values(term.f, N, hb)).sum(axis=-1)
        elif isinstance(term, LogTilt):
            _, log_z = boltzmann(logw)
            _, log_z_tilted = boltzmann(logw - term.lam * hb)
            out[..., t] = log_z_tilted - log_z
        else:
            raise TypeError(f"unknown term {term!r}")
    return out


@dataclass
class DisorderTable:
    """Per-disorder values ``(S, n_beta, n_terms)`` and their weights ``(S,)``."""

    values: np.ndarray
    weights: np.ndarray
    betas: np.ndarray
    mode_tag: str
    monte_carlo: bool

    @property
    def S(self) -> int:
        return self.values.shape[0]


def _check_terms(model: ModelSpec, terms: Sequence[Term]) -> None:
    for term in terms:
        if isinstance(term, Mono) and not model.is_gaussian:
            raise DomainError("replica overlaps need a Gaussian model (SK or EA)")


def _mc_chunk(args) -> np.ndarray:
    model, mode, start, stop, betas, lam_field, stochastic, terms = args
    B = model.n_bonds
    J = np.empty((stop - start, B))
    Jp = np.empty((stop - start, B)) if stochastic else None
    for r, idx in enumerate(range(start, stop)):
        rng = sample_stream(mode.master_seed, idx)
        J[r] = rng.standard_normal(B)
        if stochastic:
            Jp[r] = rng.standard_normal(B)
    return _evaluate(model, J, Jp, betas, lam_field, terms)


def _quad_chunk(args) -> tuple[np.ndarray, np.ndarray]:
    model, mode, start, stop, betas, lam_field, stochastic, terms = args
    x, w = gauss_hermite(mode.nodes_per_dim)
    dims = model.n_bonds * (2 if stochastic else 1)
    flat = np.arange(start, stop)
    digits = np.stack(np.unravel_index(flat, (mode.nodes_per_dim,) * dims), axis=-1)
    pts = x[digits]
    weights = np.prod(w[digits], axis=-1)
    B = model.n_bonds
    J, Jp = (pts[:, :B], pts[:, B:]) if stochastic else (pts, None)
    return _evaluate(model, J, Jp, betas, lam_field, terms), weights


def gauss_hermite(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for expectations under the standard normal."""
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    return x, w / w.sum()


def _run(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def default_workers() -> int:
    return int(os.environ.get("GLASSID_WORKERS", "1"))


def disorder_table(
    model: ModelSpec,
    betas: Sequence[float] | float,
    terms: Sequence[Term],
    mode: QuenchMode,
    *,
    stochastic_lambda: float | None = None,
    workers: int | None = None,
) -> DisorderTable:
    """Evaluate ``terms`` for every disorder draw of ``mode`` at every beta.

    With ``stochastic_lambda`` set each draw also carries an independent
    coupling copy J' and the Gibbs weights gain ``sqrt(lam) * H'(sigma)/sqrt(N)``.
    """
    betas = np.atleast_1d(np.asarray(betas, dtype=np.float64))
    if np.any(betas < 0):
        raise DomainError("beta must be >= 0")
    config_matrix(model.N)
    terms = list(terms)
    _check_terms(model, terms)
    workers = default_workers() if workers is None else workers
    stochastic = stochastic_lambda is not None
    if stochastic:
        if stochastic_lambda < 0:
            raise DomainError("stochastic perturbation needs lambda >= 0")
        if not model.is_gaussian:
            raise DomainError("stochastic perturbation needs a Gaussian model (SK or EA)")
    lam_field = float(stochastic_lambda or 0.0)

    if not model.is_gaussian:
        values = _evaluate(model, np.zeros((1, 0)), None, betas, 0.0, terms)
        return DisorderTable(values, np.ones(1), betas, "exact", False)

    if isinstance(mode, MonteCarlo):
        S = mode.samples
        tasks = [
            (model, mode, a, min(a + MC_CHUNK, S), betas, lam_field, stochastic, terms)
            for a in range(0, S, MC_CHUNK)
        ]
        values = np.concatenate(_run(_mc_chunk, tasks, workers), axis=0)
        return DisorderTable(values, np.full(S, 1.0 / S), betas, mode.tag, True)

    dims = model.n_bonds * (2 if stochastic else 1)
    total = mode.nodes_per_dim**dims
    if total > QUADRATURE_BUDGET:
        raise SizeLimitError(
            f"quadrature needs {mode.nodes_per_dim}^{dims} = {total} points "
            f"(budget {QUADRATURE_BUDGET})"
        )
    tasks = [
        (model, mode, a, min(a + QUAD_CHUNK, total), betas, lam_field, stochastic, terms)
        for a in range(0, total, QUAD_CHUNK)
    ]
    results = _run(_quad_chunk, tasks, workers)
    values = np.concatenate([r[0] for r in results], axis=0)
    weights = np.concatenate([r[1] for r in results])
    return DisorderTable(values, weights, betas, mode.tag, False)


# -- estimators ---------------------------------------------------------------


def jackknife_estimate(
    x: np.ndarray,
    weights: np.ndarray,
    g: Callable[[np.ndarray], np.ndarray],
    monte_carlo: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Value and standard error of ``g(weighted mean of x over axis 0)``.

    For Monte Carlo tables the error is the leave-one-out jackknife over
    samples (equal to sd/sqrt(S) when ``g`` is linear); quadrature gets 0.
    """
    total = np.tensordot(weights, x, axes=(0, 0))
    value = np.asarray(g(total))
    if not monte_carlo or x.shape[0] < 2:
        return value, np.zeros_like(value)
    S = x.shape[0]
    loo = (x.sum(axis=0)[None] - x) / (S - 1)
    reps = np.asarray(g(loo))
    dev = reps - reps.mean(axis=0)
    err = np.sqrt((S - 1) / S * (dev**2).sum(axis=0))
    return value, err


def _estimates(table: DisorderTable, x: np.ndarray, g) -> list[QuenchedEstimate]:
    value, err = jackknife_estimate(x, table.weights, g, table.monte_carlo)
    return [
        QuenchedEstimate(float(v), float(e), table.S, table.mode_tag)
        for v, e in zip(np.atleast_1d(value), np.atleast_1d(err))
    ]


def _single(beta) -> bool:
    return np.ndim(beta) == 0


def _unwrap(result: list, beta):
    return result[0] if _single(beta) else result


def quenched_expectation(
    model: ModelSpec, beta, f: Quantity, mode: QuenchMode, *, workers: int | None = None
):
    """``Av[omega(f)]`` (or ``Av[Omega(f)]`` for overlap monomials).

    ``beta`` may be a scalar or a sequence; a sequence returns one estimate
    per beta computed on shared disorder draws.
    """
    table = disorder_table(model, beta, [as_term(f)], mode, workers=workers)
    return _unwrap(_estimates(table, table.values, lambda m: m[..., 0]), beta)


def _tilt_columns(table: DisorderTable) -> np.ndarray:
    # columns (omega_tilted(f), ln omega(e^{-lam h})) -> (r f, r) with a common shift
    a, log_r = table.values[..., 0], table.values[..., 1]
    r = np.exp(log_r - log_r.max(axis=0, keepdims=True))
    return np.stack([r * a, r], axis=-1)


def perturbed_quenched(
    model: ModelSpec,
    beta,
    f: ObservableSpec,
    lam: float,
    mode: QuenchMode,
    *,
    workers: int | None = None,
):
    """``Av[omega(f e^{-lam h})] / Av[omega(e^{-lam h})]``.

    Numerator and denominator are averaged over the same draws and then
    divided; the jackknife error accounts for the ratio.
    """
    table = disorder_table(model, beta, [Tilted(f, lam), LogTilt(lam)], mode, workers=workers)
    x = _tilt_columns(table)
    den, den_err = jackknife_estimate(x[..., 1], table.weights, lambda m: m, table.monte_carlo)
    if np.any(den <= 3 * den_err):
        raise InstabilityError(f"tilted normalization consistent with zero at lambda={lam}")
    return _unwrap(_estimates(table, x, lambda m: m[..., 0] / m[..., 1]), beta)


def stochastic_perturbed(
    model: ModelSpec,
    beta,
    f: Quantity,
    lam: float,
    mode: QuenchMode,
    *,
    workers: int | None = None,
):
    """``Av[omega(f e^{sqrt(lam) K}) / omega(e^{sqrt(lam) K})]``.

    ``K = H'/sqrt(N)`` for an independent coupling copy, which has covariance
    ``c_N``.  EnergyPower observables use h of the unperturbed Hamiltonian.
    """
    if lam < 0:
        raise DomainError("stochastic perturbation needs lambda >= 0")
    table = disorder_table(
        model, beta, [as_term(f)], mode, stochastic_lambda=lam, workers=workers
    )
    return _unwrap(_estimates(table, table.values, lambda m: m[..., 0]), beta)


_H = EnergyPower(1)


def _covariance_table(model, beta, f, mode, workers) -> tuple[DisorderTable, np.ndarray]:
    table = disorder_table(model, beta, [Obs(f), Obs(f, 1), Obs(_H)], mode, workers=workers)
    v = table.values
    x = np.stack([v[..., 0], v[..., 1], v[..., 2], v[..., 0] * v[..., 2]], axis=-1)
    return table, x


def gs_derivative(
    model: ModelSpec, beta, f: ObservableSpec, mode: QuenchMode, *, workers: int | None = None
):
    """Quenched covariance ``<f h> - <f><h>``.

    The lambda-derivative at 0 of :func:`perturbed_quenched` is the negative
    of this value, because the tilt is ``e^{-lam h}``.
    """
    table, x = _covariance_table(model, beta, f, mode, workers)
    return _unwrap(_estimates(table, x, lambda m: m[..., 1] - m[..., 0] * m[..., 2]), beta)


def decomposition(
    model: ModelSpec, beta, f: ObservableSpec, mode: QuenchMode, *, workers: int | None = None
):
    """Split ``<f h> - <f><h>`` into thermal and disorder correlations."""
    table, x = _covariance_table(model, beta, f, mode, workers)
    thermal = _estimates(table, x, lambda m: m[..., 1] - m[..., 3])
    disorder = _estimates(table, x, lambda m: m[..., 3] - m[..., 0] * m[..., 2])
    if _single(beta):
        return thermal[0], disorder[0]
    return list(zip(thermal, disorder))


__all__ = [
    "Constant",
    "DisorderTable",
    "LogTilt",
    "Mono",
    "MonteCarlo",
    "Obs",
    "Quadrature",
    "QuenchedEstimate",
    "Tilted",
    "decomposition",
    "disorder_table",
    "gauss_hermite",
    "gs_derivative",
    "jackknife_estimate",
    "perturbed_quenched",
    "quenched_expectation",
    "sample_stream",
    "stochastic_perturbed",
]
