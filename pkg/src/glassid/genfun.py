"""Cumulant generating functions of the energy per particle.

Three functions of lambda share one set of disorder draws:

* ``psi``       = ln Av[omega(e^{lam h})]           (quenched)
* ``psi_bar``   = Av[ln omega(e^{lam h})]           (thermal)
* ``psi_tilde`` = ln Av[e^{lam omega(h)}]           (disorder)

Their curvatures at the origin are computed as closed-form variances, so
``psi'' = psi_bar'' + psi_tilde''`` holds to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from glassid.gibbs import EnergyPower, ObservableSpec
from glassid.identities import BetaGrid, ModelFamily, ResidualReport, beta_average
from glassid.quenched import LogTilt, Obs, QuenchMode, disorder_table, jackknife_estimate
from glassid.spin_core import ModelSpec

_H = EnergyPower(1)


@dataclass(frozen=True)
class GenFunPoint:
    lam: float
    psi: float
    psi_bar: float
    psi_tilde: float
    mode_tag: str


def _log_weights(table) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(table.weights)


def genfun_points(
    model: ModelSpec, beta: float, lambdas: Sequence[float], mode: QuenchMode, *, workers=None
) -> list[GenFunPoint]:
    lambdas = [float(x) for x in lambdas]
    terms = [Obs(_H)] + [LogTilt(-lam) for lam in lambdas]
    table = disorder_table(model, beta, terms, mode, workers=workers)
    lw = _log_weights(table)
    mean_h = table.values[:, 0, 0]
    out = []
    for k, lam in enumerate(lambdas):
        log_mgf = table.values[:, 0, k + 1]
        if lam == 0:
            psi = psi_bar = psi_tilde = 0.0
        else:
            psi = float(logsumexp(log_mgf + lw))
            psi_bar = float(table.weights @ log_mgf)
            psi_tilde = float(logsumexp(lam * mean_h + lw))
        out.append(GenFunPoint(lam, psi, psi_bar, psi_tilde, table.mode_tag))
    return out


def psi(model: ModelSpec, beta: float, lam: float, mode: QuenchMode, *, workers=None) -> float:
    return genfun_points(model, beta, [lam], mode, workers=workers)[0].psi


def psi_bar(model: ModelSpec, beta: float, lam: float, mode: QuenchMode, *, workers=None) -> float:
    return genfun_points(model, beta, [lam], mode, workers=workers)[0].psi_bar


def psi_tilde(model: ModelSpec, beta: float, lam: float, mode: QuenchMode, *, workers=None) -> float:
    return genfun_points(model, beta, [lam], mode, workers=workers)[0].psi_tilde


def _variance_parts(m: np.ndarray) -> np.ndarray:
    # columns: omega(h), omega(h^2), omega(h)^2
    total = m[..., 1] - m[..., 0] ** 2
    thermal = m[..., 1] - m[..., 2]
    disorder = m[..., 2] - m[..., 0] ** 2
    return np.stack([total, thermal, disorder], axis=-1)


def _moment_table(model, beta, mode, workers):
    table = disorder_table(model, beta, [Obs(_H), Obs(_H, 1)], mode, workers=workers)
    v = table.values
    x = np.stack([v[..., 0], v[..., 1], v[..., 0] ** 2], axis=-1)
    return table, x


def second_derivatives_at_zero(
    model: ModelSpec, beta, mode: QuenchMode, *, workers=None
) -> tuple[float, float, float] | list[tuple[float, float, float]]:
    """``(psi'', psi_bar'', psi_tilde'')`` at lambda = 0, as variances.

    A sequence of betas gives one triple per beta, all on the same draws.
    """
    table, x = _moment_table(model, beta, mode, workers)
    parts = _variance_parts(np.tensordot(table.weights, x, axes=(0, 0)))
    triples = [tuple(float(v) for v in row) for row in parts]
    return triples[0] if np.ndim(beta) == 0 else triples


def flatness_scan(
    family: ModelFamily,
    N_list: Sequence[int],
    grid: BetaGrid,
    mode: QuenchMode,
    *,
    workers=None,
) -> list[ResidualReport]:
    """Beta-averaged ``psi''(0)`` per N; a decreasing sequence is asymptotic flatness."""
    reports = []
    for N in N_list:
        model = family.at(N)
        table, x = _moment_table(model, grid.values, mode, workers)
        value, err = jackknife_estimate(
            x, table.weights, lambda m: _variance_parts(m)[..., 0], table.monte_carlo
        )
        avg, avg_err = jackknife_estimate(
            x,
            table.weights,
            lambda m: beta_average(_variance_parts(m)[..., 0], grid),
            table.monte_carlo,
        )
        reports.append(
            ResidualReport(
                identity="flatness_psi2",
                model=model.model_id,
                N=N,
                mode=table.mode_tag,
                per_beta=[(float(b), float(v), float(e)) for b, v, e in zip(grid.values, value, err)],
                beta_average=float(avg),
                beta_average_error=float(avg_err),
                S_effective=table.S,
            )
        )
    return reports


def schwarz_gap(
    model: ModelSpec, beta, f: ObservableSpec, mode: QuenchMode, *, workers=None
) -> tuple[float, float] | list[tuple[float, float]]:
    """``(|<fh> - <f><h>|, sqrt(<f^2>) sqrt(<h^2> - <h>^2))`` on shared draws."""
    table = disorder_table(
        model, beta, [Obs(f), Obs(f, 1), Obs(_H), Obs(f, 0, 2), Obs(_H, 1)], mode, workers=workers
    )
    m = np.tensordot(table.weights, table.values, axes=(0, 0))
    lhs = np.abs(m[:, 1] - m[:, 0] * m[:, 2])
    rhs = np.sqrt(np.maximum(m[:, 3], 0.0)) * np.sqrt(np.maximum(m[:, 4] - m[:, 2] ** 2, 0.0))
    pairs = [(float(a), float(b)) for a, b in zip(lhs, rhs)]
    return pairs[0] if np.ndim(beta) == 0 else pairs


def cumulants_from_moments(m: Sequence[float]) -> list[float]:
    """First four cumulants from raw moments ``m[0] = E X, ..., m[3] = E X^4``."""
    m1 = m[0]
    out = [m1]
    if len(m) > 1:
        out.append(m[1] - m1**2)
    if len(m) > 2:
        out.append(m[2] - 3 * m[1] * m1 + 2 * m1**3)
    if len(m) > 3:
        out.append(m[3] - 4 * m[2] * m1 - 3 * m[1] ** 2 + 12 * m[1] * m1**2 - 6 * m1**4)
    return out


def cumulant(model: ModelSpec, beta: float, k: int, mode: QuenchMode, *, workers=None) -> float:
    """k-th cumulant (k <= 4) of h under the quenched measure."""
    if not 1 <= k <= 4:
        raise ValueError(f"cumulant order must be 1..4, got {k}")
    terms = [Obs(_H)] + [Obs(_H, j - 1) for j in range(2, k + 1)]
    table = disorder_table(model, beta, terms, mode, workers=workers)
    moments = np.tensordot(table.weights, table.values, axes=(0, 0))[0]
    return float(cumulants_from_moments(list(moments))[k - 1])


def lambda_stencil(eps: float = 1e-3) -> list[float]:
    return [-2 * eps, -eps, 0.0, eps, 2 * eps]


def five_point_second_derivative(values: Sequence[float], eps: float) -> float:
    f_m2, f_m1, f_0, f_p1, f_p2 = values
    return (-f_m2 + 16 * f_m1 - 30 * f_0 + 16 * f_p1 - f_p2) / (12 * eps * eps)


__all__ = [
    "GenFunPoint",
    "cumulant",
    "cumulants_from_moments",
    "five_point_second_derivative",
    "flatness_scan",
    "genfun_points",
    "lambda_stencil",
    "psi",
    "psi_bar",
    "psi_tilde",
    "schwarz_gap",
    "second_derivatives_at_zero",
]
