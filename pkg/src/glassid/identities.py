"""Structural identities as residuals of (model, N, beta) and their beta-averages.

Each disorder identity is described by the per-disorder terms it needs and
a function mapping the disorder-averaged term table to the residual.  The
suite evaluates all identities for one N on a single set of disorder draws,
so every term of every residual shares the same couplings.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson

from glassid.errors import DimensionError, DomainError, GlassIdError
from glassid.gibbs import (
    EnergyPower,
    ObservableSpec,
    SpinProduct,
    gibbs_state,
    observable_values,
    thermal_expectation,
)
from glassid.quenched import (
    DisorderTable,
    Mono,
    Obs,
    QuenchedEstimate,
    QuenchMode,
    Term,
    disorder_table,
    jackknife_estimate,
)
from glassid.replica import MAX_REPLICAS, MonomialSum, ReplicaMonomial, parse_monomials
from glassid.spin_core import ModelSpec

log = logging.getLogger(__name__)

_H = EnergyPower(1)


@dataclass(frozen=True)
class BetaGrid:
    beta0: float
    beta1: float
    points: int

    def __post_init__(self) -> None:
        if self.beta0 < 0 or not self.beta1 > self.beta0:
            raise DomainError(f"need 0 <= beta0 < beta1, got [{self.beta0}, {self.beta1}]")
        if self.points < 3 or self.points % 2 == 0:
            raise DomainError(f"Simpson grid needs an odd number >= 3 of points, got {self.points}")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.beta0, self.beta1, self.points)

    @property
    def length(self) -> float:
        return self.beta1 - self.beta0


DEFAULT_GRID = BetaGrid(0.5, 1.5, 21)


def beta_average(values: Sequence[float] | np.ndarray, grid: BetaGrid) -> np.ndarray | float:
    """Composite Simpson integral over the grid divided by its length.

    ``values`` may carry leading axes; the grid runs along the last one.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != grid.points:
        raise DimensionError(f"{values.shape[-1]} values for a {grid.points}-point grid")
    out = simpson(values, x=grid.values, axis=-1) / grid.length
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class ResidualReport:
    identity: str
    model: str
    N: int
    mode: str
    per_beta: list[tuple[float, float, float]] = field(default_factory=list)
    beta_average: float = float("nan")
    beta_average_error: float = 0.0
    S_effective: int = 1
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


# -- residual definitions ---------------------------------------------------


@dataclass
class Residual:
    """Terms evaluated per disorder and the map from their means to the residual.

    ``columns`` builds per-disorder columns from the raw term values (needed
    when the residual involves products of thermal averages within one
    disorder); ``g`` maps column means ``(..., n_beta, k)`` to ``(..., n_beta)``.
    """

    terms: list[Term]
    g: Callable[[np.ndarray], np.ndarray]
    columns: Callable[[np.ndarray], np.ndarray] | None = None


def _mono(text: str) -> ReplicaMonomial:
    (term,) = parse_monomials(text).terms
    return term


C12 = _mono("c12")
C12_SQ = _mono("c12^2")
C12_C23 = _mono("c12*c23")
C12_C34 = _mono("c12*c34")
AC_SUM = parse_monomials("c12^2 - 4 c12*c23 + 3 c12*c34")


def _thermal_covariance(f: ObservableSpec) -> Residual:
    def columns(v):
        return np.stack([v[..., 1] - v[..., 0] * v[..., 2]], axis=-1)

    return Residual([Obs(f), Obs(f, 1), Obs(_H)], lambda m: m[..., 0], columns)


def ss_poly(f: ObservableSpec = _H) -> Residual:
    return _thermal_covariance(f)


def ac() -> Residual:
    return Residual([Mono(AC_SUM)], lambda m: m[..., 0])


def gg_r1() -> Residual:
    return Residual(
        [Mono(C12_C23), Mono(C12_SQ), Mono(C12)],
        lambda m: m[..., 0] - 0.5 * m[..., 1] - 0.5 * m[..., 2] ** 2,
    )


def gg_r2() -> Residual:
    return Residual(
        [Mono(C12_C34), Mono(C12_SQ), Mono(C12)],
        lambda m: m[..., 0] - m[..., 1] / 3 - 2 * m[..., 2] ** 2 / 3,
    )


def _times(s: MonomialSum, factor: ReplicaMonomial, n: int) -> MonomialSum:
    return MonomialSum(tuple(t.with_n(n).times(factor.with_n(n)) for t in s.terms))


def gg(n: int, f: MonomialSum) -> Residual:
    """``E(f c_{1,n+1}) - E(f)E(c12)/n - sum_{j=2..n} E(f c_{1j})/n``."""
    if f.n > n:
        raise DomainError(f"f uses replicas beyond 1..{n}")
    if n + 1 > MAX_REPLICAS:
        raise DomainError(f"n+1 = {n + 1} replicas exceeds the cap {MAX_REPLICAS}")
    f = MonomialSum(tuple(t.with_n(n) for t in f.terms)) if f.terms else f
    n1 = n + 1
    terms: list[Term] = [
        Mono(_times(f, ReplicaMonomial(n1, ((1, n1, 1),)), n1)),
        Mono(MonomialSum(tuple(t.with_n(n1) for t in f.terms))),
        Mono(C12.with_n(max(2, n1))),
    ]
    terms += [Mono(_times(f, ReplicaMonomial(n1, ((1, j, 1),)), n1)) for j in range(2, n + 1)]

    def g(m):
        out = m[..., 0] - m[..., 1] * m[..., 2] / n
        for j in range(n - 1):
            out = out - m[..., 3 + j] / n
        return out

    return Residual(terms, g)


GAUSSIAN_IDENTITIES: dict[str, Callable[[], Residual]] = {
    "ss_poly": ss_poly,
    "ac": ac,
    "gg": lambda: gg(2, MonomialSum((C12,))),
    "gg_r1": gg_r1,
    "gg_r2": gg_r2,
}

DETERMINISTIC_IDENTITIES = ("thermal_fluct", "cw_factorization")

ALL_IDENTITIES = DETERMINISTIC_IDENTITIES + tuple(GAUSSIAN_IDENTITIES)


def applicable_identities(model: ModelSpec) -> tuple[str, ...]:
    return tuple(GAUSSIAN_IDENTITIES) if model.is_gaussian else DETERMINISTIC_IDENTITIES


def _columns(res: Residual, values: np.ndarray) -> np.ndarray:
    return values if res.columns is None else res.columns(values)


def _evaluate(
    model: ModelSpec, beta, res: Residual, mode: QuenchMode, workers: int | None
) -> list[QuenchedEstimate] | QuenchedEstimate:
    table = disorder_table(model, beta, res.terms, mode, workers=workers)
    value, err = jackknife_estimate(
        _columns(res, table.values), table.weights, res.g, table.monte_carlo
    )
    out = [
        QuenchedEstimate(float(v), float(e), table.S, table.mode_tag)
        for v, e in zip(np.atleast_1d(value), np.atleast_1d(err))
    ]
    return out[0] if np.ndim(beta) == 0 else out


def _require_gaussian(model: ModelSpec) -> None:
    if not model.is_gaussian:
        raise DomainError(f"{model.model_id} has no disorder; use the deterministic residuals")


# -- public residual functions ------------------------------------------------


def thermal_fluct_residual(model: ModelSpec, beta: float, f: ObservableSpec = _H) -> float:
    """``omega(f h) - omega(f) omega(h)`` for a deterministic model."""
    if model.is_gaussian:
        raise DomainError("thermal_fluct_residual is for deterministic models; use ss_poly_residual")
    state = gibbs_state(model, None, beta)
    fh = float(state.probs @ (observable_values(f, state.N, state.h) * state.h))
    return fh - thermal_expectation(state, f) * thermal_expectation(state, _H)


def cw_factorization_residual(N: int, beta: float, n: int = 2) -> float:
    """``omega(sigma_1...sigma_2n) - omega(sigma_1 sigma_2)**n`` for Curie-Weiss."""
    if n < 1 or 2 * n > N:
        raise DomainError(f"the {2 * n}-point function needs N >= {2 * n}, got N={N}")
    state = gibbs_state(ModelSpec.curie_weiss(N), None, beta)
    many = thermal_expectation(state, SpinProduct(tuple(range(1, 2 * n + 1))))
    two = thermal_expectation(state, SpinProduct((1, 2)))
    return many - two**n


def ss_poly_residual(
    model: ModelSpec, beta, f: ObservableSpec = _H, mode: QuenchMode | None = None, *, workers=None
):
    """``Av[omega(f h) - omega(f) omega(h)]``."""
    _require_gaussian(model)
    return _evaluate(model, beta, ss_poly(f), mode, workers)


def ac_residual(model: ModelSpec, beta, mode: QuenchMode, *, workers=None):
    """``E(c12^2 - 4 c12 c23 + 3 c12 c34)``."""
    _require_gaussian(model)
    return _evaluate(model, beta, ac(), mode, workers)


def gg_residual(
    model: ModelSpec, beta, n: int, f: MonomialSum | ReplicaMonomial, mode: QuenchMode, *, workers=None
):
    _require_gaussian(model)
    if isinstance(f, ReplicaMonomial):
        f = MonomialSum((f,))
    return _evaluate(model, beta, gg(n, f), mode, workers)


def gg_low_order(model: ModelSpec, beta, mode: QuenchMode, *, workers=None):
    """Residuals of the two lowest-order replica overlap relations.

    ``r1 = E(c12 c23) - E(c12^2)/2 - E(c12)^2/2`` and
    ``r2 = E(c12 c34) - E(c12^2)/3 - 2 E(c12)^2/3``, on shared draws.
    """
    _require_gaussian(model)
    res = Residual(
        [Mono(C12_C23), Mono(C12_C34), Mono(C12_SQ), Mono(C12)],
        lambda m: np.stack(
            [
                m[..., 0] - 0.5 * m[..., 2] - 0.5 * m[..., 3] ** 2,
                m[..., 1] - m[..., 2] / 3 - 2 * m[..., 3] ** 2 / 3,
            ],
            axis=-1,
        ),
    )
    table = disorder_table(model, beta, res.terms, mode, workers=workers)
    value, err = jackknife_estimate(table.values, table.weights, res.g, table.monte_carlo)
    pairs = []
    for v, e in zip(value.reshape(-1, 2), err.reshape(-1, 2)):
        pairs.append(
            tuple(QuenchedEstimate(float(v[i]), float(e[i]), table.S, table.mode_tag) for i in (0, 1))
        )
    return pairs[0] if np.ndim(beta) == 0 else pairs


# -- suite --------------------------------------------------------------------


@dataclass(frozen=True)
class ModelFamily:
    """A model kind with its size-independent parameters; ``at(N)`` builds one."""

    kind: str
    d: int = 1
    periodic: bool = True

    def at(self, N: int) -> ModelSpec:
        if self.kind == "EA":
            L = round(N ** (1 / self.d))
            if L**self.d != N:
                raise DomainError(f"EA with d={self.d} needs N to be a perfect power, got {N}")
            return ModelSpec.ea(L, self.d, self.periodic)
        return ModelSpec(self.kind, N=N)

    @property
    def is_gaussian(self) -> bool:
        return self.kind in ("SK", "EA")


def _deterministic_report(name: str, model: ModelSpec, grid: BetaGrid) -> ResidualReport:
    if name == "thermal_fluct":
        vals = [thermal_fluct_residual(model, b) for b in grid.values]
    else:
        vals = [cw_factorization_residual(model.N, b) for b in grid.values]
    return ResidualReport(
        identity=name,
        model=model.model_id,
        N=model.N,
        mode="exact",
        per_beta=[(float(b), float(v), 0.0) for b, v in zip(grid.values, vals)],
        beta_average=beta_average(vals, grid),
        beta_average_error=0.0,
        S_effective=1,
    )


def gaussian_reports(
    model: ModelSpec,
    names: Sequence[str],
    grid: BetaGrid,
    mode: QuenchMode,
    *,
    workers: int | None = None,
) -> list[ResidualReport]:
    """All requested disorder identities for one model on one shared table."""
    residuals = {name: GAUSSIAN_IDENTITIES[name]() for name in names}
    all_terms: list[Term] = []
    for res in residuals.values():
        for t in res.terms:
            if t not in all_terms:
                all_terms.append(t)
    table: DisorderTable = disorder_table(model, grid.values, all_terms, mode, workers=workers)
    reports = []
    for name, res in residuals.items():
        idx = [all_terms.index(t) for t in res.terms]
        x = _columns(res, table.values[..., idx])
        value, err = jackknife_estimate(x, table.weights, res.g, table.monte_carlo)
        avg, avg_err = jackknife_estimate(
            x, table.weights, lambda m, g=res.g: beta_average(g(m), grid), table.monte_carlo
        )
        reports.append(
            ResidualReport(
                identity=name,
                model=model.model_id,
                N=model.N,
                mode=table.mode_tag,
                per_beta=[
                    (float(b), float(v), float(e)) for b, v, e in zip(grid.values, value, err)
                ],
                beta_average=float(avg),
                beta_average_error=float(avg_err),
                S_effective=table.S,
            )
        )
    return reports


def run_identity_suite(
    family: ModelFamily,
    N_list: Sequence[int],
    grid: BetaGrid = DEFAULT_GRID,
    mode: QuenchMode | None = None,
    identities: Sequence[str] | None = None,
    *,
    workers: int | None = None,
) -> list[ResidualReport]:
    """One report per (identity, N), ordered by N then identity.

    Identities that do not apply to the model family are skipped; a failing
    cell yields a report carrying ``error`` and the suite moves on.
    """
    names = list(identities) if identities is not None else list(ALL_IDENTITIES)
    unknown = set(names) - set(ALL_IDENTITIES)
    if unknown:
        raise DomainError(f"unknown identities: {sorted(unknown)}")
    reports: list[ResidualReport] = []
    for N in N_list:
        try:
            model = family.at(N)
        except GlassIdError as exc:
            reports += [ResidualReport(n, f"{family.kind}(N={N})", N, "-", error=str(exc)) for n in names]
            continue
        usable = [n for n in names if n in applicable_identities(model)]
        if model.is_gaussian:
            try:
                reports += gaussian_reports(model, usable, grid, mode, workers=workers)
            except GlassIdError as exc:
                log.warning("suite cell %s failed: %s", model.model_id, exc)
                reports += [
                    ResidualReport(n, model.model_id, N, getattr(mode, "tag", "-"), error=str(exc))
                    for n in usable
                ]
            continue
        for name in usable:
            try:
                reports.append(_deterministic_report(name, model, grid))
            except GlassIdError as exc:
                log.warning("suite cell %s/%s failed: %s", name, model.model_id, exc)
                reports.append(ResidualReport(name, model.model_id, N, "exact", error=str(exc)))
    return reports
