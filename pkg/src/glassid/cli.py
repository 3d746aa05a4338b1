"""``glassid`` command-line front end.

Each subcommand reads one JSON experiment file, validates it completely,
runs the computation and writes CSV/JSON reports.  Exit codes: 0 pass,
1 gate failure, 2 error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from glassid import __version__
from glassid.genfun import flatness_scan, genfun_points, schwarz_gap, second_derivatives_at_zero
from glassid.gibbs import EnergyPower, SpinProduct
from glassid.identities import (
    ALL_IDENTITIES,
    BetaGrid,
    ModelFamily,
    ResidualReport,
    applicable_identities,
    run_identity_suite,
)
from glassid.mc import ChainConfig, mc_overlap_moment
from glassid.quenched import MonteCarlo, Quadrature, QuenchMode, default_workers, quenched_expectation, sample_stream
from glassid.replica import MonomialSum, parse_monomials
from glassid.spin_core import ModelSpec, sample_disorder, write_disorder

log = logging.getLogger("glassid")

EXIT_PASS, EXIT_GATE, EXIT_ERROR = 0, 1, 2
DECOMPOSITION_TOL = 1e-12
SCHWARZ_TOL = 1e-12
MC_EXACT_MAX_N = 8
FLATNESS = "flatness_psi2"


# -- configuration -------------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelCfg(_Strict):
    kind: Literal["SK", "EA", "CW"]
    d: int = Field(1, ge=1)
    periodic: bool = True


class GridCfg(_Strict):
    beta0: float = 0.5
    beta1: float = 1.5
    points: int = 21


class ModeCfg(_Strict):
    kind: Literal["montecarlo", "quadrature"] = "montecarlo"
    samples: int | None = None
    nodes_per_dim: int | None = None

    @model_validator(mode="after")
    def _one_size(self):
        if self.kind == "montecarlo" and (self.samples is None or self.nodes_per_dim is not None):
            raise ValueError("montecarlo mode takes 'samples' only")
        if self.kind == "quadrature" and (self.nodes_per_dim is None or self.samples is not None):
            raise ValueError("quadrature mode takes 'nodes_per_dim' only")
        return self


class ChainCfg(_Strict):
    sweeps: int
    burn_in: int | None = None
    thin: int = 1
    n_replicas: int = 2
    pt_betas: list[float] | None = None
    seed: int = 0


class McCfg(_Strict):
    monomials: list[str] = ["c12^2"]
    n_disorder: int = Field(20, ge=2)
    betas: list[float] | None = None
    dump_disorder: bool = False


class ExperimentConfig(_Strict):
    model: ModelCfg
    N_list: list[int] = Field(min_length=1)
    beta_grid: GridCfg = GridCfg()
    mode: ModeCfg = ModeCfg(samples=1000)
    identities: list[str] | None = None
    chain: ChainCfg | None = None
    mc: McCfg | None = None
    output_dir: str = "glassid-out"
    master_seed: int = Field(0, ge=0)
    thresholds: dict[str, float] = {}
    lambda_grid: list[float] = [-0.5, -0.25, 0.0, 0.25, 0.5]


@dataclass
class Experiment:
    """A validated configuration with every domain object already built."""

    cfg: ExperimentConfig
    family: ModelFamily
    models: list[ModelSpec]
    grid: BetaGrid
    mode: QuenchMode
    identities: list[str] | None
    chain: ChainConfig | None
    monomials: list[tuple[str, MonomialSum]]
    header: str
    config_sha256: str


class ConfigError(Exception):
    pass


def load_experiment(path: str | Path) -> Experiment:
    """Parse and validate a config file; raises :class:`ConfigError`."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        cfg = ExperimentConfig.model_validate_json(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid config:\n{exc}") from exc
    sha = hashlib.sha256(raw).hexdigest()
    try:
        family = ModelFamily(cfg.model.kind, cfg.model.d, cfg.model.periodic)
        models = [family.at(N) for N in cfg.N_list]
        grid = BetaGrid(cfg.beta_grid.beta0, cfg.beta_grid.beta1, cfg.beta_grid.points)
        if cfg.mode.kind == "montecarlo":
            mode: QuenchMode = MonteCarlo(cfg.mode.samples, cfg.master_seed)
        else:
            mode = Quadrature(cfg.mode.nodes_per_dim)
        if cfg.identities is not None:
            unknown = set(cfg.identities) - set(ALL_IDENTITIES)
            if unknown:
                raise ConfigError(f"unknown identities: {sorted(unknown)}")
        bad_keys = set(cfg.thresholds) - set(ALL_IDENTITIES) - {FLATNESS}
        if bad_keys:
            raise ConfigError(f"thresholds for unknown identities: {sorted(bad_keys)}")
        chain = None
        if cfg.chain is not None:
            chain = ChainConfig(
                sweeps=cfg.chain.sweeps,
                burn_in=cfg.chain.burn_in,
                thin=cfg.chain.thin,
                n_replicas=cfg.chain.n_replicas,
                pt_betas=tuple(cfg.chain.pt_betas) if cfg.chain.pt_betas else None,
                seed=cfg.chain.seed,
            )
        mc = cfg.mc or McCfg()
        monomials = [(text, parse_monomials(text)) for text in mc.monomials]
        if chain is not None:
            for text, m in monomials:
                if m.n > chain.n_replicas:
                    raise ConfigError(f"monomial {text!r} needs more than {chain.n_replicas} chains")
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    header = f"# glassid {__version__} config_sha256={sha} master_seed={cfg.master_seed}"
    return Experiment(cfg, family, models, grid, mode, cfg.identities, chain, monomials, header, sha)


# -- output --------------------------------------------------------------------


def fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.17g}"
    return str(x)


def write_table(
    path: Path,
    header: str,
    columns: Sequence[str],
    rows: Sequence[Sequence],
    *,
    curve_columns: int = 0,
    gnuplot: bool = False,
) -> None:
    """CSV with a provenance comment line.

    With ``gnuplot`` the first ``curve_columns`` columns identify a curve;
    each curve becomes a whitespace-separated block introduced by a comment
    and separated from the next by two blank lines.
    """
    if not (gnuplot and curve_columns):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows([fmt(v) for v in r] for r in rows)
        path.write_text(header + "\n" + buf.getvalue(), encoding="utf-8")
        return
    lines = [header]
    blocks: dict[tuple, list] = {}
    for row in rows:
        blocks.setdefault(tuple(row[:curve_columns]), []).append(row[curve_columns:])
    lines.append("# " + " ".join(columns[curve_columns:]))
    for key, block in blocks.items():
        label = " ".join(f"{c}={fmt(v)}" for c, v in zip(columns, key))
        lines.append(f"# {label}")
        lines += [" ".join(fmt(v) for v in r) for r in block]
        lines += ["", ""]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _out_dir(exp: Experiment, override: str | None) -> Path:
    out = Path(override or exp.cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _residual_rows(reports: Sequence[ResidualReport]) -> list[list]:
    rows = []
    for r in reports:
        for beta, value, err in r.per_beta:
            rows.append([r.identity, r.model, r.N, r.mode, beta, value, err])
    return rows


RESIDUAL_COLUMNS = ["identity", "model", "N", "mode", "beta", "residual", "std_error"]


# -- commands ------------------------------------------------------------------


def _monotone(reports: Sequence[ResidualReport]) -> dict[str, bool | None]:
    by_name: dict[str, list[ResidualReport]] = {}
    for r in reports:
        if r.error is None:
            by_name.setdefault(r.identity, []).append(r)
    out: dict[str, bool | None] = {}
    for name, rs in by_name.items():
        mags = [abs(r.beta_average) for r in sorted(rs, key=lambda r: r.N)]
        out[name] = all(b < a for a, b in zip(mags, mags[1:])) if len(mags) > 1 else None
    return out


def cmd_verify(exp: Experiment, workers: int, out: Path, gnuplot: bool = False) -> int:
    reports = run_identity_suite(
        exp.family, exp.cfg.N_list, exp.grid, exp.mode, exp.identities, workers=workers
    )
    reports += flatness_scan(exp.family, exp.cfg.N_list, exp.grid, exp.mode, workers=workers)
    errors = [r for r in reports if r.error is not None]

    decomposition_max = 0.0
    schwarz_violations = 0
    schwarz_checked = 0
    observables = [EnergyPower(1), EnergyPower(2)]
    for model in exp.models:
        for total, thermal, disorder in second_derivatives_at_zero(
            model, exp.grid.values, exp.mode, workers=workers
        ):
            decomposition_max = max(decomposition_max, abs(total - thermal - disorder))
        fs = observables + ([SpinProduct((1, 2))] if model.N >= 2 else [])
        for f in fs:
            for lhs, rhs in schwarz_gap(model, exp.grid.values, f, exp.mode, workers=workers):
                schwarz_checked += 1
                schwarz_violations += int(lhs > rhs + SCHWARZ_TOL)

    entries = []
    for r in reports:
        entry = r.to_dict()
        entry.pop("per_beta", None)
        bound = None
        if r.error is None and r.beta_average_error > 0:
            bound = 5 * r.beta_average_error * math.sqrt(r.S_effective)
        entry["bound"] = bound
        entry["within_bound"] = None if bound is None else abs(r.beta_average) <= bound
        limit = exp.cfg.thresholds.get(r.identity)
        entry["threshold"] = limit
        entry["passes_threshold"] = (
            None if limit is None or r.error is not None else abs(r.beta_average) <= limit
        )
        entries.append(entry)

    monotone = _monotone(reports)
    gates = {
        "monotone_decrease": monotone,
        "bounds_ok": all(e["within_bound"] is not False for e in entries),
        "thresholds_ok": all(e["passes_threshold"] is not False for e in entries),
        "decomposition_max_residual": decomposition_max,
        "decomposition_ok": decomposition_max <= DECOMPOSITION_TOL,
        "schwarz_checked": schwarz_checked,
        "schwarz_violations": schwarz_violations,
    }
    passed = (
        all(v is not False for v in monotone.values())
        and gates["bounds_ok"]
        and gates["thresholds_ok"]
        and gates["decomposition_ok"]
        and schwarz_violations == 0
    )
    summary = {
        "header": exp.header,
        "tool_version": __version__,
        "config_sha256": exp.config_sha256,
        "master_seed": exp.cfg.master_seed,
        "model": exp.family.kind,
        "N_list": exp.cfg.N_list,
        "mode": exp.mode.tag if exp.family.is_gaussian else "exact",
        "identities": sorted({r.identity for r in reports if r.identity != FLATNESS}),
        "reports": entries,
        "gates": gates,
        "passed": passed and not errors,
    }
    write_table(
        out / "residuals.csv",
        exp.header,
        RESIDUAL_COLUMNS,
        _residual_rows([r for r in reports if r.error is None]),
        curve_columns=4,
        gnuplot=gnuplot,
    )
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    if errors:
        for r in errors:
            print(f"glassid: {r.identity} at N={r.N} failed: {r.error}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_PASS if passed else EXIT_GATE


def cmd_sweep(exp: Experiment, workers: int, out: Path, gnuplot: bool = False) -> int:
    names = exp.identities if exp.identities is not None else list(ALL_IDENTITIES)
    usable = [n for n in names if any(n in applicable_identities(m) for m in exp.models)]
    if not usable:
        print("glassid: no applicable identities selected; nothing to do", file=sys.stderr)
        return EXIT_ERROR
    reports = run_identity_suite(
        exp.family, exp.cfg.N_list, exp.grid, exp.mode, usable, workers=workers
    )
    write_table(
        out / "residuals.csv",
        exp.header,
        RESIDUAL_COLUMNS,
        _residual_rows([r for r in reports if r.error is None]),
        curve_columns=4,
        gnuplot=gnuplot,
    )
    errors = [r for r in reports if r.error is not None]
    for r in errors:
        print(f"glassid: {r.identity} at N={r.N} failed: {r.error}", file=sys.stderr)
    return EXIT_ERROR if errors else EXIT_PASS


def cmd_genfun(exp: Experiment, workers: int, out: Path, gnuplot: bool = False) -> int:
    rows, decomposition = [], []
    worst = 0.0
    for model in exp.models:
        for beta in exp.grid.values:
            for p in genfun_points(model, float(beta), exp.cfg.lambda_grid, exp.mode, workers=workers):
                rows.append([model.model_id, model.N, float(beta), p.lam, p.psi, p.psi_bar, p.psi_tilde])
        for beta, (total, thermal, disorder) in zip(
            exp.grid.values, second_derivatives_at_zero(model, exp.grid.values, exp.mode, workers=workers)
        ):
            residual = total - thermal - disorder
            worst = max(worst, abs(residual))
            decomposition.append([model.model_id, model.N, float(beta), total, thermal, disorder, residual])
    write_table(
        out / "genfun.csv",
        exp.header,
        ["model", "N", "beta", "lambda", "psi", "psi_bar", "psi_tilde"],
        rows,
        curve_columns=3,
        gnuplot=gnuplot,
    )
    write_table(
        out / "decomposition.csv",
        exp.header,
        ["model", "N", "beta", "psi2", "psi_bar2", "psi_tilde2", "residual"],
        decomposition,
        curve_columns=2,
        gnuplot=gnuplot,
    )
    return EXIT_PASS if worst <= DECOMPOSITION_TOL else EXIT_GATE


def cmd_mc(exp: Experiment, workers: int, out: Path, gnuplot: bool = False) -> int:
    if exp.chain is None:
        print("glassid: mc needs a 'chain' section in the config", file=sys.stderr)
        return EXIT_ERROR
    if not exp.family.is_gaussian:
        print("glassid: mc overlap moments need a Gaussian model (SK or EA)", file=sys.stderr)
        return EXIT_ERROR
    mc = exp.cfg.mc or McCfg()
    betas = mc.betas or [float(exp.grid.values[len(exp.grid.values) // 2])]
    seed = exp.cfg.master_seed
    rows = []
    all_agree = True
    for model in exp.models:
        if mc.dump_disorder:
            for idx in range(mc.n_disorder):
                d = sample_disorder(model, sample_stream(seed, idx), seed=seed)
                write_disorder(out / f"disorder_{model.model_id}_{idx}.txt", model, d)
        for beta in betas:
            for text, mono in exp.monomials:
                est = mc_overlap_moment(
                    model, beta, mono, exp.chain, mc.n_disorder, seed, workers=workers
                )
                exact_value = exact_err = z = math.nan
                agrees = None
                if model.N <= MC_EXACT_MAX_N:
                    # same master seed, so the exact average sees the same couplings
                    ref = quenched_expectation(model, beta, mono, MonteCarlo(mc.n_disorder, seed))
                    exact_value, exact_err = ref.value, ref.std_error
                    sigma = math.hypot(est.std_error, exact_err)
                    z = abs(est.value - exact_value) / sigma if sigma > 0 else math.inf
                    agrees = bool(z <= 3)
                    all_agree = all_agree and agrees
                rows.append(
                    [model.model_id, model.N, float(beta), text, est.value, est.std_error,
                     exact_value, exact_err, z, "" if agrees is None else agrees]
                )
    write_table(
        out / "mc_compare.csv",
        exp.header,
        ["model", "N", "beta", "monomial", "mc_value", "mc_std_error",
         "exact_value", "exact_std_error", "z", "agrees"],
        rows,
    )
    return EXIT_PASS if all_agree else EXIT_GATE


COMMANDS = {"verify": cmd_verify, "sweep": cmd_sweep, "genfun": cmd_genfun, "mc": cmd_mc}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glassid", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"glassid {__version__}")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON experiment file")
    parser.add_argument("--workers", type=int, default=None, help="process count (default GLASSID_WORKERS or 1)")
    parser.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    parser.add_argument("--gnuplot-data", action="store_true", help="write CSVs as per-curve blocks")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        workers = args.workers if args.workers is not None else default_workers()
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        exp = load_experiment(args.config)
        out = _out_dir(exp, args.out)
        return COMMANDS[args.command](exp, workers, out, args.gnuplot_data)
    except ConfigError as exc:
        print(f"glassid: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - exit code contract
        log.debug("failure", exc_info=True)
        print(f"glassid: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
