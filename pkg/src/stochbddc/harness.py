"""Monte Carlo experiment driver: configuration, per-sample runs, reports."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .bddc import (SchurOperator, SPDError, Substructure, build_preconditioner,
                   mean_preconditioner, recover_interior, reduce_rhs, rho_scaling)
from .krylov import BreakdownError, pcg
from .mesh_fem import mass_matrix
from .offline import build_offline
from .online import instantiate, surrogate_schur
from .random_field import CovarianceSpec, evaluate_kappa, global_kl, sample_seeds, sample_xi

METHODS = ("exact", "mpc", "sg", "sc")
OPERATOR_MODES = ("exact", "surrogate")
CSV_COLUMNS = ("sample_id", "seed", "method", "operator_mode", "iterations", "converged",
               "cond_est", "spd_ok", "l2_error", "wall_ms")
REFERENCE_TOL = 1e-12


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    ns: int = 8
    n: int = 8
    sigma2: float = 0.5
    ell: float = 1.0
    mkl: int = 4
    nkl: int = 1
    degree: int = 4
    quad: int | None = None
    method: str = "exact"
    operator_mode: str = "exact"
    samples: int = 100
    seed: int = 2024
    tol: float = 1e-8
    maxit: int = 100
    out: str | None = None
    workers: int = 1
    fallback: bool = False        # solve SPD-failure samples with the mean preconditioner

    def validate(self) -> "ExperimentConfig":
        for name in ("ns", "n", "mkl", "nkl", "maxit", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.degree < 0:
            raise ConfigError("degree must be nonnegative")
        if self.quad is not None and self.quad < 1:
            raise ConfigError("quad must be at least 1")
        if self.samples < 0:
            raise ConfigError("samples must be nonnegative")
        if not (self.sigma2 > 0 and self.ell > 0 and self.tol > 0):
            raise ConfigError("sigma2, ell and tol must be positive")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.operator_mode not in OPERATOR_MODES:
            raise ConfigError(f"operator_mode must be one of {OPERATOR_MODES}")
        if self.operator_mode == "surrogate" and self.method not in ("sg", "sc"):
            raise ConfigError("the surrogate operator needs method sg or sc")
        n_local_cells = 2 * self.n * self.n
        if self.method in ("sg", "sc") and self.nkl > n_local_cells:
            raise ConfigError("nkl exceeds the number of cells per subdomain")
        if self.mkl > 2 * (self.ns * self.n) ** 2:
            raise ConfigError("mkl exceeds the number of cells")
        return self

    @property
    def spec(self) -> CovarianceSpec:
        return CovarianceSpec(self.sigma2, self.ell)


_ALIASES = {"operator": "operator_mode", "d": "degree", "q": "quad", "num_samples": "samples"}


def _coerce(name: str, raw):
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    if name not in types:
        raise ConfigError(f"unknown configuration key {name!r}")
    kind = types[name]
    if raw is None:
        return None
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if "bool" in kind:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "None" in kind and raw.lower() in ("", "none"):
            return None
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r} for {name}") from exc


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, **overrides) -> ExperimentConfig:
    values = {}
    if path is not None:
        try:
            values.update(parse_config_text(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for k, v in overrides.items():
        if v is None:
            continue
        k = _ALIASES.get(k, k)
        values[k] = _coerce(k, v)
    try:
        cfg = ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


# ---------------------------------------------------------------- reports

@dataclass
class SampleRecord:
    sample_id: int
    seed: int
    method: str
    operator_mode: str
    iterations: int
    converged: bool
    cond_est: float
    spd_ok: bool
    l2_error: float = math.nan
    wall_ms: float = 0.0
    lambda_min: float = math.nan
    build_ms: float = 0.0
    solve_ms: float = 0.0
    note: str = ""
    residuals: list = field(default_factory=list, repr=False)

    @property
    def included(self) -> bool:
        return self.converged and self.spd_ok


@dataclass
class RunReport:
    config: ExperimentConfig
    records: list
    offline_seconds: float = 0.0

    @property
    def included(self) -> list:
        return [r for r in self.records if r.included]

    @property
    def excluded_count(self) -> int:
        return len(self.records) - len(self.included)

    def _mean(self, attr) -> float:
        vals = [getattr(r, attr) for r in self.included]
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def mean_iterations(self) -> float:
        return self._mean("iterations")

    @property
    def mean_cond(self) -> float:
        return self._mean("cond_est")

    @property
    def mean_l2_error(self) -> float:
        return self._mean("l2_error")

    @property
    def mean_wall_ms(self) -> float:
        return self._mean("wall_ms")

    def aggregate(self) -> dict:
        return {
            "iterations": self.mean_iterations, "cond_est": self.mean_cond,
            "l2_error": self.mean_l2_error, "wall_ms": self.mean_wall_ms,
            "converged": sum(r.converged for r in self.records),
            "spd_ok": sum(r.spd_ok for r in self.records),
            "excluded": self.excluded_count,
        }


# ---------------------------------------------------------------- runs

@lru_cache(maxsize=8)
def _problem(ns: int, n: int) -> Substructure:
    return Substructure(ns, n)


@lru_cache(maxsize=16)
def _global_basis(ns, n, sigma2, ell, mkl):
    return global_kl(_problem(ns, n).mesh, CovarianceSpec(sigma2, ell), mkl)


@lru_cache(maxsize=8)
def _mass(ns, n):
    return mass_matrix(_problem(ns, n).mesh)


def _relative_l2(u, ref, M) -> float:
    e = u - ref
    return float(np.sqrt((e @ (M @ e)) / (ref @ (M @ ref))))


def _run_sample(cfg, sample_id, seed, problem, basis, offline, mpc, mass) -> SampleRecord:
    t0 = time.perf_counter()
    part = problem.partition
    sample = sample_xi(int(seed), cfg.mkl)
    kappa = evaluate_kappa(basis, sample.xi)
    blocks = problem.blocks(kappa)
    rec = SampleRecord(sample_id, int(seed), cfg.method, cfg.operator_mode, 0, False,
                       math.nan, True)

    exact_pre = None
    if cfg.method == "exact":
        precond = exact_pre = build_preconditioner(blocks, part, rho_scaling(part, kappa))
    elif cfg.method == "mpc":
        precond = mpc
    else:
        inst = instantiate(offline, sample, basis, problem)
        precond = inst.preconditioner
        if not inst.spd_ok:
            rec.spd_ok = False
            rec.note = str(inst.failure)
            precond = mpc if cfg.fallback else None

    if cfg.operator_mode == "exact":
        op = SchurOperator.exact(blocks, part)
        g = reduce_rhs(blocks, part, problem.load)
        recover = lambda ug: recover_interior(blocks, part, problem.load, ug)  # noqa: E731
    else:
        system = surrogate_schur(offline, inst, problem)
        op = system.operator
        g = system.rhs(problem.load)
        recover = lambda ug: system.recover(problem.load, ug)  # noqa: E731
    t1 = time.perf_counter()
    rec.build_ms = 1e3 * (t1 - t0)

    if precond is not None:
        try:
            rep = pcg(op, precond, g, tol=cfg.tol, maxit=cfg.maxit)
            rec.iterations, rec.converged = rep.iterations, rep.converged
            rec.cond_est, rec.lambda_min = rep.cond, rep.lambda_min
            rec.residuals = rep.residuals
            u = recover(rep.solution)
        except BreakdownError as exc:
            rec.note = str(exc)
            u = None
    else:
        u = None
    t2 = time.perf_counter()
    rec.solve_ms = 1e3 * (t2 - t1)

    if cfg.operator_mode == "surrogate" and u is not None:
        if exact_pre is None:
            exact_pre = build_preconditioner(blocks, part, rho_scaling(part, kappa))
        ex_op = SchurOperator.exact(blocks, part)
        ref_rep = pcg(ex_op, exact_pre, reduce_rhs(blocks, part, problem.load),
                      tol=REFERENCE_TOL, maxit=max(cfg.maxit, 200))
        ref = recover_interior(blocks, part, problem.load, ref_rep.solution)
        rec.l2_error = _relative_l2(u, ref, mass)
    rec.wall_ms = 1e3 * (time.perf_counter() - t0)
    return rec


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    cfg.validate()
    problem = _problem(cfg.ns, cfg.n)
    basis = _global_basis(cfg.ns, cfg.n, cfg.sigma2, cfg.ell, cfg.mkl)
    offline = None
    offline_seconds = 0.0
    if cfg.method in ("sg", "sc"):
        offline = build_offline(problem, cfg.spec, cfg.method, cfg.nkl, cfg.degree, cfg.quad,
                                schur=cfg.operator_mode == "surrogate")
        offline_seconds = offline.wall_seconds
    mpc = None
    if cfg.method == "mpc" or (cfg.method in ("sg", "sc") and cfg.fallback):
        mpc = mean_preconditioner(problem, cfg.spec)
    mass = _mass(cfg.ns, cfg.n) if cfg.operator_mode == "surrogate" else None
    seeds = sample_seeds(cfg.seed, cfg.samples)

    def one(k):
        return _run_sample(cfg, k, seeds[k], problem, basis, offline, mpc, mass)

    if cfg.workers > 1 and cfg.samples > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            records = list(pool.map(one, range(cfg.samples)))
    else:
        records = [one(k) for k in range(cfg.samples)]
    records.sort(key=lambda r: r.sample_id)
    return RunReport(cfg, records, offline_seconds)


def sweep(base: ExperimentConfig, axis: str, values) -> list:
    """One report per value; every run draws the same seed stream."""
    axis = _ALIASES.get(axis, axis)
    if axis not in {f.name for f in fields(ExperimentConfig)} or axis in ("seed", "out"):
        raise ConfigError(f"cannot sweep over {axis!r}")
    return [run_experiment(replace(base, **{axis: _coerce(axis, v)}).validate()) for v in values]


# ---------------------------------------------------------------- emission

def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def report_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.records:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    if report.records:
        agg = report.aggregate()
        cfg = report.config
        w.writerow(["aggregate", "", cfg.method, cfg.operator_mode, _fmt(agg["iterations"]),
                    agg["converged"], _fmt(agg["cond_est"]), agg["spd_ok"],
                    _fmt(agg["l2_error"]), _fmt(agg["wall_ms"])])
    return buf.getvalue()


def parse_csv(text: str):
    """(per-sample rows, aggregate row or None) from emitted CSV text."""
    rows = list(csv.DictReader(io.StringIO(text)))
    agg = None
    if rows and rows[-1]["sample_id"] == "aggregate":
        agg = rows.pop()

    def num(s):
        return math.nan if s == "" else float(s)

    for r in rows + ([agg] if agg else []):
        for k in ("iterations", "cond_est", "l2_error", "wall_ms"):
            r[k] = num(r[k])
    return rows, agg


def report_table(reports) -> str:
    """Plain-text table of run averages, one line per report."""
    if isinstance(reports, RunReport):
        reports = [reports]
    head = (f"{'method':>6} {'op':>9} {'N_s':>4} {'H/h':>4} {'s2':>5} {'l':>5} {'N_KL':>4} "
            f"{'d':>2} {'Cond.':>7} {'Iter.':>7} {'Error':>9} {'excl':>4}")
    lines = [head, "-" * len(head)]
    for rep in reports:
        c = rep.config
        stochastic = c.method in ("sg", "sc")
        err = rep.mean_l2_error
        lines.append(
            f"{c.method:>6} {c.operator_mode:>9} {c.ns:>4} {c.n:>4} {c.sigma2:>5g} {c.ell:>5g} "
            f"{(c.nkl if stochastic else '-'):>4} {(c.degree if stochastic else '-'):>2} "
            f"{rep.mean_cond:>7.2f} {rep.mean_iterations:>7.2f} "
            f"{('-' if math.isnan(err) else f'{err:.2e}'):>9} {rep.excluded_count:>4}")
    return "\n".join(lines) + "\n"


def emit_report(report: RunReport, fmt: str = "csv", path=None) -> str:
    if fmt == "csv":
        text = report_csv(report)
    elif fmt == "table":
        text = report_table(report)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def write_residual_log(report: RunReport, path) -> None:
    """One JSON object per sample with its relative residual history."""
    with open(path, "w") as fh:
        for r in report.records:
            fh.write(json.dumps({"sample_id": r.sample_id, "seed": r.seed, "method": r.method,
                                 "operator_mode": r.operator_mode, "residuals": r.residuals,
                                 "note": r.note}) + "\n")


def config_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


__all__ = ["ConfigError", "ExperimentConfig", "SampleRecord", "RunReport", "load_config",
           "parse_config_text", "run_experiment", "sweep", "emit_report", "report_csv",
           "report_table", "parse_csv", "write_residual_log", "SPDError"]
