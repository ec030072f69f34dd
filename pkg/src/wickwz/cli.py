"""Command line entry point: ``wickwz {validate,converge,fokker-planck,simulate}``.

Configuration is an INI file (``key = value`` under ``[sections]``); every
key has a default, so each subcommand also runs without one. Work is split
into fixed chunks of paths whose results are joined in chunk order, which
keeps output bytes independent of ``--threads``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import stats

from . import suites
from .coeffs import FAMILIES, CoefficientSet, make_coefficients
from .fokker_planck import (FpReport, concat_samples, constant_function, shipped_bumps, summarize,
                            telescoping_check, term_samples, write_fp_csv, write_fp_json)
from .hyperbolic import SolverConfig
from .oracles import l1_oracle
from .paths import Partition, sample_brownian_paths
from .plot import line_chart
from .process import (SCHEMES, _mean_se, build_ito, build_wz_from_path, coarsen, default_sample_times,
                      l1_samples, write_trajectory_csv)

OUT_ENV = "WICKWZ_OUT"
ORACLE_FLOOR = 1e-12


class ConfigError(ValueError):
    """A configuration problem, located by line and ``[section] key`` when possible."""

    def __init__(self, message: str, section: str | None = None, key: str | None = None,
                 line: int | None = None):
        where = ""
        if section is not None:
            where = f"[{section}] {key}" if key else f"[{section}]"
        if line is not None:
            where = f"line {line}: {where}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.section, self.key, self.line = section, key, line


# configuration ---------------------------------------------------------------

def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def _matrix(text: str) -> list[list[float]]:
    return [_floats(row) for row in text.split(";") if row.strip()]


def _optional_floats(text: str) -> list[float] | None:
    return _floats(text) if text.strip() else None


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.replace(",", " ").split() if v.strip()]


# section -> key -> (attribute, parser, default text)
SCHEMA = {
    "model": {
        "family": ("family", str.strip, "tanh"),
        "dim": ("dim", int, "2"),
        "horizon": ("horizon", float, "1.0"),
        "c": ("c", _floats, "1.0"),
        "sigma": ("sigma", _floats, "1.0, 0.5"),
        "sigma_slope": ("sigma_slope", _optional_floats, ""),
        "beta": ("beta", _floats, "1.0"),
        "coupling": ("coupling", _matrix, ""),
    },
    "ensemble": {
        "paths": ("paths", int, "10000"),
        "seed": ("seed", int, "20240611"),
        "chunk": ("chunk", int, "1000"),
    },
    "solver": {
        "steps": ("steps", int, "10"),
        "order": ("order", int, "6"),
        "quad_nodes": ("quad_nodes", int, "8"),
        "picard_max": ("picard_max", int, "12"),
        "picard_tol": ("picard_tol", float, "1e-10"),
    },
    "converge": {
        "meshes": ("meshes", _ints, "4, 8, 16, 32, 64"),
        "probe_times": ("probe_times", _floats, "0.5, 1.0"),
        "reference": ("reference", str.strip, "milstein"),
        "substeps": ("substeps", int, "128"),
    },
    "fokker_planck": {
        "cells": ("fp_cells", int, "4"),
        "nodes": ("fp_nodes", int, "16"),
        "test_functions": ("fp_functions", _names, "bumps"),
        "telescoping_nodes": ("tele_nodes", int, "128"),
        "telescoping_paths": ("tele_paths", int, "16"),
    },
    "validate": {
        "cells": ("val_cells", int, "4"),
        "wick_probes": ("wick_probes", int, "1000"),
        "wick_samples": ("wick_samples", int, "100000"),
        "mild_probes": ("mild_probes", int, "8"),
    },
    "simulate": {
        "cells": ("sim_cells", int, "8"),
        "path": ("sim_path", int, "0"),
    },
    "output": {
        "dir": ("out_dir", str.strip, "wickwz-out"),
    },
}


@dataclass
class ExperimentConfig:
    family: str = "tanh"
    dim: int = 2
    horizon: float = 1.0
    c: list = field(default_factory=lambda: [1.0])
    sigma: list = field(default_factory=lambda: [1.0, 0.5])
    sigma_slope: list | None = None
    beta: list = field(default_factory=lambda: [1.0])
    coupling: list = field(default_factory=list)
    paths: int = 10_000
    seed: int = 20240611
    chunk: int = 1000
    steps: int = 10
    order: int = 6
    quad_nodes: int = 8
    picard_max: int = 12
    picard_tol: float = 1e-10
    meshes: list = field(default_factory=lambda: [4, 8, 16, 32, 64])
    probe_times: list = field(default_factory=lambda: [0.5, 1.0])
    reference: str = "milstein"
    substeps: int = 128
    fp_cells: int = 4
    fp_nodes: int = 16
    fp_functions: list = field(default_factory=lambda: ["bumps"])
    tele_nodes: int = 128
    tele_paths: int = 16
    val_cells: int = 4
    wick_probes: int = 1000
    wick_samples: int = 100_000
    mild_probes: int = 8
    sim_cells: int = 8
    sim_path: int = 0
    out_dir: str = "wickwz-out"
    lines: dict = field(default_factory=dict, repr=False, compare=False)

    def solver(self) -> SolverConfig:
        try:
            return SolverConfig(self.steps, self.order, self.quad_nodes, self.picard_max, self.picard_tol)
        except ValueError as err:
            raise self.error(str(err), "solver") from None

    def coefficients(self) -> CoefficientSet:
        try:
            return make_coefficients(self.family, self.dim, c=self.c, sigma=self.sigma,
                                     sigma_slope=self.sigma_slope, beta=self.beta,
                                     coupling=self.coupling or None)
        except ValueError as err:
            raise self.error(str(err), "model") from None

    def error(self, message: str, section: str, key: str | None = None) -> ConfigError:
        line = self.lines.get((section, key), self.lines.get((section, None)))
        return ConfigError(message, section, key, line)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "lines"}


def _key_lines(text: str) -> dict:
    """``(section, key) -> line`` for every assignment, and ``(section, None)`` for headers."""
    out, section = {}, None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            out.setdefault((section, None), n)
        elif section is not None:
            for sep in ("=", ":"):
                if sep in line:
                    out.setdefault((section, line.split(sep, 1)[0].strip().lower()), n)
                    break
    return out


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as err:
        line = getattr(err, "lineno", None)
        if line is None and getattr(err, "errors", None):
            line = err.errors[0][0]
        first = str(err).splitlines()[0]
        raise ConfigError(first, line=line) from None
    lines = _key_lines(text)
    cfg = ExperimentConfig(lines=lines)
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section; expected one of {sorted(SCHEMA)}", section,
                              line=lines.get((section, None)))
        for key, text_value in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key; expected one of {sorted(SCHEMA[section])}", section, key,
                                  lines.get((section, key)))
            attr, conv, _ = SCHEMA[section][key]
            try:
                value = conv(text_value)
            except ValueError:
                raise ConfigError(f"cannot parse {text_value!r} as {conv.__name__.strip('_')}", section, key,
                                  lines.get((section, key))) from None
            setattr(cfg, attr, value)
    _check(cfg)
    return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return parse_config("")
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config file: {err.strerror}") from None
    return parse_config(text)


def _check(cfg: ExperimentConfig) -> None:
    def need(ok, message, section, key):
        if not ok:
            raise cfg.error(message, section, key)

    need(cfg.family in FAMILIES, f"unknown family; expected one of {FAMILIES}", "model", "family")
    need(cfg.dim >= 1, "must be >= 1", "model", "dim")
    need(cfg.horizon > 0, "must be positive", "model", "horizon")
    for key in ("c", "sigma", "beta") + (("sigma_slope",) if cfg.sigma_slope is not None else ()):
        need(len(getattr(cfg, key)) in (1, cfg.dim),
             "needs 1 value" if cfg.dim == 1 else f"needs 1 or {cfg.dim} values", "model", key)
    need(cfg.paths >= 1, "must be >= 1", "ensemble", "paths")
    need(cfg.chunk >= 1, "must be >= 1", "ensemble", "chunk")
    need(cfg.seed >= 0, "must be nonnegative", "ensemble", "seed")
    need(len(cfg.meshes) >= 1, "needs at least one mesh", "converge", "meshes")
    need(all(n >= 1 for n in cfg.meshes), "meshes must be positive", "converge", "meshes")
    need(all(a < b for a, b in zip(cfg.meshes, cfg.meshes[1:])), "meshes must be strictly increasing",
         "converge", "meshes")
    need(len(cfg.probe_times) >= 1, "needs at least one time", "converge", "probe_times")
    need(all(0 < t <= cfg.horizon for t in cfg.probe_times), "times must lie in ]0, horizon]",
         "converge", "probe_times")
    need(all(a < b for a, b in zip(cfg.probe_times, cfg.probe_times[1:])), "times must be strictly increasing",
         "converge", "probe_times")
    need(cfg.reference in SCHEMES, f"unknown scheme; expected one of {SCHEMES}", "converge", "reference")
    need(cfg.reference != "exact-gbm" or cfg.family == "zero", "exact-gbm needs the zero family",
         "converge", "reference")
    need(cfg.substeps >= 2 and cfg.substeps % 2 == 0, "must be even and >= 2", "converge", "substeps")
    need(cfg.fp_cells >= 1, "must be >= 1", "fokker_planck", "cells")
    need(cfg.fp_nodes >= 2, "must be >= 2", "fokker_planck", "nodes")
    need(set(cfg.fp_functions) <= {"bumps", "constant"} and cfg.fp_functions,
         "choose from 'bumps' and 'constant'", "fokker_planck", "test_functions")
    need(cfg.tele_nodes >= 0, "must be >= 0 (0 skips the check)", "fokker_planck", "telescoping_nodes")
    need(cfg.tele_paths >= 1, "must be >= 1", "fokker_planck", "telescoping_paths")
    need(cfg.val_cells >= 1, "must be >= 1", "validate", "cells")
    need(cfg.wick_probes >= 1, "must be >= 1", "validate", "wick_probes")
    need(cfg.wick_samples >= 100, "must be >= 100", "validate", "wick_samples")
    need(cfg.mild_probes >= 1, "must be >= 1", "validate", "mild_probes")
    need(cfg.sim_cells >= 1, "must be >= 1", "simulate", "cells")
    need(cfg.sim_path >= 0, "must be nonnegative", "simulate", "path")
    cfg.solver()
    cfg.coefficients()


def _statistical(cfg: ExperimentConfig) -> None:
    if cfg.paths < 100:
        raise cfg.error("statistical subcommands need at least 100 paths", "ensemble", "paths")


# plumbing ------------------------------------------------------------------

def _chunks(cfg: ExperimentConfig) -> list[range]:
    return [range(a, min(a + cfg.chunk, cfg.paths)) for a in range(0, cfg.paths, cfg.chunk)]


def _map(fn, items, threads: int) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _write_json(obj, dest: Path) -> None:
    dest.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _snap(grid: np.ndarray, t: float, cfg: ExperimentConfig, key: str) -> float:
    j = int(np.argmin(np.abs(grid - t)))
    if abs(grid[j] - t) > 1e-12 * max(1.0, cfg.horizon):
        raise cfg.error(f"time {t} is not a node of the reference grid (spacing {grid[1] - grid[0]:.6g})",
                        "converge", key)
    return float(grid[j])


# validate --------------------------------------------------------------------

def run_validate(cfg: ExperimentConfig, out: Path, threads: int = 1) -> int:
    _statistical(cfg)
    cs, solver = cfg.coefficients(), cfg.solver()
    results = suites.run_all(cs, cfg.seed, solver, T=cfg.horizon, N=cfg.val_cells, paths=cfg.paths,
                             wick_probes=cfg.wick_probes, wick_samples=cfg.wick_samples,
                             mild_probes=cfg.mild_probes)
    passed = all(r.passed for r in results)
    _write_json({"passed": passed, "seed": cfg.seed, "config": cfg.to_dict(),
                 "suites": [r.to_dict() for r in results]}, out / "validate.json")
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}")
        for c in r.checks:
            if not c.passed:
                print(f"      {c.name}: {c.value!r} exceeds {c.limit!r} {c.detail.get('error', '')}".rstrip())
    return 0 if passed else 1


# converge --------------------------------------------------------------------

@dataclass
class ConvergenceRow:
    N: int
    h: float
    t: float
    mean_l1: float
    se: float
    ref_self_err: float
    oracle: float | None = None


@dataclass
class SlopeFit:
    t: float
    slope: float | None
    ci_low: float | None
    ci_high: float | None
    points: int


@dataclass
class ConvergenceReport:
    rows: list[ConvergenceRow]
    slopes: list[SlopeFit]
    flags: list[str]
    checks: dict
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def fit_slope(h, err, t: float) -> SlopeFit:
    """Least-squares slope of ``log err`` against ``log h`` with a 95% t-interval."""
    h, err = np.asarray(h, dtype=float), np.asarray(err, dtype=float)
    keep = err > 0
    x, y = np.log(h[keep]), np.log(err[keep])
    n = len(x)
    if n < 2:
        return SlopeFit(t, None, None, None, n)
    A = np.vstack([x, np.ones(n)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope = float(coef[0])
    if n == 2:
        return SlopeFit(t, slope, None, None, n)
    resid = y - A @ coef
    s2 = float(resid @ resid) / (n - 2)
    se = math.sqrt(s2 / float(np.sum((x - x.mean()) ** 2)))
    q = float(stats.t.ppf(0.975, n - 2))
    return SlopeFit(t, slope, slope - q * se, slope + q * se, n)


def converge_study(cfg: ExperimentConfig, threads: int = 1) -> ConvergenceReport:
    cs, solver = cfg.coefficients(), cfg.solver()
    if cs.oracle_only:
        raise cfg.error(f"family {cfg.family!r} has an unbounded drift and is only usable as an oracle",
                        "model", "family")
    _statistical(cfg)
    n_max = cfg.meshes[-1] * cfg.substeps
    bad = [N for N in cfg.meshes if n_max % N]
    if bad:
        raise cfg.error(f"meshes {bad} do not divide the reference grid of {n_max} steps", "converge", "meshes")
    fine = Partition.uniform(cfg.horizon, n_max).nodes
    # the reference's self-error also runs on every second node, so probe times must lie there
    probes = [_snap(fine[::2], t, cfg, "probe_times") for t in cfg.probe_times]
    partitions = {N: Partition(fine[::n_max // N]) for N in cfg.meshes}

    def chunk(ids):
        path = sample_brownian_paths(cs.dim, fine, cfg.seed, ids)
        ref = build_ito(cs, path, probes, cfg.reference)
        half = build_ito(cs, coarsen(path), probes, cfg.reference)
        gaps = np.sum(np.abs(ref.states - half.states), axis=-1)
        errs = {}
        for N, part in partitions.items():
            times = np.union1d(part.nodes, probes)
            wz = build_wz_from_path(cs, part, path, times, solver)
            errs[N] = np.stack([l1_samples(wz, ref, t) for t in probes], axis=1)
        return errs, gaps

    parts = _map(chunk, _chunks(cfg), threads)
    gaps = np.concatenate([g for _, g in parts])
    ref_err = [_mean_se(gaps[:, j])[0] for j in range(len(probes))]
    rows = []
    for N, part in partitions.items():
        errs = np.concatenate([e[N] for e, _ in parts])
        for j, t in enumerate(probes):
            mean, se = _mean_se(errs[:, j])
            oracle = l1_oracle(cs, part, float(t)) if cs.zero_drift else None
            rows.append(ConvergenceRow(N, float(part.h), float(t), mean, se, ref_err[j], oracle))

    flags, checks = [], {}
    slopes = []
    for j, t in enumerate(probes):
        mine = [r for r in rows if r.t == t]
        slopes.append(fit_slope([r.h for r in mine], [r.mean_l1 for r in mine], float(t)))
        smallest = max(min(r.mean_l1 for r in mine), ORACLE_FLOOR)
        if ref_err[j] > 0.1 * smallest:
            flags.append(f"reference-limited at t={t!r}: self-error {ref_err[j]:.3g} exceeds 10% of {smallest:.3g}")
    if len(cfg.meshes) == 1:
        flags.append("single mesh: no slope fitted")
    if any(r.se == 0 for r in rows):
        flags.append("zero standard error in some row")

    if cs.zero_drift:
        gaps_ok = [abs(r.mean_l1 - r.oracle) <= 3 * r.se + ORACLE_FLOOR for r in rows]
        checks["oracle_within_3se"] = bool(all(gaps_ok))
    else:
        for j, t in enumerate(probes):
            errs = [r.mean_l1 for r in rows if r.t == t]
            checks[f"decreasing_t={t!r}"] = bool(all(a > b for a, b in zip(errs, errs[1:])))
            fit = slopes[j]
            if fit.slope is not None:
                checks[f"positive_slope_t={t!r}"] = bool(fit.slope > 0)
        checks["not_reference_limited"] = not any(f.startswith("reference-limited") for f in flags)
    return ConvergenceReport(rows, slopes, flags, checks, bool(all(checks.values())))


def write_converge_csv(report: ConvergenceReport, dest: Path) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "h", "t", "mean_l1", "se", "ref_self_err"])
        for r in report.rows:
            w.writerow([r.N, repr(r.h), repr(r.t), repr(r.mean_l1), repr(r.se), repr(r.ref_self_err)])


def run_converge(cfg: ExperimentConfig, out: Path, threads: int = 1, svg: bool = False) -> int:
    report = converge_study(cfg, threads)
    write_converge_csv(report, out / "converge.csv")
    _write_json({"seed": cfg.seed, "config": cfg.to_dict(), **report.to_dict()}, out / "converge.json")
    if svg:
        series = []
        for t in sorted({r.t for r in report.rows}):
            mine = [r for r in report.rows if r.t == t]
            series.append((f"t = {t:g}", [r.h for r in mine], [r.mean_l1 for r in mine]))
        try:
            (out / "converge.svg").write_text(line_chart(series, "Mean L1 error against mesh", "h", "mean L1 error",
                                                         logx=True, logy=True))
        except ValueError:
            report.flags.append("no positive errors to plot")
    for r in report.rows:
        print(f"N={r.N:<4d} t={r.t:<8g} mean_l1={r.mean_l1:.6g} se={r.se:.3g} ref_self_err={r.ref_self_err:.3g}")
    for s in report.slopes:
        if s.slope is not None:
            ci = "" if s.ci_low is None else f" [{s.ci_low:.3f}, {s.ci_high:.3f}]"
            print(f"slope at t={s.t:g}: {s.slope:.3f}{ci}")
    for f in report.flags:
        print(f"flag: {f}")
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


# fokker-planck ---------------------------------------------------------------

def fp_study(cfg: ExperimentConfig, threads: int = 1) -> list[FpReport]:
    _statistical(cfg)
    cs, solver = cfg.coefficients(), cfg.solver()
    part = Partition.uniform(cfg.horizon, cfg.fp_cells)
    times = default_sample_times(part)

    def build(ids):
        path = sample_brownian_paths(cs.dim, part.nodes, cfg.seed, ids)
        return build_wz_from_path(cs, part, path, times, solver)

    ensembles = _map(build, _chunks(cfg), threads)
    phis = []
    if "bumps" in cfg.fp_functions:
        phis += shipped_bumps(np.concatenate([wz.states for wz in ensembles]), cfg.horizon)
    if "constant" in cfg.fp_functions:
        phis.append(constant_function(cs.dim))
    per_chunk = _map(lambda wz: term_samples(wz, phis, cfg.fp_nodes), ensembles, threads)
    tele = [None] * len(phis)
    if cfg.tele_nodes:
        tele = telescoping_check(ensembles[0], phis, cfg.tele_nodes, cfg.tele_paths)
    return [summarize(phi, concat_samples([c[j] for c in per_chunk]), cfg.fp_nodes, tele[j])
            for j, phi in enumerate(phis)]


def run_fp(cfg: ExperimentConfig, out: Path, threads: int = 1, svg: bool = False) -> int:
    reports = fp_study(cfg, threads)
    write_fp_csv(reports, out / "fp.csv")
    write_fp_json(reports, out / "fp.json")
    if svg:
        names = [r.phi_id for r in reports]
        xs = list(range(len(reports)))
        series = [("zz z", xs, [r.zz.z for r in reports]), ("IBP z", xs, [r.ibp.z_pooled for r in reports])]
        try:
            (out / "fp.svg").write_text(line_chart(series, "z-scores by test function: " + ", ".join(names),
                                                   "test function index", "z"))
        except ValueError:
            pass
    ok = True
    for r in reports:
        tele = ""
        if r.telescoping is not None:
            tele = f" telescoping={r.telescoping.residuals[0]:.2e}->{r.telescoping.residuals[1]:.2e}"
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.phi_id}: zz z={r.zz.z:.3f} ibp z={r.ibp.z_pooled:.3f}{tele}")
        for f in r.flags:
            print(f"      flag: {f}")
        ok = ok and r.passed
    return 0 if ok else 1


# simulate --------------------------------------------------------------------

def run_simulate(cfg: ExperimentConfig, out: Path, threads: int = 1, svg: bool = False) -> int:
    cs, solver = cfg.coefficients(), cfg.solver()
    scheme = cfg.reference
    part = Partition.uniform(cfg.horizon, cfg.sim_cells)
    fine = part.refine(cfg.substeps)
    stride = cfg.substeps // 8 if cfg.substeps % 8 == 0 else 1
    times = fine[::stride]
    path = sample_brownian_paths(cs.dim, fine, cfg.seed, [cfg.sim_path])
    wz = build_wz_from_path(cs, part, path, times, solver)
    ito = build_ito(cs, path, times, scheme)
    write_trajectory_csv(wz, ito, out / "trajectory.csv")
    if svg:
        series = []
        for i in range(cs.dim):
            series.append((f"WZ x{i}", times, wz.states[0, :, i]))
            series.append((f"{scheme} x{i}", times, ito.states[0, :, i]))
        (out / "trajectory.svg").write_text(line_chart(series, f"Path {cfg.sim_path}, seed {cfg.seed}", "t", "x"))
    print(f"wrote {out / 'trajectory.csv'}")
    return 0


# entry point -----------------------------------------------------------------

COMMANDS = {"validate": run_validate, "converge": run_converge, "fokker-planck": run_fp, "simulate": run_simulate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wickwz", description="Wong-Zakai-Wick approximation experiments.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="INI configuration file")
    ap.add_argument("--seed", type=int, help="override [ensemble] seed")
    ap.add_argument("--out", help=f"output directory (else ${OUT_ENV}, else [output] dir)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads over path chunks")
    ap.add_argument("--svg", action="store_true", help="also write an SVG line chart")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            cfg.seed = args.seed
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = Path(args.out or os.environ.get(OUT_ENV) or cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        run = COMMANDS[args.command]
        if args.command == "validate":
            return run(cfg, out, args.threads)
        return run(cfg, out, args.threads, args.svg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
