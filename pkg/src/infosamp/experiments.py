"""Replicated simulation studies.

Two studies are provided:

``three_stage``
    One nested population (200 PSUs x 10 HHs x 3 persons). For each number
    of selected PSUs, draw M multistage samples and fit the marginal logit
    model with equal weights and with inverse-probability weights.

``dyadic`` / ``stratified_dyadic``
    One flat population per N. The unstratified dyadic design has only two
    possible samples, so both are fitted exactly once; the stratified design
    (strata of 50 consecutive sorted units) is replicated M times.

Each replicate draws from its own derived stream, so results do not depend on
worker count, job completion order or which arms are run.
"""

from __future__ import annotations

import csv
import io
import math
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import designs as D
from .inference import (ConvergenceError, MCMCConfig, PriorSpec, WeightedDataset, curve_from_beta,
                        curve_from_fit, fit_pseudo_posterior, weighted_mle)
from .rng import derive_seed
from .synthpop import Population, PopulationConfig, TrueModel, generate_population, population_fit_curve, quantile_grid

STUDIES = ("three_stage", "dyadic", "stratified_dyadic")
ARMS = ("equal", "inverse_probability")
SUMMARY_COLUMNS = ("study", "arm", "ladder", "x1", "mean", "bias", "mse", "log_abs_bias", "log_mse", "n_reps")
AUDIT_COLUMNS = ("study", "arm", "ladder", "replicate", "x1", "theta_hat", "theta_pop")
MAX_FAILURE_RATE = 0.05


class ExperimentFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    study: str
    ladder: tuple[int, ...]
    replicates: int
    seed: int = 0
    n_grid: int = 25
    arms: tuple[str, ...] = ARMS
    point_estimate: str = "mcmc"
    chains: int = 4
    warmup: int = 1000
    iters: int = 2000
    prior_sd: float = 5.0
    n_psu: int = 200
    hh_per_psu: int = 10
    persons_per_hh: int = 3
    hh_per_psu_selected: int = 5
    stratum_size: int = 50
    truth: TrueModel = TrueModel()
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "ladder", tuple(int(v) for v in self.ladder))
        object.__setattr__(self, "arms", tuple(self.arms))
        if self.study not in STUDIES:
            raise ValueError(f"unknown study {self.study!r}; expected one of {STUDIES}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.ladder or any(b <= a for a, b in zip(self.ladder, self.ladder[1:])):
            raise ValueError("ladder must be non-empty and strictly increasing")
        if self.point_estimate not in ("mcmc", "mle"):
            raise ValueError("point_estimate must be 'mcmc' or 'mle'")
        unknown = set(self.arms) - set(ARMS)
        if unknown:
            raise ValueError(f"unknown arms {sorted(unknown)}")


class Record(NamedTuple):
    study: str
    arm: str
    ladder: int
    replicate: int
    grid_index: int
    x1: float
    theta_hat: float
    theta_pop: float


@dataclass(frozen=True)
class CellSummary:
    study: str
    arm: str
    ladder: int
    grid_index: int
    x1: float
    n_reps: int
    mean: float | None
    bias: float | None
    mse: float | None

    @property
    def missing(self) -> bool:
        return self.n_reps == 0

    @property
    def log_abs_bias(self) -> float | None:
        return None if self.missing else _safe_log(abs(self.bias))

    @property
    def log_mse(self) -> float | None:
        return None if self.missing else _safe_log(self.mse)

    @property
    def replicate_se(self) -> float | None:
        """Standard error of the replicate mean (population variance over reps)."""
        if self.missing or self.n_reps < 2:
            return None
        var = max(self.mse - self.bias ** 2, 0.0) * self.n_reps / (self.n_reps - 1)
        return math.sqrt(var / self.n_reps)


def _safe_log(v: float) -> float:
    return -math.inf if v == 0 else math.log(v)


def replicate_reducer(records: Iterable[Record], cells: Iterable[tuple] | None = None) -> list[CellSummary]:
    """Bias and MSE per (study, arm, ladder, grid point) cell.

    Sums use ``math.fsum`` so the result does not depend on record order.
    Cells listed in ``cells`` but absent from ``records`` come back with
    ``n_reps == 0`` and no values.
    """
    groups: dict[tuple, list[Record]] = defaultdict(list)
    x_of: dict[tuple, float] = {}
    for r in records:
        key = (r.study, r.arm, r.ladder, r.grid_index)
        groups[key].append(r)
        x_of[key] = r.x1
    keys = set(groups)
    if cells is not None:
        for c in cells:
            key = tuple(c[:4])
            keys.add(key)
            x_of.setdefault(key, c[4])
    out = []
    for key in sorted(keys):
        rs = groups.get(key, [])
        k = len(rs)
        if k == 0:
            out.append(CellSummary(*key, x_of[key], 0, None, None, None))
            continue
        err = [r.theta_hat - r.theta_pop for r in rs]
        out.append(CellSummary(
            *key, x_of[key], k,
            mean=math.fsum(r.theta_hat for r in rs) / k,
            bias=math.fsum(err) / k,
            mse=math.fsum(e * e for e in err) / k,
        ))
    return out


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        if math.isinf(v):
            return "-inf" if v < 0 else "inf"
        return repr(v)
    return str(v)


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    config: ExperimentConfig
    cells: list[CellSummary]
    records: list[Record]
    grid: dict[int, np.ndarray]
    population_curve: dict[int, np.ndarray]
    failures: dict[tuple[str, int], int] = field(default_factory=dict)

    @property
    def arms(self) -> list[str]:
        return sorted({c.arm for c in self.cells})

    @property
    def median_index(self) -> int:
        return self.config.n_grid // 2

    def cell(self, arm: str, ladder: int, grid_index: int) -> CellSummary:
        for c in self.cells:
            if c.arm == arm and c.ladder == ladder and c.grid_index == grid_index:
                return c
        raise KeyError((arm, ladder, grid_index))

    def series(self, arm: str, metric: str, grid_index: int | None = None) -> list[float | None]:
        """``metric`` at one grid point (median by default) across the ladder."""
        g = self.median_index if grid_index is None else grid_index
        return [getattr(self.cell(arm, L, g), metric) for L in self.config.ladder]

    def curve(self, arm: str, ladder: int, metric: str = "mean") -> list[float | None]:
        return [getattr(self.cell(arm, ladder, g), metric) for g in range(self.config.n_grid)]

    def summary_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for c in self.cells:
            w.writerow([c.study, c.arm, c.ladder, _fmt(c.x1), _fmt(c.mean), _fmt(c.bias), _fmt(c.mse),
                        _fmt(c.log_abs_bias), _fmt(c.log_mse), c.n_reps])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def audit_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(AUDIT_COLUMNS)
        for r in sorted(self.records):
            w.writerow([r.study, r.arm, r.ladder, r.replicate, _fmt(r.x1), _fmt(r.theta_hat), _fmt(r.theta_pop)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


# --- fitting a single replicate ------------------------------------------------


def _point_curve(data: WeightedDataset, grid: np.ndarray, cfg: ExperimentConfig, mcmc_seed: int) -> np.ndarray:
    if cfg.point_estimate == "mle":
        return curve_from_beta(weighted_mle(data).beta, grid)
    mcmc = MCMCConfig(chains=cfg.chains, warmup=cfg.warmup, iters=cfg.iters, seed=mcmc_seed)
    fit = fit_pseudo_posterior(data, PriorSpec(cfg.prior_sd), mcmc)
    return curve_from_fit(fit, grid).mean


def _fit_records(pop, sample, arm, equal, study, ladder, rep, grid, theta_pop, cfg):
    data = WeightedDataset.from_sample(pop, sample, equal_weights=equal)
    seed = derive_seed(cfg.seed, "mcmc", study, ladder, rep, arm)
    theta = _point_curve(data, grid, cfg, seed)
    return [Record(study, arm, ladder, rep, g, float(grid[g]), float(theta[g]), float(theta_pop[g]))
            for g in range(len(grid))]


def _run_job(job):
    """One replicate: returns (records, failed_arm_keys). Runs in worker processes."""
    kind, pop, design, ladder, rep, arms, grid, theta_pop, cfg, study = job
    records, failed = [], []
    if kind == "fixed":
        sample = design  # a pre-built SampleDraw
    else:
        sample = D.draw(design, pop, derive_seed(cfg.seed, "design", study, ladder, rep))
    for arm, equal in arms:
        try:
            records += _fit_records(pop, sample, arm, equal, study, ladder, rep, grid, theta_pop, cfg)
        except (ConvergenceError, np.linalg.LinAlgError):
            failed.append((arm, ladder))
    return records, failed


def _workers(cfg: ExperimentConfig) -> int:
    env = os.environ.get("INFOSAMP_WORKERS")
    return max(1, int(env)) if env else max(1, cfg.workers)


def _execute(jobs, cfg):
    n = _workers(cfg)
    if n == 1 or len(jobs) == 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(n) as ex:
        return list(ex.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * n))))


def _collect(results, attempts: dict[tuple[str, int], int]):
    records, failures = [], defaultdict(int)
    for recs, failed in results:
        records += recs
        for key in failed:
            failures[key] += 1
    for key, n_fail in failures.items():
        rate = n_fail / attempts[key]
        if rate > MAX_FAILURE_RATE:
            raise ExperimentFailure(
                f"arm {key[0]!r} at ladder {key[1]}: {n_fail}/{attempts[key]} fits failed "
                f"({rate:.1%} > {MAX_FAILURE_RATE:.0%})")
    return records, dict(failures)


def _cells(study, arms, ladder, grid_of):
    return [(study, a, L, g, float(grid_of[L][g])) for a in arms for L in ladder for g in range(len(grid_of[L]))]


# --- studies --------------------------------------------------------------------


def three_stage_population(cfg: ExperimentConfig) -> Population:
    pc = PopulationConfig(cfg.n_psu, cfg.hh_per_psu, cfg.persons_per_hh)
    return generate_population(pc, cfg.truth, derive_seed(cfg.seed, "population", "three_stage"))


def run_three_stage_study(cfg: ExperimentConfig, seed: int | None = None) -> ExperimentResult:
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if cfg.study != "three_stage":
        raise ValueError("run_three_stage_study needs study='three_stage'")
    pop = three_stage_population(cfg)
    grid = quantile_grid(pop, cfg.n_grid)
    theta_pop = np.array([t for _, t in population_fit_curve(pop, grid)])
    arms = [(a, a == "equal") for a in cfg.arms]
    jobs, attempts = [], {}
    for K in cfg.ladder:
        if K > cfg.n_psu:
            raise D.DesignError(f"cannot select {K} of {cfg.n_psu} PSUs")
        design = D.three_stage_design(K, cfg.hh_per_psu_selected)
        for rep in range(cfg.replicates):
            jobs.append(("draw", pop, design, K, rep, arms, grid, theta_pop, cfg, "three_stage"))
        for a in cfg.arms:
            attempts[(a, K)] = cfg.replicates
    records, failures = _collect(_execute(jobs, cfg), attempts)
    grid_of = {K: grid for K in cfg.ladder}
    cells = replicate_reducer(records, _cells("three_stage", cfg.arms, cfg.ladder, grid_of))
    return ExperimentResult(cfg, cells, records, grid_of, {K: theta_pop for K in cfg.ladder}, failures)


def dyadic_population(cfg: ExperimentConfig, N: int) -> Population:
    return generate_population(PopulationConfig(N=N), cfg.truth, derive_seed(cfg.seed, "population", "dyadic", N))


def run_dyadic_study(cfg: ExperimentConfig, seed: int | None = None) -> ExperimentResult:
    """Unstratified arms ``partition_high``/``partition_low`` and the replicated ``stratified`` arm.

    Dyadic designs give every unit pi = 1/2, so weighted and equal-weight fits
    coincide; each sample is fitted once.
    """
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if cfg.study not in ("dyadic", "stratified_dyadic"):
        raise ValueError("run_dyadic_study needs study='dyadic' or 'stratified_dyadic'")
    study = cfg.study
    jobs, attempts, grid_of, curves = [], {}, {}, {}
    arm_names = ["stratified"] if study == "stratified_dyadic" else ["partition_high", "partition_low", "stratified"]
    for N in cfg.ladder:
        pop = dyadic_population(cfg, N)
        grid = quantile_grid(pop, cfg.n_grid)
        theta_pop = np.array([t for _, t in population_fit_curve(pop, grid)])
        grid_of[N], curves[N] = grid, theta_pop
        if study == "dyadic":
            high, low = D.dyadic_outcomes(pop)
            for arm, sample in (("partition_high", high), ("partition_low", low)):
                jobs.append(("fixed", pop, sample, N, 0, [(arm, False)], grid, theta_pop, cfg, study))
                attempts[(arm, N)] = 1
        design = D.StratifiedDyadic(stratum_size=cfg.stratum_size)
        for rep in range(cfg.replicates):
            jobs.append(("draw", pop, design, N, rep, [("stratified", False)], grid, theta_pop, cfg, study))
        attempts[("stratified", N)] = cfg.replicates
    records, failures = _collect(_execute(jobs, cfg), attempts)
    cells = replicate_reducer(records, _cells(study, arm_names, cfg.ladder, grid_of))
    return ExperimentResult(cfg, cells, records, grid_of, curves, failures)


def run_study(cfg: ExperimentConfig) -> ExperimentResult:
    if cfg.study == "three_stage":
        return run_three_stage_study(cfg)
    return run_dyadic_study(cfg)
