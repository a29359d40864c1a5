"""Command-line front end.

    infosamp <command> CONFIG.yaml [--set section.key=value ...] [--seed S] [--output-dir DIR]

Exit codes:
    0  success
    2  configuration error (nothing is written)
    3  numerical failure (fit did not converge, too many failed replicates)
    4  condition-check failure (zero inclusion probability, growth scan FAIL);
       outputs are written before exiting
    5  input/output error
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as C
from . import designs as D
from . import inclusion as I
from .experiments import ExperimentConfig, ExperimentFailure, run_study
from .inference import (ConvergenceError, MCMCConfig, PriorSpec, WeightedDataset, curve_from_fit,
                        fit_pseudo_posterior)
from .rng import derive_seed
from .synthpop import PopulationConfig, Population, generate_population, quantile_grid, read_population_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CONDITION = 4
EXIT_IO = 5

COMMANDS = ("population", "sample", "inclusion", "diagnose", "fit", "experiment")

log = logging.getLogger("infosamp")


class ConditionFailure(RuntimeError):
    pass


# --- shared plumbing ------------------------------------------------------------


def _population(cfg: C.RunConfig) -> Population:
    C.require(cfg, "population")
    sec = cfg.population
    truth = C.truth_of(sec)
    if sec.csv:
        return read_population_csv(sec.csv, truth)
    return generate_population(C.population_config(sec), truth, cfg.seed)


def _check_population(cfg: C.RunConfig):
    C.require(cfg, "population")
    if not cfg.population.csv:
        C.population_config(cfg.population)


def _design(cfg: C.RunConfig) -> D.DesignSpec:
    C.require(cfg, "design")
    return C.design_of(cfg.design)


def _check_inclusion(sec: C.InclusionSection):
    if sec.method not in ("exact", "monte_carlo"):
        raise C.ConfigError(f"inclusion.method must be exact or monte_carlo, got {sec.method!r}")
    if sec.replicates < 1:
        raise C.ConfigError("inclusion.replicates must be >= 1")
    if sec.blocks not in (None, "psu", "hh"):
        raise C.ConfigError("inclusion.blocks must be psu, hh or null")


def _table(cfg: C.RunConfig, design, pop) -> I.InclusionTable:
    sec = cfg.inclusion
    if sec.method == "exact":
        return I.exact_inclusion(design, pop)
    blocks = pop.column(sec.blocks) if sec.blocks else None
    return I.monte_carlo_inclusion(design, pop, sec.replicates, derive_seed(cfg.seed, "inclusion"), blocks=blocks)


def _fmt(v) -> str:
    return repr(float(v))


def _write_pi(tab: I.InclusionTable, path: Path):
    lines = ["index,pi,se"]
    se = tab.pi_se if tab.pi_se is not None else np.zeros(tab.N)
    lines += [f"{i},{_fmt(p)},{_fmt(s)}" for i, (p, s) in enumerate(zip(tab.pi, se))]
    path.write_text("\n".join(lines) + "\n")


def _write_pairs(tab: I.InclusionTable, path: Path):
    lines = ["i,j,pi_ij,se"]
    se = tab.pair_se if tab.pair_se is not None else np.zeros(tab.n_stored)
    lines += [f"{i},{j},{_fmt(v)},{_fmt(s)}" for i, j, v, s in zip(tab.rows, tab.cols, tab.values, se)]
    path.write_text("\n".join(lines) + "\n")


# --- commands ---------------------------------------------------------------------


def cmd_population(cfg: C.RunConfig, out: Path | None):
    if out is None:
        _check_population(cfg)
        return
    pop = _population(cfg)
    pop.to_csv(out / "population.csv")
    print(f"population: N={pop.N} mean(y)={pop.y.mean():.6f} -> {out / 'population.csv'}")


def cmd_sample(cfg: C.RunConfig, out: Path | None):
    if out is None:
        _check_population(cfg)
        _design(cfg)
        return
    pop, design = _population(cfg), _design(cfg)
    s = D.draw(design, pop, derive_seed(cfg.seed, "sample"))
    s.to_csv(out / "sample.csv")
    print(f"sample: n={s.n} of N={pop.N}, sum of weights={s.weights.sum():.6f} -> {out / 'sample.csv'}")


def cmd_inclusion(cfg: C.RunConfig, out: Path | None):
    if out is None:
        _check_population(cfg)
        _design(cfg)
        _check_inclusion(cfg.inclusion)
        return
    pop, design = _population(cfg), _design(cfg)
    tab = _table(cfg, design, pop)
    _write_pi(tab, out / "inclusion_pi.csv")
    _write_pairs(tab, out / "inclusion_pairs.csv")
    for note in tab.notes:
        print(f"note: {note}")
    print(f"inclusion: {tab.method}, N={tab.N}, sum(pi)={tab.pi.sum():.6f}, stored pairs={tab.n_stored}, "
          f"unstored pairs {tab.unstored}")


def _check_diagnose(cfg: C.RunConfig):
    _check_population(cfg)
    _check_inclusion(cfg.inclusion)
    sec = cfg.diagnose
    if sec.block not in (None, "psu", "hh"):
        raise C.ConfigError("diagnose.block must be psu, hh or null")
    if sec.N_ladder:
        if len(sec.N_ladder) < 3 or any(not isinstance(n, int) or n < 2 for n in sec.N_ladder):
            raise C.ConfigError("diagnose.N_ladder needs at least 3 integer sizes")
        if cfg.population.csv or cfg.population.N is None:
            raise C.ConfigError("diagnose.N_ladder needs a flat generated population (population.N)")
    if any(not isinstance(k, int) or k < 0 for k in sec.strata_ladder):
        raise C.ConfigError("diagnose.strata_ladder must hold non-negative integers")
    if not sec.strata_ladder:
        _design(cfg)


def _block_labels(cfg: C.RunConfig, design, pop):
    if cfg.diagnose.block:
        return pop.column(cfg.diagnose.block)
    if isinstance(design, D.Multistage):
        return pop.column(design.stages[0].level) if design.stages[0].level != "unit" else None
    return None


def _diagnose_one(cfg, design, pop, out: Path, stem: str, dense_limit: int = I.DENSE_LIMIT):
    tab = _table(cfg, design, pop)
    dev = I.deviation_matrix(tab, cfg.inclusion.epsilon)
    dev.to_triplet_csv(out / f"{stem}.csv")
    units = None
    if cfg.diagnose.dense_psus:
        units = np.flatnonzero(np.isin(pop.psu, cfg.diagnose.dense_psus))
    if units is not None or pop.N <= dense_limit:
        dev.to_dense_csv(out / f"{stem}_dense.csv", units=units)
        dev.to_dense_csv(out / f"{stem}_magnitude.csv", units=units, kind="magnitude")
        dev.to_dense_csv(out / f"{stem}_sign.csv", units=units, kind="sign")
    return tab, dev


def cmd_diagnose(cfg: C.RunConfig, out: Path | None):
    if out is None:
        _check_diagnose(cfg)
        return
    sec = cfg.diagnose
    pop = _population(cfg)
    failed = []
    try:
        if sec.strata_ladder:
            rows = ["n_strata,s1_size,s1_ratio,scaled_s2_max_dev,gamma"]
            sort_field = cfg.design.sort_field if cfg.design else "size"
            for k in sec.strata_ladder:
                design = D.StratifiedDyadic(sort_field, n_strata=k)
                tab, dev = _diagnose_one(cfg, design, pop, out, f"deviations_strata_{k}")
                rep = I.condition_report(dev, tab)
                rows.append(f"{k},{rep.s1_size},{_fmt(rep.s1_ratio)},{_fmt(rep.scaled_s2_max_dev)},"
                            f"{_fmt(rep.gamma)}")
                print(f"strata={k}: |S1|={rep.s1_size} |S1|/N={rep.s1_ratio:.6g}")
            (out / "strata_ladder.csv").write_text("\n".join(rows) + "\n")
        else:
            design = _design(cfg)
            tab, dev = _diagnose_one(cfg, design, pop, out, "deviations")
            rep = I.condition_report(dev, tab, block_hint=_block_labels(cfg, design, pop))
            text = rep.to_text() + "".join(f"note: {n}\n" for n in tab.notes)
            (out / "condition_report.txt").write_text(text)
            print(text, end="")
        if sec.N_ladder:
            base = cfg.population
            truth = C.truth_of(base)

            def family(N):
                p = generate_population(PopulationConfig(N=N), truth, derive_seed(cfg.seed, "growth", N))
                return _design(cfg), p

            table = (I.exact_inclusion if cfg.inclusion.method == "exact" else
                     lambda d, p: I.monte_carlo_inclusion(d, p, cfg.inclusion.replicates,
                                                          derive_seed(cfg.seed, "growth-mc", p.N)))
            scan = I.condition_growth_scan(family, sec.N_ladder, cfg.inclusion.epsilon, sec.growth_tol, table)
            scan.to_csv(out / "growth_scan.csv")
            (out / "growth_verdict.txt").write_text(f"{scan.verdict}: {scan.reason}\n")
            print(f"growth scan: {scan.verdict}: {scan.reason}")
            if scan.verdict == "FAIL":
                failed.append(f"growth scan FAIL: {scan.reason}")
    except I.A4Violation as e:
        (out / "condition_report.txt").write_text(f"verdict.A4: FAIL (design defect: {e})\n")
        raise ConditionFailure(f"design defect, A4 violated: {e}") from None
    if failed:
        raise ConditionFailure("; ".join(failed))


def _check_fit(cfg: C.RunConfig):
    _check_population(cfg)
    sec = cfg.fit
    if not sec.sample_csv:
        _design(cfg)
    if sec.chains < 2 or sec.iters < 4 or sec.warmup < 0 or sec.prior_sd <= 0:
        raise C.ConfigError("fit: need chains >= 2, iters >= 4, warmup >= 0, prior_sd > 0")


def cmd_fit(cfg: C.RunConfig, out: Path | None):
    if out is None:
        _check_fit(cfg)
        return
    sec = cfg.fit
    pop = _population(cfg)
    if sec.sample_csv:
        sample = D.read_sample_csv(sec.sample_csv)
        if sample.N != pop.N:
            raise C.ConfigError(f"sample has N={sample.N} but population has N={pop.N}")
    else:
        sample = D.draw(_design(cfg), pop, derive_seed(cfg.seed, "sample"))
    data = WeightedDataset.from_sample(pop, sample, equal_weights=sec.equal_weights)
    mcmc = MCMCConfig(chains=sec.chains, warmup=sec.warmup, iters=sec.iters, seed=derive_seed(cfg.seed, "fit"))
    fit = fit_pseudo_posterior(data, PriorSpec(sec.prior_sd), mcmc)
    fit.draws_csv(out / "draws.csv")
    curve_from_fit(fit, quantile_grid(pop, sec.n_grid)).to_csv(out / "curve.csv")
    text = fit.summary()
    (out / "fit_summary.txt").write_text(text)
    print(text, end="")


def experiment_config(cfg: C.RunConfig) -> ExperimentConfig:
    C.require(cfg, "experiment")
    e = cfg.experiment
    kw = {}
    if cfg.population is not None:
        p = cfg.population
        kw = {k: getattr(p, k) for k in ("n_psu", "hh_per_psu", "persons_per_hh") if getattr(p, k) is not None}
        kw["truth"] = C.truth_of(p)
    try:
        return ExperimentConfig(
            study=e.study, ladder=tuple(e.ladder), replicates=e.replicates, seed=cfg.seed, n_grid=e.n_grid,
            arms=tuple(e.arms), point_estimate=e.point_estimate, chains=e.chains, warmup=e.warmup,
            iters=e.iters, prior_sd=e.prior_sd, hh_per_psu_selected=e.hh_per_psu_selected,
            stratum_size=e.stratum_size, workers=e.workers, **kw)
    except (TypeError, ValueError) as err:
        raise C.ConfigError(f"experiment: {err}") from None


def cmd_experiment(cfg: C.RunConfig, out: Path | None):
    ecfg = experiment_config(cfg)
    if out is None:
        return
    res = run_study(ecfg)
    res.summary_csv(out / "summary.csv")
    res.audit_csv(out / "audit.csv")
    lines = [f"study: {ecfg.study}  replicates: {ecfg.replicates}  point estimate: {ecfg.point_estimate}"]
    for arm in sorted({c.arm for c in res.cells}):
        mse = res.series(arm, "mse")
        bias = res.series(arm, "bias")
        for L, m, b in zip(ecfg.ladder, mse, bias):
            ms = "NA" if m is None else f"{m:.6g}"
            bs = "NA" if b is None else f"{b:.6g}"
            lines.append(f"{arm:<22} ladder={L:<6} median-grid bias={bs:<14} mse={ms}")
    for (arm, L), n in sorted(res.failures.items()):
        lines.append(f"excluded: {n} failed fits in arm {arm} at ladder {L}")
    text = "\n".join(lines) + "\n"
    (out / "experiment_summary.txt").write_text(text)
    print(text, end="")


HANDLERS = {
    "population": cmd_population, "sample": cmd_sample, "inclusion": cmd_inclusion,
    "diagnose": cmd_diagnose, "fit": cmd_fit, "experiment": cmd_experiment,
}


# --- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="infosamp", description=__doc__.split("\n\n")[0].strip(),
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="exit codes: 0 ok, 2 config error, 3 numerical failure, "
                                       "4 condition-check failure, 5 I/O error")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=HANDLERS[name].__name__.replace("cmd_", "") + " command")
        s.add_argument("config", help="YAML run configuration")
        s.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a scalar config key (repeatable)")
        s.add_argument("--seed", type=int, help="master seed (overrides config)")
        s.add_argument("--output-dir", help="output directory (overrides config)")
        s.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = HANDLERS[args.command]
    if not Path(args.config).is_file():
        print(f"I/O error: config file {args.config} not found", file=sys.stderr)
        return EXIT_IO
    try:
        cfg = C.load_config(args.config, args.overrides)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.output_dir is not None:
            cfg = replace(cfg, output_dir=args.output_dir)
        logging.basicConfig(level=logging.WARNING - 10 * (cfg.verbosity + args.verbose - 1),
                            format="%(levelname)s %(name)s: %(message)s")
        handler(cfg, None)  # validate before anything touches the disk
    except C.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        C.dump_resolved(cfg, out / "resolved_config.yaml")
        handler(cfg, out)
    except C.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConditionFailure as e:
        print(f"condition check failed: {e}", file=sys.stderr)
        return EXIT_CONDITION
    except I.A4Violation as e:
        print(f"condition check failed (design defect): {e}", file=sys.stderr)
        return EXIT_CONDITION
    except (ConvergenceError, ExperimentFailure, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except D.DesignError as e:
        print(f"design error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        # malformed input files (CSV schema, sizes) surface here
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
