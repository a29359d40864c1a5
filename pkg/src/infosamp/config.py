"""Run configuration: one YAML file with command-scoped sections.

Unknown keys anywhere are an error. ``resolve`` fills defaults and returns a
plain dict that is written next to every command's outputs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from . import designs as D
from .synthpop import PopulationConfig, TrueModel


class ConfigError(ValueError):
    pass


@dataclass
class TruthSection:
    beta0: float = -1.88
    beta_x1: float = 1.0
    beta_x2: float = 0.5
    x2_rate: float = 0.2


@dataclass
class PopulationSection:
    n_psu: int | None = None
    hh_per_psu: int | None = None
    persons_per_hh: int | None = None
    N: int | None = None
    csv: str | None = None
    truth: TruthSection = field(default_factory=TruthSection)


@dataclass
class StageSection:
    level: str = "unit"
    type: str = "census"
    n: int | None = None
    sort_field: str = "size"
    size_field: str = "size"


@dataclass
class DesignSection:
    type: str = "census"
    n: int | None = None
    K: int | None = None
    hh_per_psu_selected: int = 5
    stratum_size: int | None = None
    n_strata: int | None = None
    sort_field: str = "size"
    size_field: str = "size"
    group_field: str = "hh"
    stages: list = field(default_factory=list)


@dataclass
class InclusionSection:
    method: str = "exact"
    replicates: int = 100_000
    epsilon: float | None = None
    blocks: str | None = None


@dataclass
class DiagnoseSection:
    N_ladder: list = field(default_factory=list)
    strata_ladder: list = field(default_factory=list)
    block: str | None = None
    dense_psus: list = field(default_factory=list)
    growth_tol: float = 0.1


@dataclass
class FitSection:
    sample_csv: str | None = None
    equal_weights: bool = False
    prior_sd: float = 5.0
    chains: int = 4
    warmup: int = 1000
    iters: int = 2000
    n_grid: int = 25


@dataclass
class ExperimentSection:
    study: str = "three_stage"
    ladder: list = field(default_factory=lambda: [10, 20, 40, 80, 160])
    replicates: int = 200
    n_grid: int = 25
    arms: list = field(default_factory=lambda: ["equal", "inverse_probability"])
    point_estimate: str = "mcmc"
    chains: int = 4
    warmup: int = 1000
    iters: int = 2000
    prior_sd: float = 5.0
    hh_per_psu_selected: int = 5
    stratum_size: int = 50
    workers: int = 1


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "out"
    verbosity: int = 1
    population: PopulationSection | None = None
    design: DesignSection | None = None
    inclusion: InclusionSection = field(default_factory=InclusionSection)
    diagnose: DiagnoseSection = field(default_factory=DiagnoseSection)
    fit: FitSection = field(default_factory=FitSection)
    experiment: ExperimentSection | None = None


_SECTIONS = {
    "population": PopulationSection, "design": DesignSection, "inclusion": InclusionSection,
    "diagnose": DiagnoseSection, "fit": FitSection, "experiment": ExperimentSection,
    "truth": TruthSection,
}


_SCALARS = {"int": int, "float": float, "bool": bool, "str": str, "list": list}


def _coerce(value, annotation: str, where):
    """Check ``value`` against a field annotation such as ``int | None``."""
    names = [t.strip() for t in annotation.split("|")]
    if value is None:
        if "None" in names:
            return None
        raise ConfigError(f"{where}: value required")
    base = _SCALARS.get(names[0])
    if base is None:
        return value
    if base is bool:
        ok = isinstance(value, bool)
    elif base is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif base is float:
        if isinstance(value, str):  # YAML 1.1 reads 1e-6 as a string
            try:
                value = float(value)
            except ValueError:
                pass
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    else:
        ok = isinstance(value, base)
    if not ok:
        raise ConfigError(f"{where}: expected {names[0]}, got {value!r}")
    return value


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in data:
            continue
        value = data[name]
        if name in _SECTIONS and value is not None:
            kwargs[name] = _build(_SECTIONS[name], value, f"{where}.{name}" if where else name)
            continue
        kwargs[name] = _coerce(value, f.type, f"{where}.{name}" if where else name)
    return cls(**kwargs)


def parse_config(data: dict) -> RunConfig:
    return _build(RunConfig, data or {}, "")


def load_config(path: str | Path, overrides: list[str] = ()) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from None
    for item in overrides:
        apply_override(data, item)
    return parse_config(data)


def apply_override(data: dict, item: str) -> None:
    """Apply ``section.key=value`` (value parsed as YAML scalar) in place."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    path, raw = item.split("=", 1)
    keys = path.strip().split(".")
    value = yaml.safe_load(raw)
    if isinstance(value, (dict, list)):
        raise ConfigError(f"override {item!r}: only scalar values can be overridden")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {item!r}: {k} is not a section")
    node[keys[-1]] = value


def resolve(cfg: RunConfig) -> dict:
    return asdict(cfg)


def dump_resolved(cfg: RunConfig, path: Path) -> None:
    path.write_text(yaml.safe_dump(resolve(cfg), sort_keys=True))


# --- translating sections into library objects ------------------------------------


def require(cfg: RunConfig, *names: str):
    for name in names:
        if getattr(cfg, name) is None:
            raise ConfigError(f"missing required section {name!r}")


def truth_of(sec: PopulationSection) -> TrueModel:
    t = sec.truth
    return TrueModel(t.beta0, t.beta_x1, t.beta_x2, t.x2_rate)


def population_config(sec: PopulationSection) -> PopulationConfig:
    try:
        return PopulationConfig(sec.n_psu, sec.hh_per_psu, sec.persons_per_hh, sec.N)
    except ValueError as e:
        raise ConfigError(f"population: {e}") from None


def _need_n(sec, where):
    if sec.n is None:
        raise ConfigError(f"{where}: design type {sec.type!r} needs n")
    return sec.n


def _single(sec, where) -> D.DesignSpec:
    t = sec.type
    if t == "census":
        return D.Census()
    if t == "srs":
        return D.SRS(_need_n(sec, where))
    if t == "brewer_pps":
        return D.BrewerPPS(_need_n(sec, where), sec.size_field)
    if t == "systematic":
        return D.SystematicEqual(_need_n(sec, where), sec.sort_field)
    if t == "systematic_pps":
        return D.SystematicPPS(_need_n(sec, where), sec.size_field, sec.sort_field)
    if t == "one_pps_per_group":
        return D.OnePPSPerGroup(getattr(sec, "group_field", "hh"), sec.size_field)
    raise ConfigError(f"{where}: unknown design type {t!r}")


def design_of(sec: DesignSection) -> D.DesignSpec:
    try:
        t = sec.type
        if t == "three_stage":
            if sec.K is None:
                raise ConfigError("design: three_stage needs K (number of PSUs)")
            return D.three_stage_design(sec.K, sec.hh_per_psu_selected)
        if t == "dyadic":
            return D.DyadicPartition(sec.sort_field)
        if t == "stratified_dyadic":
            return D.StratifiedDyadic(sec.sort_field, sec.stratum_size, sec.n_strata)
        if t == "multistage":
            if not sec.stages:
                raise ConfigError("design: multistage needs a non-empty stages list")
            stages = []
            for k, raw in enumerate(sec.stages):
                st = _build(StageSection, raw, f"design.stages[{k}]")
                stages.append(D.Stage(st.level, _single(st, f"design.stages[{k}]")))
            return D.Multistage(tuple(stages))
        return _single(sec, "design")
    except D.DesignError as e:
        raise ConfigError(f"design: {e}") from None
