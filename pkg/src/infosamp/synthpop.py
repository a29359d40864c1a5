"""Synthetic finite populations with a Bernoulli-logit outcome.

Each person carries a standard-normal covariate ``x1`` (seen by the analyst)
and an exponential covariate ``x2`` (seen only by the sampler). The outcome is
``y ~ Bernoulli(expit(beta0 + beta_x1*x1 + beta_x2*x2))`` and the selection
size measure is ``size = x2 - min(x2) + 1``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .rng import stream

FIELDS = ("index", "psu", "hh", "x1", "x2", "size", "y")


def expit(mu):
    """Logistic CDF, 1 / (1 + exp(-mu)); saturates without overflow."""
    mu = np.asarray(mu, dtype=float)
    out = np.empty_like(mu)
    pos = mu >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-mu[pos]))
    e = np.exp(mu[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class TrueModel:
    beta0: float = -1.88
    beta_x1: float = 1.0
    beta_x2: float = 0.5
    x2_rate: float = 0.2

    def linear_predictor(self, x1, x2):
        return self.beta0 + self.beta_x1 * np.asarray(x1) + self.beta_x2 * np.asarray(x2)


@dataclass(frozen=True)
class PopulationConfig:
    """Either a nested PSU/HH/person layout or a flat population of size ``N``."""

    n_psu: int | None = None
    hh_per_psu: int | None = None
    persons_per_hh: int | None = None
    N: int | None = None

    def __post_init__(self):
        nested = (self.n_psu, self.hh_per_psu, self.persons_per_hh)
        if self.N is not None:
            if any(v is not None for v in nested):
                raise ValueError("give either N (flat) or the nested counts, not both")
            if self.N < 1:
                raise ValueError(f"N must be >= 1, got {self.N}")
        else:
            if any(v is None for v in nested):
                raise ValueError("nested config needs n_psu, hh_per_psu and persons_per_hh")
            if min(nested) < 1:
                raise ValueError(f"all counts must be >= 1, got {nested}")

    @property
    def structure(self) -> tuple[int, int, int] | None:
        if self.N is not None:
            return None
        return (self.n_psu, self.hh_per_psu, self.persons_per_hh)

    @property
    def size(self) -> int:
        if self.N is not None:
            return self.N
        return self.n_psu * self.hh_per_psu * self.persons_per_hh


class Unit(NamedTuple):
    index: int
    psu: int
    hh: int
    x1: float
    x2: float
    size: float
    y: int


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Population:
    """Column store of one finite population; arrays are read-only.

    ``hh`` labels are global (unique across PSUs). Flat populations give every
    unit its own PSU and HH label, equal to its index.
    """

    x1: np.ndarray
    x2: np.ndarray
    y: np.ndarray
    psu: np.ndarray
    hh: np.ndarray
    truth: TrueModel | None = None
    seed: int | None = None
    structure: tuple[int, int, int] | None = None
    size: np.ndarray = field(init=False)
    index: np.ndarray = field(init=False)

    def __post_init__(self):
        n = len(self.x1)
        for name in ("x2", "y", "psu", "hh"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has wrong length")
        if n == 0:
            raise ValueError("empty population")
        object.__setattr__(self, "x1", _frozen(np.asarray(self.x1, dtype=float)))
        object.__setattr__(self, "x2", _frozen(np.asarray(self.x2, dtype=float)))
        object.__setattr__(self, "y", _frozen(np.asarray(self.y, dtype=np.int8)))
        object.__setattr__(self, "psu", _frozen(np.asarray(self.psu, dtype=np.int64)))
        object.__setattr__(self, "hh", _frozen(np.asarray(self.hh, dtype=np.int64)))
        object.__setattr__(self, "size", _frozen(self.x2 - self.x2.min() + 1.0))
        object.__setattr__(self, "index", _frozen(np.arange(n, dtype=np.int64)))

    @property
    def N(self) -> int:
        return len(self.x1)

    def __len__(self) -> int:
        return self.N

    def column(self, name: str) -> np.ndarray:
        if name not in FIELDS:
            raise KeyError(f"unknown population field {name!r}; expected one of {FIELDS}")
        return getattr(self, name)

    @property
    def units(self) -> list[Unit]:
        return list(self.iter_units())

    def iter_units(self) -> Iterator[Unit]:
        for i in range(self.N):
            yield Unit(i, int(self.psu[i]), int(self.hh[i]), float(self.x1[i]),
                       float(self.x2[i]), float(self.size[i]), int(self.y[i]))

    def to_csv(self, path: str | Path | None = None) -> str:
        """Write ``index,psu,hh,x1,x2,size,y``; floats use shortest round-trip repr."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FIELDS)
        for u in self.iter_units():
            w.writerow([u.index, u.psu, u.hh, repr(u.x1), repr(u.x2), repr(u.size), u.y])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def generate_population(config: PopulationConfig, truth: TrueModel = TrueModel(), seed: int = 0) -> Population:
    """Draw one population. Same (config, truth, seed) gives identical arrays."""
    if seed is None:
        raise ValueError("seed is required")
    N = config.size
    rng = stream(seed, "population")
    x1 = rng.standard_normal(N)
    x2 = rng.exponential(1.0 / truth.x2_rate, N)
    prob = expit(truth.linear_predictor(x1, x2))
    y = (rng.random(N) < prob).astype(np.int8)
    if config.structure is None:
        psu = hh = np.arange(N)
    else:
        n_psu, n_hh, n_per = config.structure
        person = np.arange(N)
        hh = person // n_per
        psu = hh // n_hh
    return Population(x1=x1, x2=x2, y=y, psu=psu, hh=hh, truth=truth, seed=seed,
                      structure=config.structure)


def read_population_csv(path: str | Path, truth: TrueModel | None = None) -> Population:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no rows")
    missing = set(FIELDS) - set(rows[0])
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    idx = np.array([int(r["index"]) for r in rows])
    if not np.array_equal(idx, np.arange(len(rows))):
        raise ValueError(f"{path}: index column must be 0..N-1 in order")
    pop = Population(
        x1=np.array([float(r["x1"]) for r in rows]),
        x2=np.array([float(r["x2"]) for r in rows]),
        y=np.array([int(r["y"]) for r in rows]),
        psu=np.array([int(r["psu"]) for r in rows]),
        hh=np.array([int(r["hh"]) for r in rows]),
        truth=truth,
        structure=_infer_structure(rows),
    )
    return pop


def _infer_structure(rows) -> tuple[int, int, int] | None:
    psu = np.array([int(r["psu"]) for r in rows])
    hh = np.array([int(r["hh"]) for r in rows])
    N = len(rows)
    if np.array_equal(psu, np.arange(N)) and np.array_equal(hh, np.arange(N)):
        return None
    n_psu = len(np.unique(psu))
    n_hh = len(np.unique(hh))
    if N % n_hh or n_hh % n_psu:
        return None
    per, hpp = N // n_hh, n_hh // n_psu
    expect_hh = np.arange(N) // per
    if np.array_equal(hh, expect_hh) and np.array_equal(psu, expect_hh // hpp):
        return (n_psu, hpp, per)
    return None


def population_fit_curve(pop: Population, grid: Sequence[float]) -> list[tuple[float, float]]:
    """Population-level fit of the marginal model ``theta = expit(a + b*x1)``.

    Unweighted maximum likelihood over every unit; this is the reference curve
    the sample-based estimates are scored against.
    """
    from .inference import WeightedDataset, weighted_mle

    data = WeightedDataset.from_arrays(pop.y, pop.x1, np.ones(pop.N))
    mle = weighted_mle(data)
    grid = np.asarray(grid, dtype=float)
    theta = expit(mle.beta[0] + mle.beta[1] * grid)
    return [(float(g), float(t)) for g, t in zip(grid, theta)]


def quantile_grid(pop: Population, n_points: int = 25) -> np.ndarray:
    """``n_points`` x1 quantiles at equally spaced levels (k + 1/2)/n_points."""
    levels = (np.arange(n_points) + 0.5) / n_points
    return np.quantile(pop.x1, levels)
