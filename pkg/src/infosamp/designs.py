"""Sampling designs.

Every design is a frozen dataclass. Three things can be asked of a design:

* ``draw(design, pop, seed)`` -- one realized sample as a :class:`SampleDraw`;
* ``draw_indicators(design, pop, R, seed)`` -- an ``(R, N)`` boolean matrix of
  independent replicates (vectorized over replicates; ``draw`` is ``R = 1``);
* ``first_order_inclusion(design, pop)`` -- analytic first-order probabilities.

Exact second-order probabilities live in :mod:`infosamp.inclusion`, built on
:func:`group_inclusion`, which enumerates the outcome space of a single-stage
design applied to one group of units.

Sorting always breaks ties by ascending unit position.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .rng import as_generator
from .synthpop import Population


class DesignError(ValueError):
    """Design parameters incompatible with the population."""


class NotEnumerableError(DesignError):
    """Exact enumeration is not available for this design / size."""


# --- design specs -----------------------------------------------------------


def _check_n(n):
    if int(n) != n or n < 1:
        raise DesignError(f"sample size must be a positive integer, got {n!r}")


@dataclass(frozen=True)
class Census:
    pass


@dataclass(frozen=True)
class SRS:
    n: int

    def __post_init__(self):
        _check_n(self.n)


@dataclass(frozen=True)
class BrewerPPS:
    n: int
    size_field: str = "size"

    def __post_init__(self):
        _check_n(self.n)


@dataclass(frozen=True)
class SystematicEqual:
    n: int
    sort_field: str = "size"

    def __post_init__(self):
        _check_n(self.n)


@dataclass(frozen=True)
class SystematicPPS:
    n: int
    size_field: str = "size"
    sort_field: str = "size"

    def __post_init__(self):
        _check_n(self.n)


@dataclass(frozen=True)
class OnePPSPerGroup:
    """One unit per group, drawn proportional to size.

    Used as a stage of a :class:`Multistage` design, the grouping comes from
    the stage structure and ``group_field`` is ignored.
    """

    group_field: str = "hh"
    size_field: str = "size"


@dataclass(frozen=True)
class DyadicPartition:
    sort_field: str = "size"


@dataclass(frozen=True)
class StratifiedDyadic:
    """Dyadic partition applied within consecutive blocks of the sorted order.

    Give ``stratum_size`` (the last stratum may be short) or ``n_strata``
    (must split N into equal even blocks). ``n_strata`` of 0 or 1 is the
    unstratified design.
    """

    sort_field: str = "size"
    stratum_size: int | None = None
    n_strata: int | None = None

    def __post_init__(self):
        if (self.stratum_size is None) == (self.n_strata is None):
            raise DesignError("give exactly one of stratum_size, n_strata")
        if self.stratum_size is not None and (self.stratum_size < 2 or self.stratum_size % 2):
            raise DesignError(f"stratum_size must be even and >= 2, got {self.stratum_size}")
        if self.n_strata is not None and self.n_strata < 0:
            raise DesignError("n_strata must be >= 0")


LEVELS = ("psu", "hh", "unit")


@dataclass(frozen=True)
class Stage:
    """Select ``level`` groups within each selected parent using ``design``."""

    level: str
    design: "StageDesign"

    def __post_init__(self):
        if self.level not in LEVELS:
            raise DesignError(f"unknown level {self.level!r}; expected one of {LEVELS}")
        if not isinstance(self.design, STAGE_DESIGNS):
            raise DesignError(f"{type(self.design).__name__} cannot be used as a stage design")


@dataclass(frozen=True)
class Multistage:
    stages: tuple[Stage, ...]

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise DesignError("multistage design needs at least one stage")
        depth = [LEVELS.index(s.level) for s in self.stages]
        if any(b <= a for a, b in zip(depth, depth[1:])):
            raise DesignError("stage levels must be strictly nested (psu > hh > unit)")


StageDesign = Union[Census, SRS, BrewerPPS, SystematicEqual, SystematicPPS, OnePPSPerGroup]
STAGE_DESIGNS = (Census, SRS, BrewerPPS, SystematicEqual, SystematicPPS, OnePPSPerGroup)
DesignSpec = Union[StageDesign, DyadicPartition, StratifiedDyadic, Multistage]


def three_stage_design(n_psu_selected: int, hh_per_psu_selected: int = 5) -> Multistage:
    """PSUs by Brewer PPS, HHs systematically on sorted aggregate size, one person PPS."""
    return Multistage((
        Stage("psu", BrewerPPS(n_psu_selected)),
        Stage("hh", SystematicEqual(hh_per_psu_selected)),
        Stage("unit", OnePPSPerGroup()),
    ))


# --- samples ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SampleDraw:
    """One realized sample: selected unit indices with their ``pi`` and ``1/pi`` weights."""

    N: int
    index: np.ndarray
    pi: np.ndarray
    design: DesignSpec | None = None
    seed: int | None = None
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        idx = np.asarray(self.index, dtype=np.int64)
        order = np.argsort(idx)
        idx, pi = idx[order], np.asarray(self.pi, dtype=float)[order]
        if len(np.unique(idx)) != len(idx):
            raise ValueError("duplicate units in sample")
        if np.any(pi <= 0) or np.any(pi > 1 + 1e-12):
            raise ValueError("inclusion probabilities must lie in (0, 1]")
        for name, arr in (("index", idx), ("pi", pi), ("weights", 1.0 / pi)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.index)

    @property
    def indicators(self) -> np.ndarray:
        d = np.zeros(self.N, dtype=bool)
        d[self.index] = True
        return d

    def to_csv(self, path: str | Path | None = None) -> str:
        """``index,delta,weight`` for every unit; weight is blank when delta = 0."""
        w = dict(zip(self.index.tolist(), self.weights.tolist()))
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(("index", "delta", "weight"))
        for i in range(self.N):
            out.writerow((i, 1, repr(w[i])) if i in w else (i, 0, ""))
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def read_sample_csv(path: str | Path) -> SampleDraw:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"index", "delta", "weight"}:
        raise ValueError(f"{path}: expected columns index,delta,weight")
    sel = [(int(r["index"]), float(r["weight"])) for r in rows if r["delta"] == "1"]
    idx = np.array([s[0] for s in sel], dtype=np.int64)
    w = np.array([s[1] for s in sel])
    return SampleDraw(N=len(rows), index=idx, pi=1.0 / w)


# --- single-group primitives --------------------------------------------------


def _sort_order(keys: np.ndarray) -> np.ndarray:
    return np.lexsort((np.arange(len(keys)), np.asarray(keys)))


def brewer_pps_inclusion(sizes, n: int) -> np.ndarray:
    """Capped PPS inclusion probabilities.

    ``pi_i = n * size_i / sum(size)``; units that would exceed 1 become
    certainty units, are set to 1, and the remaining sample size is spread
    over the rest. Repeats until no unit exceeds 1. ``sum(pi) == n``.
    """
    sizes = np.asarray(sizes, dtype=float)
    if np.any(sizes <= 0):
        raise DesignError("sizes must be positive")
    m = len(sizes)
    if n > m:
        raise DesignError(f"cannot select {n} of {m} units")
    _check_n(n)
    pi = np.zeros(m)
    certain = np.zeros(m, dtype=bool)
    while True:
        rest = ~certain
        k = n - certain.sum()
        pi[rest] = k * sizes[rest] / sizes[rest].sum()
        over = rest & (pi >= 1.0)
        if not over.any():
            break
        certain |= over
    pi[certain] = 1.0
    return pi


def _brewer_weights(p, k, a, taken, step):
    # Brewer's draw-by-draw selection weights at draw `step` (1-based) of k
    left = (k - a)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        w = p * (left - p)
        w /= left - p * (k - step + 1)
    w[taken] = 0.0
    return w


def _categorical_rows(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(w, axis=1)
    u = rng.random(len(w)) * cum[:, -1]
    j = (cum <= u[:, None]).sum(axis=1)
    return np.minimum(j, w.shape[1] - 1)


def _brewer_batch(pi: np.ndarray, R: int, rng) -> np.ndarray:
    m = len(pi)
    sel = np.zeros((R, m), dtype=bool)
    certain = pi >= 1.0 - 1e-12
    sel[:, certain] = True
    rest = np.flatnonzero(~certain)
    p = pi[rest]
    k = int(round(p.sum()))
    if k == 0:
        return sel
    taken = np.zeros((R, len(p)), dtype=bool)
    a = np.zeros(R)
    rows = np.arange(R)
    for step in range(1, k + 1):
        j = _categorical_rows(_brewer_weights(p, k, a, taken, step), rng)
        taken[rows, j] = True
        a += p[j]
    sel[:, rest] = taken
    return sel


def _brewer_exact(pi: np.ndarray, max_paths: int = 200_000):
    """First- and second-order probabilities of Brewer's procedure by walking every draw sequence."""
    m = len(pi)
    certain = pi >= 1.0 - 1e-12
    rest = np.flatnonzero(~certain)
    p = pi[rest]
    k = int(round(p.sum()))
    n_paths = 1
    for t in range(k):
        n_paths *= len(p) - t
    if n_paths > max_paths:
        raise NotEnumerableError(
            f"Brewer enumeration needs {n_paths} draw paths; use monte_carlo_inclusion")
    set_prob: dict[tuple[int, ...], float] = {}

    def walk(taken, a, prob, step):
        if step > k:
            key = tuple(sorted(taken))
            set_prob[key] = set_prob.get(key, 0.0) + prob
            return
        mask = np.zeros((1, len(p)), dtype=bool)
        mask[0, list(taken)] = True
        w = _brewer_weights(p, k, np.array([a]), mask, step)[0]
        w = w / w.sum()
        for j in np.flatnonzero(w > 0):
            walk(taken + (int(j),), a + p[j], prob * w[j], step + 1)

    walk((), 0.0, 1.0, 1)
    outcomes = []
    for key, prob in set_prob.items():
        s = np.zeros(m, dtype=bool)
        s[certain] = True
        s[rest[list(key)]] = True
        outcomes.append((prob, s))
    return outcomes


def _systematic_setup(sizes, n):
    sizes = np.asarray(sizes, dtype=float)
    pi = brewer_pps_inclusion(sizes, n)
    certain = pi >= 1.0 - 1e-12
    rest = np.flatnonzero(~certain)
    k = n - int(certain.sum())
    cum = np.cumsum(sizes[rest])
    step = cum[-1] / k if k else np.inf
    return certain, rest, k, cum, step


def _systematic_positions(cum, step, k, u):
    pts = u[:, None] + step * np.arange(k)[None, :]
    pos = np.searchsorted(cum, pts, side="right")
    return np.minimum(pos, len(cum) - 1)


def _systematic_batch(sizes, n, R, rng):
    # `sizes` already in sorted order; returns selection over sorted positions
    m = len(sizes)
    certain, rest, k, cum, step = _systematic_setup(sizes, n)
    sel = np.zeros((R, m), dtype=bool)
    sel[:, certain] = True
    if k:
        pos = _systematic_positions(cum, step, k, rng.random(R) * step)
        sub = np.zeros((R, len(rest)), dtype=bool)
        np.put_along_axis(sub, pos, True, axis=1)
        sel[:, rest] = sub
    return sel


def _systematic_outcomes(sizes, n):
    """All outcomes of systematic selection over sorted positions.

    The selected set is piecewise constant in the random start ``u``; it
    changes only where ``u + j*step`` crosses a cumulative-size boundary,
    i.e. at ``cum mod step``. Each piece is one outcome with probability
    proportional to its length.
    """
    m = len(sizes)
    certain, rest, k, cum, step = _systematic_setup(sizes, n)
    if k == 0:
        s = np.zeros(m, dtype=bool)
        s[certain] = True
        return [(1.0, s)]
    tol = 1e-12 * step
    bps = np.mod(cum, step)
    bps = bps[(bps > tol) & (bps < step - tol)]
    edges = np.unique(np.concatenate(([0.0], bps, [step])))
    keep = np.concatenate(([True], np.diff(edges) > tol))
    edges = edges[keep]
    if edges[-1] < step:
        edges[-1] = step
    mids = 0.5 * (edges[:-1] + edges[1:])
    pos = _systematic_positions(cum, step, k, mids)
    merged: dict[tuple[int, ...], float] = {}
    for length, row in zip(np.diff(edges), pos):
        key = tuple(row.tolist())
        merged[key] = merged.get(key, 0.0) + length / step
    outcomes = []
    for key, prob in merged.items():
        s = np.zeros(m, dtype=bool)
        s[certain] = True
        s[rest[list(key)]] = True
        outcomes.append((prob, s))
    return outcomes


def _dyadic_halves(keys):
    order = _sort_order(keys)
    h = len(keys) // 2
    return order[h:], order[:h]  # high, low


def _strata(design: StratifiedDyadic, keys) -> list[np.ndarray]:
    N = len(keys)
    order = _sort_order(keys)
    if design.n_strata is not None:
        if design.n_strata <= 1:
            return [order]
        if N % design.n_strata or (N // design.n_strata) % 2:
            raise DesignError(f"{design.n_strata} strata do not split N={N} into equal even blocks")
        size = N // design.n_strata
    else:
        size = design.stratum_size
    blocks = [order[i:i + size] for i in range(0, N, size)]
    if len(blocks[-1]) % 2:
        raise DesignError(f"final stratum of {len(blocks[-1])} units cannot be split in half")
    return blocks


def _check_even(N):
    if N % 2:
        raise DesignError(f"dyadic designs need an even population size, got N={N}")


# --- group-level selection and exact tables ----------------------------------


def _group_select_batch(design, sizes, keys, R, rng) -> np.ndarray:
    """``(R, m)`` selections of ``design`` applied to one group of ``m`` elements."""
    m = len(sizes)
    if isinstance(design, Census):
        return np.ones((R, m), dtype=bool)
    if isinstance(design, OnePPSPerGroup):
        design = BrewerPPS(1)
    n = design.n
    if n > m:
        raise DesignError(f"{type(design).__name__} asks for {n} of {m} units")
    if isinstance(design, SRS):
        pos = np.argsort(rng.random((R, m)), axis=1)[:, :n]
        sel = np.zeros((R, m), dtype=bool)
        np.put_along_axis(sel, pos, True, axis=1)
        return sel
    if isinstance(design, BrewerPPS):
        return _brewer_batch(brewer_pps_inclusion(sizes, n), R, rng)
    if isinstance(design, (SystematicEqual, SystematicPPS)):
        order = _sort_order(keys)
        s = np.ones(m) if isinstance(design, SystematicEqual) else np.asarray(sizes)[order]
        sel_sorted = _systematic_batch(s, n, R, rng)
        sel = np.empty_like(sel_sorted)
        sel[:, order] = sel_sorted
        return sel
    raise DesignError(f"{type(design).__name__} is not a single-group design")


def group_pi(design, sizes, keys=None) -> np.ndarray:
    m = len(sizes)
    if isinstance(design, Census):
        return np.ones(m)
    if isinstance(design, OnePPSPerGroup):
        design = BrewerPPS(1)
    if design.n > m:
        raise DesignError(f"{type(design).__name__} asks for {design.n} of {m} units")
    if isinstance(design, (SRS, SystematicEqual)):
        return np.full(m, design.n / m)
    return brewer_pps_inclusion(sizes, design.n)


def _outcomes_table(outcomes, m):
    pi = np.zeros(m)
    joint = np.zeros((m, m))
    for prob, s in outcomes:
        pi += prob * s
        idx = np.flatnonzero(s)
        joint[np.ix_(idx, idx)] += prob
    # summed probabilities can overshoot 1 by an ulp for certainty units
    return np.minimum(pi, 1.0), np.minimum(joint, 1.0)


def group_inclusion(design, sizes, keys=None, max_paths: int = 200_000):
    """Exact ``(pi, joint)`` for a design applied to one group; ``joint`` diagonal is ``pi``."""
    sizes = np.asarray(sizes, dtype=float)
    m = len(sizes)
    keys = sizes if keys is None else np.asarray(keys)
    if isinstance(design, Census):
        return np.ones(m), np.ones((m, m))
    if isinstance(design, OnePPSPerGroup):
        pi = sizes / sizes.sum()
        return pi, np.diag(pi)
    if design.n > m:
        raise DesignError(f"{type(design).__name__} asks for {design.n} of {m} units")
    if isinstance(design, SRS):
        n = design.n
        joint = np.full((m, m), n * (n - 1) / (m * (m - 1)) if m > 1 else 0.0)
        np.fill_diagonal(joint, n / m)
        return np.full(m, n / m), joint
    if isinstance(design, BrewerPPS):
        pi, joint = _outcomes_table(_brewer_exact(brewer_pps_inclusion(sizes, design.n), max_paths), m)
        return pi, joint
    if isinstance(design, (SystematicEqual, SystematicPPS)):
        order = _sort_order(keys)
        s = np.ones(m) if isinstance(design, SystematicEqual) else sizes[order]
        pi_s, joint_s = _outcomes_table(_systematic_outcomes(s, design.n), m)
        inv = np.empty(m, dtype=np.int64)
        inv[order] = np.arange(m)
        return pi_s[inv], joint_s[np.ix_(inv, inv)]
    raise NotEnumerableError(f"no exact enumeration for {type(design).__name__}; use monte_carlo_inclusion")


# --- public single-design operations -----------------------------------------


def draw_brewer_pps(sizes, n: int, seed) -> np.ndarray:
    """Positions of ``n`` distinct units drawn by Brewer's successive-selection method."""
    sel = _brewer_batch(brewer_pps_inclusion(sizes, n), 1, as_generator(seed))[0]
    return np.flatnonzero(sel)


def draw_systematic(sort_key, n: int, seed, pps: bool = False, sizes=None) -> np.ndarray:
    """Systematic selection after sorting on ``sort_key`` (ties by position).

    Equal mode uses interval ``M/n`` with a uniform real start. PPS mode walks
    cumulative size with interval ``sum(size)/n``; units at least one interval
    wide are taken with certainty and the interval is recomputed over the rest.
    """
    sort_key = np.asarray(sort_key)
    if pps:
        if sizes is None:
            raise DesignError("PPS systematic selection needs sizes")
        design = SystematicPPS(n)
    else:
        sizes = np.ones(len(sort_key))
        design = SystematicEqual(n)
    sel = _group_select_batch(design, np.asarray(sizes, dtype=float), sort_key, 1, as_generator(seed))[0]
    return np.flatnonzero(sel)


def systematic_certainty_units(sort_key, n: int, sizes) -> np.ndarray:
    """Positions that PPS systematic selection takes with probability 1."""
    return np.flatnonzero(brewer_pps_inclusion(sizes, n) >= 1.0 - 1e-12)


def _group_index(groups):
    labels, inv = np.unique(np.asarray(groups), return_inverse=True)
    return labels, inv


def _one_pps_per_group_batch(groups, sizes, R, rng) -> np.ndarray:
    """Vectorized across groups: one PPS draw in each group, ``(R, m)`` indicators."""
    sizes = np.asarray(sizes, dtype=float)
    if np.any(sizes <= 0):
        raise DesignError("sizes must be positive")
    _, inv = _group_index(groups)
    order = np.lexsort((np.arange(len(inv)), inv))
    g_sorted = inv[order]
    starts = np.flatnonzero(np.r_[True, g_sorted[1:] != g_sorted[:-1]])
    counts = np.diff(np.r_[starts, len(order)])
    G, width = len(starts), counts.max()
    slot = np.arange(len(order)) - np.repeat(starts, counts)
    # padded (G, width) cumulative shares; padding never chosen
    cum = np.full((G, width), np.inf)
    member = np.full((G, width), -1)
    member[g_sorted, slot] = order
    share = np.zeros((G, width))
    share[g_sorted, slot] = sizes[order]
    share = np.cumsum(share, axis=1)
    share /= share[np.arange(G), counts - 1][:, None]
    slot_mask = np.arange(width)[None, :] < counts[:, None]
    cum[slot_mask] = share[slot_mask]
    u = rng.random((R, G))
    pick = (cum[None, :, :] <= u[:, :, None]).sum(axis=2)
    pick = np.minimum(pick, counts[None, :] - 1)
    sel = np.zeros((R, len(sizes)), dtype=bool)
    np.put_along_axis(sel, member[np.arange(G)[None, :], pick], True, axis=1)
    return sel


def draw_one_pps_per_group(groups, sizes, seed) -> np.ndarray:
    """Positions of one unit per group, each chosen with probability size / group total."""
    return np.flatnonzero(_one_pps_per_group_batch(groups, sizes, 1, as_generator(seed))[0])


def one_pps_per_group_inclusion(groups, sizes) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    _, inv = _group_index(groups)
    return sizes / np.bincount(inv, weights=sizes)[inv]


def _dyadic_batch(design, keys, R, rng):
    N = len(keys)
    _check_even(N)
    if isinstance(design, DyadicPartition):
        blocks = [_sort_order(keys)]
    else:
        blocks = _strata(design, keys)
    sel = np.zeros((R, N), dtype=bool)
    coins = rng.random((R, len(blocks))) < 0.5
    for b, block in enumerate(blocks):
        h = len(block) // 2
        high, low = block[h:], block[:h]
        sel[np.ix_(coins[:, b], high)] = True
        sel[np.ix_(~coins[:, b], low)] = True
    return sel


def draw_dyadic_partition(pop: Population, seed, sort_field: str = "size",
                          stratum_size: int | None = None) -> SampleDraw:
    """Top or bottom half of the sorted population (per stratum when ``stratum_size`` is given)."""
    if stratum_size is None:
        design = DyadicPartition(sort_field)
    else:
        design = StratifiedDyadic(sort_field, stratum_size=stratum_size)
    return draw(design, pop, seed)


def dyadic_outcomes(pop: Population, sort_field: str = "size") -> tuple[SampleDraw, SampleDraw]:
    """The two possible samples of the unstratified dyadic design: (high half, low half)."""
    _check_even(pop.N)
    design = DyadicPartition(sort_field)
    high, low = _dyadic_halves(pop.column(sort_field))
    half = np.full(pop.N // 2, 0.5)
    return SampleDraw(pop.N, high, half, design), SampleDraw(pop.N, low, half, design)


# --- multistage --------------------------------------------------------------


def level_labels(pop: Population, level: str) -> np.ndarray:
    if level == "unit":
        return pop.index
    return pop.column(level)


@dataclass(frozen=True, eq=False)
class _StageFrame:
    """Children of one stage: their parent, aggregate size and sort key."""

    child_of_unit: np.ndarray   # unit -> child position
    parent_of_child: np.ndarray  # child position -> parent label
    sizes: np.ndarray
    keys: np.ndarray


def _stage_frame(pop: Population, stage: Stage, parent_labels: np.ndarray) -> _StageFrame:
    labels, child_of_unit = np.unique(level_labels(pop, stage.level), return_inverse=True)
    C = len(labels)
    parent_of_child = np.full(C, -1, dtype=np.int64)
    parent_of_child[child_of_unit] = parent_labels
    if np.any(parent_of_child[child_of_unit] != parent_labels):
        raise DesignError(f"{stage.level} labels are not nested within the previous stage")
    d = stage.design
    size_field = getattr(d, "size_field", "size")
    sort_field = getattr(d, "sort_field", size_field)
    sizes = np.bincount(child_of_unit, weights=pop.column(size_field), minlength=C)
    keys = np.bincount(child_of_unit, weights=pop.column(sort_field), minlength=C)
    return _StageFrame(child_of_unit, parent_of_child, sizes, keys)


def _parents(frame: _StageFrame):
    order = np.lexsort((np.arange(len(frame.parent_of_child)), frame.parent_of_child))
    p = frame.parent_of_child[order]
    cuts = np.flatnonzero(np.r_[True, p[1:] != p[:-1], True])
    return [order[a:b] for a, b in zip(cuts[:-1], cuts[1:])]


def _multistage_batch(pop: Population, spec: Multistage, R: int, rng) -> np.ndarray:
    sel = np.ones((R, pop.N), dtype=bool)
    parent = np.zeros(pop.N, dtype=np.int64)
    for stage in spec.stages:
        frame = _stage_frame(pop, stage, parent)
        C = len(frame.sizes)
        if isinstance(stage.design, OnePPSPerGroup):
            child_sel = _one_pps_per_group_batch(frame.parent_of_child, frame.sizes, R, rng)
        else:
            child_sel = np.zeros((R, C), dtype=bool)
            for kids in _parents(frame):
                child_sel[:, kids] = _group_select_batch(
                    stage.design, frame.sizes[kids], frame.keys[kids], R, rng)
        sel &= child_sel[:, frame.child_of_unit]
        parent = level_labels(pop, stage.level)
    return sel


def _multistage_pi(pop: Population, spec: Multistage) -> np.ndarray:
    pi = np.ones(pop.N)
    parent = np.zeros(pop.N, dtype=np.int64)
    for stage in spec.stages:
        frame = _stage_frame(pop, stage, parent)
        child_pi = np.zeros(len(frame.sizes))
        for kids in _parents(frame):
            child_pi[kids] = group_pi(stage.design, frame.sizes[kids], frame.keys[kids])
        pi *= child_pi[frame.child_of_unit]
        parent = level_labels(pop, stage.level)
    return pi


def _flat_fields(design, pop):
    size_field = getattr(design, "size_field", "size")
    sort_field = getattr(design, "sort_field", size_field)
    return pop.column(size_field), pop.column(sort_field)


def draw_indicators(design: DesignSpec, pop: Population, R: int, seed) -> np.ndarray:
    """``(R, N)`` boolean inclusion indicators for ``R`` independent samples."""
    if R < 1:
        raise ValueError("R must be >= 1")
    rng = as_generator(seed)
    if isinstance(design, Multistage):
        return _multistage_batch(pop, design, R, rng)
    if isinstance(design, (DyadicPartition, StratifiedDyadic)):
        return _dyadic_batch(design, pop.column(design.sort_field), R, rng)
    if isinstance(design, OnePPSPerGroup):
        return _one_pps_per_group_batch(pop.column(design.group_field), pop.column(design.size_field), R, rng)
    sizes, keys = _flat_fields(design, pop)
    return _group_select_batch(design, sizes, keys, R, rng)


def first_order_inclusion(design: DesignSpec, pop: Population) -> np.ndarray:
    if isinstance(design, Multistage):
        return _multistage_pi(pop, design)
    if isinstance(design, (DyadicPartition, StratifiedDyadic)):
        _check_even(pop.N)
        if isinstance(design, StratifiedDyadic):
            _strata(design, pop.column(design.sort_field))
        return np.full(pop.N, 0.5)
    if isinstance(design, OnePPSPerGroup):
        return one_pps_per_group_inclusion(pop.column(design.group_field), pop.column(design.size_field))
    sizes, keys = _flat_fields(design, pop)
    return group_pi(design, sizes, keys)


def draw(design: DesignSpec, pop: Population, seed) -> SampleDraw:
    pi = first_order_inclusion(design, pop)
    d = draw_indicators(design, pop, 1, seed)[0]
    idx = np.flatnonzero(d)
    return SampleDraw(pop.N, idx, pi[idx], design, seed if isinstance(seed, (int, np.integer)) else None)


def draw_multistage(pop: Population, spec: Multistage, seed) -> SampleDraw:
    if not isinstance(spec, Multistage):
        raise DesignError("draw_multistage needs a Multistage spec")
    return draw(spec, pop, seed)


def fixed_size(design: DesignSpec, pop: Population) -> int | None:
    """Declared sample size, or None when the realized size can vary."""
    if isinstance(design, Census):
        return pop.N
    if isinstance(design, (SRS, BrewerPPS, SystematicEqual, SystematicPPS)):
        return design.n
    if isinstance(design, OnePPSPerGroup):
        return len(np.unique(pop.column(design.group_field)))
    if isinstance(design, (DyadicPartition, StratifiedDyadic)):
        return pop.N // 2
    if isinstance(design, Multistage):
        # fixed when every stage is fixed-size and groups are balanced
        n = 1
        parent = np.zeros(pop.N, dtype=np.int64)
        for stage in design.stages:
            frame = _stage_frame(pop, stage, parent)
            groups = _parents(frame)
            d = stage.design
            if isinstance(d, Census):
                counts = {len(g) for g in groups}
                if len(counts) != 1:
                    return None
                per = counts.pop()
            elif isinstance(d, OnePPSPerGroup):
                per = 1
            else:
                per = d.n
            n *= per
            parent = level_labels(pop, stage.level)
        return n
    return None


def enumerate_outcomes(design: DesignSpec, pop: Population, max_outcomes: int = 100_000):
    """Every possible sample with its probability, as ``[(prob, indicator vector)]``.

    Only for designs whose outcome space is small; used as an exact oracle.
    """
    N = pop.N
    if isinstance(design, DyadicPartition):
        high, low = _dyadic_halves(pop.column(design.sort_field))
        out = []
        for half in (high, low):
            s = np.zeros(N, dtype=bool)
            s[half] = True
            out.append((0.5, s))
        return out
    if isinstance(design, StratifiedDyadic):
        blocks = _strata(design, pop.column(design.sort_field))
        if 2 ** len(blocks) > max_outcomes:
            raise NotEnumerableError("too many strata to enumerate")
        out = []
        for bits in itertools.product((0, 1), repeat=len(blocks)):
            s = np.zeros(N, dtype=bool)
            for b, block in zip(bits, blocks):
                h = len(block) // 2
                s[block[h:] if b else block[:h]] = True
            out.append((0.5 ** len(blocks), s))
        return out
    if isinstance(design, Census):
        return [(1.0, np.ones(N, dtype=bool))]
    if isinstance(design, SRS):
        combos = list(itertools.islice(itertools.combinations(range(N), design.n), max_outcomes + 1))
        if len(combos) > max_outcomes:
            raise NotEnumerableError("too many SRS outcomes")
        out = []
        for c in combos:
            s = np.zeros(N, dtype=bool)
            s[list(c)] = True
            out.append((1.0 / len(combos), s))
        return out
    if isinstance(design, BrewerPPS):
        sizes, _ = _flat_fields(design, pop)
        return _brewer_exact(brewer_pps_inclusion(sizes, design.n), max_outcomes)
    if isinstance(design, (SystematicEqual, SystematicPPS)):
        sizes, keys = _flat_fields(design, pop)
        order = _sort_order(keys)
        s = np.ones(N) if isinstance(design, SystematicEqual) else sizes[order]
        out = []
        for prob, sel_sorted in _systematic_outcomes(s, design.n):
            sel = np.zeros(N, dtype=bool)
            sel[order] = sel_sorted
            out.append((prob, sel))
        return out
    raise NotEnumerableError(f"outcome enumeration not available for {type(design).__name__}")
