"""First- and second-order inclusion probabilities and design-dependence diagnostics.

Pairwise probabilities are stored sparsely as upper-triangular triplets
``(i, j, pi_ij)`` with ``i < j``. A pair that is not stored is either known to
factor (``unstored="factoring"``: independent strata, groups or first-stage
units) or was simply not computed (``unstored="unknown"``).
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import designs as D
from .rng import stream
from .synthpop import Population

DENSE_LIMIT = 2000
EXACT_EPS = 1e-9


class A4Violation(ValueError):
    """Some unit has zero inclusion probability."""


@dataclass(frozen=True, eq=False)
class InclusionTable:
    pi: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    method: str = "exact"
    replicates: int | None = None
    pi_se: np.ndarray | None = None
    pair_se: np.ndarray | None = None
    unstored: str = "factoring"
    blocks: np.ndarray | None = None
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if self.method not in ("exact", "monte_carlo"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.unstored not in ("factoring", "unknown"):
            raise ValueError(f"unknown unstored policy {self.unstored!r}")
        if np.any(self.rows >= self.cols):
            raise ValueError("pairs must be stored with i < j")

    @property
    def N(self) -> int:
        return len(self.pi)

    @property
    def n_stored(self) -> int:
        return len(self.values)

    def _keys(self):
        return self.rows * self.N + self.cols

    def pair(self, i: int, j: int) -> float:
        if i == j:
            return float(self.pi[i])
        i, j = min(i, j), max(i, j)
        keys = self._keys()
        k = np.searchsorted(keys, i * self.N + j)
        if k < len(keys) and keys[k] == i * self.N + j:
            return float(self.values[k])
        if self.unstored == "factoring":
            return float(self.pi[i] * self.pi[j])
        return float("nan")

    def dense(self, units: Sequence[int] | None = None) -> np.ndarray:
        """Full symmetric pi_ij matrix (diagonal pi_i) over ``units``; at most 2000 units."""
        units = np.arange(self.N) if units is None else np.asarray(units)
        m = len(units)
        if m > DENSE_LIMIT:
            raise ValueError(f"dense export limited to {DENSE_LIMIT} units, asked for {m}")
        pos = np.full(self.N, -1)
        pos[units] = np.arange(m)
        p = self.pi[units]
        out = np.outer(p, p) if self.unstored == "factoring" else np.full((m, m), np.nan)
        a, b = pos[self.rows], pos[self.cols]
        keep = (a >= 0) & (b >= 0)
        out[a[keep], b[keep]] = self.values[keep]
        out[b[keep], a[keep]] = self.values[keep]
        np.fill_diagonal(out, p)
        return out


def _table_from_dense(pi, joint, offsets=None, **kw) -> InclusionTable:
    iu, ju = np.triu_indices(len(pi), 1)
    return InclusionTable(pi=np.asarray(pi, float), rows=iu, cols=ju, values=joint[iu, ju], **kw)


def _sorted_triplets(rows, cols, vals):
    rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    vals = np.concatenate(vals) if vals else np.zeros(0)
    order = np.lexsort((cols, rows))
    return rows[order], cols[order], vals[order]


def _block_tables(pi, joint_of_block: Iterable[tuple[np.ndarray, np.ndarray]], **kw) -> InclusionTable:
    R, C, V = [], [], []
    for units, joint in joint_of_block:
        order = np.argsort(units)
        units, joint = units[order], joint[np.ix_(order, order)]
        iu, ju = np.triu_indices(len(units), 1)
        R.append(units[iu])
        C.append(units[ju])
        V.append(joint[iu, ju])
    rows, cols, vals = _sorted_triplets(R, C, V)
    return InclusionTable(pi=np.asarray(pi, float), rows=rows, cols=cols, values=vals, **kw)


def _check_pairs(N, max_pairs):
    if N * (N - 1) // 2 > max_pairs:
        raise D.NotEnumerableError(
            f"storing all {N * (N - 1) // 2} pairs exceeds max_pairs={max_pairs}")


# --- exact --------------------------------------------------------------------


def _conditional(frames, stages, s, units):
    """Inclusion of ``units`` given that their common stage-``s`` parent was selected."""
    m = len(units)
    if s == len(stages):
        return np.ones(m), np.ones((m, m))
    f = frames[s]
    kids, local = np.unique(f.child_of_unit[units], return_inverse=True)
    pc, Jc = D.group_inclusion(stages[s].design, f.sizes[kids], f.keys[kids])
    ps = np.empty(m)
    inner = []
    for c in range(len(kids)):
        members = np.flatnonzero(local == c)
        p_sub, J_sub = _conditional(frames, stages, s + 1, units[members])
        ps[members] = p_sub
        inner.append((c, members, J_sub))
    J = Jc[np.ix_(local, local)] * np.outer(ps, ps)
    for c, members, J_sub in inner:
        J[np.ix_(members, members)] = pc[c] * J_sub
    return pc[local] * ps, J


def _stage_frames(pop, spec):
    frames = []
    parent = np.zeros(pop.N, dtype=np.int64)
    for stage in spec.stages:
        frames.append(D._stage_frame(pop, stage, parent))
        parent = D.level_labels(pop, stage.level)
    return frames


def _multistage_exact(pop: Population, spec: D.Multistage, max_pairs: int) -> InclusionTable:
    frames = _stage_frames(pop, spec)
    top = frames[0]
    top_design = spec.stages[0].design
    top_joint = None
    if pop.N <= DENSE_LIMIT:
        try:
            D.group_inclusion(top_design, top.sizes, top.keys)
            top_joint = True
        except D.NotEnumerableError:
            top_joint = None
    if top_joint:
        _check_pairs(pop.N, max_pairs)
        pi, J = _conditional(frames, spec.stages, 0, np.arange(pop.N))
        return _table_from_dense(pi, J, blocks=top.child_of_unit)
    pc = D.group_pi(top_design, top.sizes, top.keys)
    pi = np.empty(pop.N)
    blocks = []
    for c in range(len(pc)):
        members = np.flatnonzero(top.child_of_unit == c)
        p_sub, J_sub = _conditional(frames, spec.stages, 1, members)
        pi[members] = pc[c] * p_sub
        blocks.append((members, pc[c] * J_sub))
    note = (f"cross-{spec.stages[0].level} pairs declared factoring: "
            f"{type(top_design).__name__} joint probabilities are not enumerable here "
            "(see first_stage_audit)")
    return _block_tables(pi, blocks, blocks=top.child_of_unit, notes=(note,))


def exact_inclusion(design: D.DesignSpec, pop: Population, max_pairs: int = 5_000_000) -> InclusionTable:
    """Exact pi and pi_ij by enumerating the design's outcome space.

    Raises :class:`~infosamp.designs.NotEnumerableError` (pointing at
    :func:`monte_carlo_inclusion`) when the outcome space is too large.
    """
    N = pop.N
    if isinstance(design, D.Multistage):
        return _multistage_exact(pop, design, max_pairs)
    if isinstance(design, D.DyadicPartition):
        D._check_even(N)
        _check_pairs(N, max_pairs)
        pi, joint = D._outcomes_table(D.enumerate_outcomes(design, pop), N)
        return _table_from_dense(pi, joint)
    if isinstance(design, D.StratifiedDyadic):
        D._check_even(N)
        blocks = D._strata(design, pop.column(design.sort_field))
        label = np.empty(N, dtype=np.int64)
        parts = []
        for b, units in enumerate(blocks):
            label[units] = b
            h = len(units) // 2
            m = len(units)
            joint = np.zeros((m, m))
            joint[:h, :h] = 0.5
            joint[h:, h:] = 0.5
            parts.append((units, joint))
        return _block_tables(np.full(N, 0.5), parts, blocks=label)
    if isinstance(design, D.OnePPSPerGroup):
        groups = pop.column(design.group_field)
        pi = D.one_pps_per_group_inclusion(groups, pop.column(design.size_field))
        _, inv = np.unique(groups, return_inverse=True)
        parts = []
        for g in range(inv.max() + 1):
            units = np.flatnonzero(inv == g)
            parts.append((units, np.diag(pi[units])))
        return _block_tables(pi, parts, blocks=inv)
    _check_pairs(N, max_pairs)
    sizes, keys = D._flat_fields(design, pop)
    pi, joint = D.group_inclusion(design, sizes, keys, max_paths=max_pairs)
    return _table_from_dense(pi, joint)


# --- Monte Carlo ----------------------------------------------------------------


def _mc_chunk(design, pop, r, seed, chunk_id, blocks_units):
    d = D.draw_indicators(design, pop, r, stream(seed, "mc-inclusion", chunk_id))
    counts = d.sum(axis=0, dtype=np.int64)
    df = d.astype(np.float64)
    if blocks_units is None:
        pairs = [np.rint(df.T @ df).astype(np.int64)]
    else:
        pairs = [np.rint(df[:, u].T @ df[:, u]).astype(np.int64) for u in blocks_units]
    return counts, pairs


def monte_carlo_inclusion(design: D.DesignSpec, pop: Population, R: int, seed: int,
                          blocks: np.ndarray | None = None, chunk: int = 20_000,
                          workers: int = 1) -> InclusionTable:
    """Empirical pi and pi_ij over ``R`` replicates with binomial standard errors.

    Replicates are split into fixed chunks, each with its own derived stream,
    and merged by summation, so the result does not depend on ``workers``.
    With ``blocks`` (unit labels), only within-block pairs are estimated.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    N = pop.N
    if blocks is None:
        if N > DENSE_LIMIT * 2:
            raise ValueError(f"all-pairs Monte Carlo for N={N} is too large; pass blocks")
        blocks_units = None
    else:
        blocks = np.asarray(blocks)
        blocks_units = [np.flatnonzero(blocks == b) for b in np.unique(blocks)]
    sizes = [min(chunk, R - s) for s in range(0, R, chunk)]
    jobs = [(design, pop, r, seed, k, blocks_units) for k, r in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(lambda a: _mc_chunk(*a), jobs))
    else:
        results = [_mc_chunk(*a) for a in jobs]
    counts = sum(r[0] for r in results)
    pair_counts = [sum(r[1][b] for r in results) for b in range(len(results[0][1]))]
    pi = counts / R
    if blocks_units is None:
        iu, ju = np.triu_indices(N, 1)
        rows, cols, vals = iu, ju, pair_counts[0][iu, ju] / R
        unstored = "factoring"
    else:
        Rr, Cc, V = [], [], []
        for units, pc in zip(blocks_units, pair_counts):
            iu, ju = np.triu_indices(len(units), 1)
            Rr.append(units[iu])
            Cc.append(units[ju])
            V.append(pc[iu, ju] / R)
        rows, cols, vals = _sorted_triplets(Rr, Cc, V)
        unstored = "unknown"
    return InclusionTable(
        pi=pi, rows=rows, cols=cols, values=vals, method="monte_carlo", replicates=R,
        pi_se=np.sqrt(pi * (1 - pi) / R), pair_se=np.sqrt(vals * (1 - vals) / R),
        unstored=unstored, blocks=blocks)


def first_stage_audit(pop: Population, spec: D.Multistage, R: int, seed: int) -> dict:
    """Monte Carlo check of first-stage pairwise dependence.

    Cross-PSU pairs inherit the first-stage deviation ``pi_kl/(pi_k pi_l) - 1``
    because later stages run independently per PSU. Reports the largest
    estimated deviation, its 4-sigma noise floor and the scaled bound
    ``n_first_stage_units * max|d|``.
    """
    frame = _stage_frames(pop, spec)[0]
    design = spec.stages[0].design
    C = len(frame.sizes)
    pc = D.group_pi(design, frame.sizes, frame.keys)
    counts = np.zeros((C, C))
    chunk = 20_000
    for k, s in enumerate(range(0, R, chunk)):
        r = min(chunk, R - s)
        sel = D._group_select_batch(design, frame.sizes, frame.keys, r,
                                    stream(seed, "first-stage-audit", k)).astype(np.float64)
        counts += sel.T @ sel
    joint = counts / R
    iu, ju = np.triu_indices(C, 1)
    denom = pc[iu] * pc[ju]
    d = joint[iu, ju] / denom - 1
    se = np.sqrt(joint[iu, ju] * (1 - joint[iu, ju]) / R) / denom
    k = int(np.argmax(np.abs(d)))
    return {
        "n_first_stage_units": C,
        "replicates": R,
        "max_abs_dev": float(abs(d[k])),
        "se_at_max": float(se[k]),
        "fraction_within_4se": float(np.mean(np.abs(d) <= np.maximum(EXACT_EPS, 4 * se))),
        "scaled_max_abs_dev": float(C * abs(d[k])),
        "mean_dev": float(d.mean()),
    }


# --- deviations -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DeviationMatrix:
    """``d_ij = pi_ij / (pi_i pi_j) - 1`` over the stored pairs of a table."""

    rows: np.ndarray
    cols: np.ndarray
    dev: np.ndarray
    epsilon: np.ndarray
    N: int
    unstored: str
    estimated: bool = False
    table: InclusionTable | None = field(default=None, repr=False)

    @property
    def nonfactoring(self) -> np.ndarray:
        return np.abs(self.dev) > self.epsilon

    def dense(self, units: Sequence[int] | None = None, kind: str = "dev") -> np.ndarray:
        """Dense deviation matrix over ``units``; ``kind`` is dev, magnitude or sign.

        Diagonal entries are NaN (pairs only). Unstored pairs are 0 when they
        factor by construction, NaN when unknown.
        """
        units = np.arange(self.N) if units is None else np.asarray(units)
        m = len(units)
        if m > DENSE_LIMIT:
            raise ValueError(f"dense export limited to {DENSE_LIMIT} units, asked for {m}")
        pos = np.full(self.N, -1)
        pos[units] = np.arange(m)
        out = np.zeros((m, m)) if self.unstored == "factoring" else np.full((m, m), np.nan)
        a, b = pos[self.rows], pos[self.cols]
        keep = (a >= 0) & (b >= 0)
        v = np.where(self.nonfactoring, self.dev, 0.0)[keep]
        out[a[keep], b[keep]] = v
        out[b[keep], a[keep]] = v
        np.fill_diagonal(out, np.nan)
        if kind == "magnitude":
            return np.abs(out)
        if kind == "sign":
            return np.sign(out)
        if kind != "dev":
            raise ValueError(f"unknown kind {kind!r}")
        return out

    def to_triplet_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("i", "j", "dev"))
        for i, j, d in zip(self.rows.tolist(), self.cols.tolist(), self.dev.tolist()):
            w.writerow((i, j, repr(d)))
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_dense_csv(self, path: str | Path | None = None, units=None, kind: str = "dev") -> str:
        mat = self.dense(units, kind)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in mat:
            w.writerow(["" if np.isnan(v) else repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def deviation_matrix(tab: InclusionTable, epsilon: float | None = None) -> DeviationMatrix:
    """Factorization deviations with a classification threshold.

    Default threshold: 1e-9 for exact tables; for Monte Carlo tables,
    ``max(1e-9, 4 * se(d_ij))`` per pair so structural deviations are
    separated from sampling noise.
    """
    if np.any(tab.pi <= 0):
        bad = np.flatnonzero(tab.pi <= 0)
        raise A4Violation(f"{len(bad)} units have zero inclusion probability (first: {bad[0]})")
    denom = tab.pi[tab.rows] * tab.pi[tab.cols]
    dev = tab.values / denom - 1.0
    if epsilon is not None:
        eps = np.full(len(dev), float(epsilon))
    elif tab.method == "exact":
        eps = np.full(len(dev), EXACT_EPS)
    else:
        eps = np.maximum(EXACT_EPS, 4.0 * tab.pair_se / denom)
    return DeviationMatrix(tab.rows, tab.cols, dev, eps, tab.N, tab.unstored,
                           estimated=tab.method != "exact", table=tab)


# --- condition diagnostics --------------------------------------------------------


@dataclass(frozen=True)
class ConditionReport:
    N: int
    n: float
    sampling_fraction: float
    gamma: float
    s1_size: int
    s2_size: int
    s2_max_dev: float
    s1_ratio: float
    unknown_pairs: int
    estimated: bool
    n_blocks: int | None = None
    max_block_size: int | None = None
    within_block_pairs: int | None = None
    cross_block_max_dev: float | None = None
    block_certified: bool | None = None
    s1_bound_holds: bool | None = None
    verdicts: dict = field(default_factory=dict)

    @property
    def scaled_s2_max_dev(self) -> float:
        return self.N * self.s2_max_dev

    def to_text(self) -> str:
        lines = []
        for k, v in self.__dict__.items():
            if k == "verdicts":
                continue
            lines.append(f"{k}: {_fmt(v)}")
        lines.append(f"scaled_s2_max_dev: {_fmt(self.scaled_s2_max_dev)}")
        for k, v in self.verdicts.items():
            lines.append(f"verdict.{k}: {v}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def condition_report(dev: DeviationMatrix, tab: InclusionTable | None = None, n: float | None = None,
                     N: int | None = None, block_hint: np.ndarray | None = None) -> ConditionReport:
    """Measured ingredients of the design conditions for one design.

    gamma bounds inverse inclusion; S1 holds the pairs that fail to factor
    (|d| above the classification threshold) and S2 the rest. With
    ``block_hint`` (unit labels, e.g. PSU), checks that every non-factoring
    pair is within a block and reports block sizes. Verdicts are descriptive:
    limits in N are judged by :func:`condition_growth_scan`.
    """
    tab = dev.table if tab is None else tab
    N = dev.N if N is None else N
    pi = tab.pi
    n = float(pi.sum()) if n is None else float(n)
    total = N * (N - 1) // 2
    nf = dev.nonfactoring
    s1 = int(nf.sum())
    unknown = total - len(dev.dev) if dev.unstored == "unknown" else 0
    s2 = total - s1 - unknown
    s2_max = float(np.abs(dev.dev[~nf]).max()) if (~nf).any() else 0.0
    min_pi = float(pi.min())
    gamma = 1.0 / min_pi if min_pi > 0 else float("inf")
    verdicts = {
        "A4": f"pass (gamma={gamma:.6g})" if np.isfinite(gamma) else "FAIL (zero inclusion probability)",
        "A5.1": (f"|S1|/N={s1 / N:.6g}, N*max_S2|d|={N * s2_max:.6g}; "
                 "boundedness in N requires condition_growth_scan"),
        "A6": f"n/N={n / N:.6g}",
    }
    block = {}
    if block_hint is not None:
        labels, inv, counts = np.unique(np.asarray(block_hint), return_inverse=True, return_counts=True)
        same = inv[dev.rows] == inv[dev.cols]
        cross_nf = nf & ~same
        cross_max = float(np.abs(dev.dev[~same]).max()) if (~same).any() else 0.0
        c4 = int(counts.max())
        certified = not cross_nf.any()
        bound = s1 <= N * (c4 - 1) / 2
        block = dict(
            n_blocks=len(labels), max_block_size=c4,
            within_block_pairs=int((counts * (counts - 1) // 2).sum()),
            cross_block_max_dev=cross_max, block_certified=certified, s1_bound_holds=bound,
        )
        verdicts["A5.2"] = (f"{'certified' if certified else 'not certified'}: "
                            f"{len(labels)} blocks, max size {c4}, cross-block max|d|={cross_max:.6g}")
    if dev.estimated:
        verdicts["note"] = "pairwise probabilities are Monte Carlo estimates"
    return ConditionReport(N=N, n=n, sampling_fraction=n / N, gamma=gamma, s1_size=s1, s2_size=s2,
                           s2_max_dev=s2_max, s1_ratio=s1 / N, unknown_pairs=unknown,
                           estimated=dev.estimated, verdicts=verdicts, **block)


@dataclass(frozen=True)
class GrowthScan:
    rows: list[dict]
    verdict: str
    reason: str
    growth: dict

    def to_csv(self, path: str | Path | None = None) -> str:
        cols = ("N", "s1_size", "s1_ratio", "scaled_s2_max_dev", "gamma", "sampling_fraction")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in cols])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _relative_growth(Ns, values) -> float:
    """Least-squares slope per doubling of N, relative to the series level."""
    values = np.asarray(values, dtype=float)
    level = np.abs(values).mean()
    if level == 0:
        return 0.0
    slope = np.polyfit(np.log2(np.asarray(Ns, dtype=float)), values, 1)[0]
    return float(slope / level)


def condition_growth_scan(family: Callable[[int], tuple[D.DesignSpec, Population]], N_grid: Sequence[int],
                          epsilon: float | None = None, growth_tol: float = 0.1,
                          table: Callable[[D.DesignSpec, Population], InclusionTable] = exact_inclusion) -> GrowthScan:
    """Evaluate the condition report along a ladder of population sizes.

    ``family(N)`` returns the design and population at size N. PASS when
    neither |S1|/N nor N * max_S2 |d| grows by more than ``growth_tol`` (relative
    to its level) per doubling of N; FAIL names the growing series.
    """
    if len(N_grid) < 3:
        raise ValueError("growth scan needs at least 3 grid points")
    rows = []
    for N in N_grid:
        design, pop = family(N)
        tab = table(design, pop)
        rep = condition_report(deviation_matrix(tab, epsilon), tab)
        rows.append(dict(N=pop.N, s1_size=rep.s1_size, s1_ratio=rep.s1_ratio,
                         scaled_s2_max_dev=rep.scaled_s2_max_dev, gamma=rep.gamma,
                         sampling_fraction=rep.sampling_fraction))
    Ns = [r["N"] for r in rows]
    growth = {
        "s1_ratio": _relative_growth(Ns, [r["s1_ratio"] for r in rows]),
        "scaled_s2_max_dev": _relative_growth(Ns, [r["scaled_s2_max_dev"] for r in rows]),
    }
    failing = {k: g for k, g in growth.items() if g > growth_tol}
    if failing:
        reason = "; ".join(f"{k} grows {g:.3g} (relative) per doubling of N" for k, g in failing.items())
        return GrowthScan(rows, "FAIL", reason, growth)
    return GrowthScan(rows, "PASS", f"all series within {growth_tol} relative growth per doubling", growth)
