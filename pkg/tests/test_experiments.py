import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from infosamp import experiments as E


def make_records(seed, n=40):
    rng = np.random.default_rng(seed)
    recs = []
    for arm in ("equal", "inverse_probability"):
        for L in (10, 20):
            for rep in range(n):
                for g in range(3):
                    recs.append(E.Record("three_stage", arm, L, rep, g, float(g), float(rng.random()), 0.4 + 0.1 * g))
    return recs


@given(st.integers(0, 10**6))
def test_reducer_is_order_independent(seed):
    recs = make_records(1)
    shuffled = recs[:]
    random.Random(seed).shuffle(shuffled)
    assert E.replicate_reducer(recs) == E.replicate_reducer(shuffled)


def test_reducer_values_match_direct_computation():
    recs = make_records(2)
    cells = {(c.arm, c.ladder, c.grid_index): c for c in E.replicate_reducer(recs)}
    sel = [r for r in recs if r.arm == "equal" and r.ladder == 20 and r.grid_index == 1]
    th = np.array([r.theta_hat for r in sel])
    c = cells[("equal", 20, 1)]
    assert c.n_reps == 40
    assert c.mean == pytest.approx(th.mean(), abs=1e-15)
    assert c.bias == pytest.approx(th.mean() - 0.5, abs=1e-15)
    assert c.mse == pytest.approx(np.mean((th - 0.5) ** 2), abs=1e-15)
    assert c.log_mse == pytest.approx(math.log(c.mse))
    assert c.replicate_se > 0


def test_missing_and_degenerate_cells():
    rec = E.Record("dyadic", "partition_high", 100, 0, 0, 0.0, 0.5, 0.5)
    cells = E.replicate_reducer([rec], [("dyadic", "partition_high", 100, 0, 0.0), ("dyadic", "partition_high", 200, 0, 0.1)])
    assert cells[0].bias == 0 and cells[0].log_abs_bias == -math.inf
    assert cells[1].missing and cells[1].n_reps == 0 and cells[1].log_mse is None
    assert E._fmt(None) == "NA" and E._fmt(-math.inf) == "-inf"


def test_failure_ceiling():
    attempts = {("equal", 10): 100}
    ok = [([], [("equal", 10)])] * 5
    records, failures = E._collect(ok, attempts)
    assert failures == {("equal", 10): 5}
    with pytest.raises(E.ExperimentFailure, match="6/100"):
        E._collect(ok + [([], [("equal", 10)])], attempts)


def test_config_validation():
    with pytest.raises(ValueError):
        E.ExperimentConfig("fig9", (10,), 5)
    with pytest.raises(ValueError):
        E.ExperimentConfig("three_stage", (20, 10), 5)
    with pytest.raises(ValueError):
        E.ExperimentConfig("three_stage", (10,), 0)
    with pytest.raises(ValueError):
        E.ExperimentConfig("three_stage", (10,), 5, arms=("bayes",))
    with pytest.raises(ValueError):
        E.ExperimentConfig("three_stage", (10,), 5, point_estimate="mode")


SMALL = dict(n_psu=40, hh_per_psu=10, persons_per_hh=3, n_grid=5, point_estimate="mle")


def test_three_stage_study_outputs_and_determinism():
    cfg = E.ExperimentConfig("three_stage", (5, 10), 4, seed=3, **SMALL)
    a = E.run_study(cfg)
    b = E.run_study(cfg)
    assert a.summary_csv() == b.summary_csv() and a.audit_csv() == b.audit_csv()
    lines = a.summary_csv().splitlines()
    assert lines[0] == ",".join(E.SUMMARY_COLUMNS)
    assert len(lines) == 1 + 2 * 2 * 5
    assert a.audit_csv().splitlines()[0] == ",".join(E.AUDIT_COLUMNS)
    assert len(a.records) == 2 * 2 * 4 * 5
    assert len(a.series("inverse_probability", "mse")) == 2
    c = E.run_study(E.ExperimentConfig("three_stage", (5, 10), 4, seed=4, **SMALL))
    assert c.summary_csv() != a.summary_csv()


def test_worker_count_does_not_change_results(monkeypatch):
    cfg = E.ExperimentConfig("three_stage", (5,), 6, seed=1, **SMALL)
    serial = E.run_study(cfg)
    monkeypatch.setenv("INFOSAMP_WORKERS", "2")
    parallel = E.run_study(cfg)
    assert serial.summary_csv() == parallel.summary_csv()
    assert serial.audit_csv() == parallel.audit_csv()


def test_mcmc_point_estimates_run():
    cfg = E.ExperimentConfig("three_stage", (10,), 2, seed=0, n_psu=40, n_grid=3, warmup=200, iters=300)
    res = E.run_study(cfg)
    assert all(c.n_reps == 2 for c in res.cells)


def test_dyadic_study_arms():
    cfg = E.ExperimentConfig("dyadic", (100, 200), 3, seed=0, n_grid=5, point_estimate="mle", stratum_size=50)
    res = E.run_study(cfg)
    assert res.arms == ["partition_high", "partition_low", "stratified"]
    assert all(c.n_reps == 1 for c in res.cells if c.arm.startswith("partition"))
    assert all(c.n_reps == 3 for c in res.cells if c.arm == "stratified")
    # the two halves sit on opposite sides of the population curve
    hi = res.series("partition_high", "bias")
    lo = res.series("partition_low", "bias")
    assert all(h > 0 > l for h, l in zip(hi, lo))
    only = E.run_study(E.ExperimentConfig("stratified_dyadic", (100, 200), 3, seed=0, n_grid=5,
                                          point_estimate="mle", stratum_size=10))
    assert only.arms == ["stratified"]
    assert np.array_equal(only.population_curve[200], res.population_curve[200])


def test_population_curve_is_the_reference():
    cfg = E.ExperimentConfig("three_stage", (5,), 2, seed=0, **SMALL)
    res = E.run_study(cfg)
    for c in res.cells:
        recs = [r for r in res.records if (r.arm, r.ladder, r.grid_index) == (c.arm, c.ladder, c.grid_index)]
        assert all(r.theta_pop == res.population_curve[c.ladder][c.grid_index] for r in recs)
