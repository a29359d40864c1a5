import itertools

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from infosamp import designs as D
from infosamp.synthpop import PopulationConfig, generate_population

sizes_st = st.lists(st.floats(0.1, 50.0, allow_nan=False), min_size=2, max_size=9)


# --- capped PPS targets ---------------------------------------------------------


def test_brewer_targets_known_cases():
    assert np.allclose(D.brewer_pps_inclusion([3, 2, 1], 2), [1, 2 / 3, 1 / 3], atol=1e-15)
    assert np.allclose(D.brewer_pps_inclusion([10, 1, 1, 1, 1, 1], 2), [1, .2, .2, .2, .2, .2], atol=1e-15)
    assert np.allclose(D.brewer_pps_inclusion([1, 1, 2], 1), [.25, .25, .5])


@given(sizes_st, st.data())
def test_brewer_targets_sum_to_n_and_respect_order(sizes, data):
    n = data.draw(st.integers(1, len(sizes)))
    pi = D.brewer_pps_inclusion(sizes, n)
    assert abs(pi.sum() - n) < 1e-12 * n
    assert np.all((pi > 0) & (pi <= 1))
    order = np.argsort(sizes, kind="stable")
    assert np.all(np.diff(pi[order]) >= -1e-12)
    # uncapped units stay proportional to size
    free = pi < 1
    if free.sum() > 1:
        ratio = pi[free] / np.asarray(sizes)[free]
        assert np.allclose(ratio, ratio[0])


def test_design_validation():
    with pytest.raises(D.DesignError):
        D.brewer_pps_inclusion([1, 2], 3)
    with pytest.raises(D.DesignError):
        D.brewer_pps_inclusion([1, 0], 1)
    with pytest.raises(D.DesignError):
        D.SRS(0)
    with pytest.raises(D.DesignError):
        D.StratifiedDyadic(stratum_size=3)
    with pytest.raises(D.DesignError):
        D.StratifiedDyadic()
    with pytest.raises(D.DesignError):
        D.Multistage((D.Stage("hh", D.SRS(1)), D.Stage("psu", D.SRS(1))))
    with pytest.raises(D.DesignError):
        D.Stage("village", D.SRS(1))
    with pytest.raises(D.DesignError):
        D.Stage("psu", D.DyadicPartition())


# --- Brewer exact enumeration ---------------------------------------------------


def brewer_two_draw_joint(sizes):
    """Closed form for pairwise inclusion when drawing 2 by Brewer's method."""
    p = np.asarray(sizes, dtype=float) / np.sum(sizes)
    Dn = 1 + np.sum(p / (1 - 2 * p))
    J = 4 * np.outer(p, p) / Dn * (1 - p[:, None] - p[None, :]) / np.outer(1 - 2 * p, 1 - 2 * p)
    np.fill_diagonal(J, 2 * p)
    return J


@given(st.lists(st.floats(0.5, 5.0), min_size=3, max_size=8))
def test_brewer_pairs_match_closed_form_for_two_draws(sizes):
    p = np.asarray(sizes) / np.sum(sizes)
    assume(p.max() < 0.45)
    pi, J = D.group_inclusion(D.BrewerPPS(2), sizes)
    assert np.allclose(J, brewer_two_draw_joint(sizes), atol=1e-12)


@given(sizes_st, st.data())
def test_brewer_enumeration_reproduces_targets(sizes, data):
    n = data.draw(st.integers(1, min(4, len(sizes))))
    target = D.brewer_pps_inclusion(sizes, n)
    outcomes = D._brewer_exact(target)
    probs = np.array([p for p, _ in outcomes])
    assert abs(probs.sum() - 1) < 1e-12
    assert all(s.sum() == n for _, s in outcomes)
    pi, J = D._outcomes_table(outcomes, len(sizes))
    assert np.allclose(pi, target, atol=1e-12)
    # pair sums: sum_j pi_ij = (n - 1) pi_i for fixed-size designs
    off = J - np.diag(np.diag(J))
    assert np.allclose(off.sum(axis=1), (n - 1) * pi, atol=1e-10)


def test_brewer_draws_are_distinct_and_sized():
    sizes = np.arange(1, 21, dtype=float)
    for seed in range(20):
        idx = D.draw_brewer_pps(sizes, 6, seed)
        assert len(idx) == 6 and len(set(idx)) == 6


def test_brewer_monte_carlo_agrees_with_targets():
    sizes = [5, 4, 3, 2, 1, 1]
    pi = D.brewer_pps_inclusion(sizes, 3)
    R = 100_000
    sel = D.draw_indicators(D.BrewerPPS(3, "size"), _pop_with_sizes(sizes), R, 3)
    se = np.sqrt(pi * (1 - pi) / R)
    assert np.all(np.abs(sel.mean(axis=0) - pi) <= 4 * se + 1e-12)


def _pop_with_sizes(sizes):
    """Flat population whose size column equals ``sizes`` (x2 shifted to min 0)."""
    from infosamp.synthpop import Population
    s = np.asarray(sizes, dtype=float)
    N = len(s)
    return Population(x1=np.linspace(-1, 1, N), x2=s - s.min(), y=np.zeros(N), psu=np.arange(N), hh=np.arange(N))


# --- systematic -----------------------------------------------------------------


def systematic_sweep(sizes, n, grid=200_000):
    """Selection frequencies over a fine grid of random starts."""
    sizes = np.asarray(sizes, dtype=float)
    cum = np.cumsum(sizes)
    step = cum[-1] / n
    u = (np.arange(grid) + 0.5) / grid * step
    pos = u[:, None] + step * np.arange(n)[None, :]
    unit = np.searchsorted(cum, pos, side="right")
    sel = np.zeros((grid, len(sizes)), dtype=bool)
    np.put_along_axis(sel, unit, True, axis=1)
    return sel.mean(axis=0), (sel.T.astype(float) @ sel) / grid


def test_systematic_integral_interval_outcomes():
    out = D._systematic_outcomes(np.ones(10), 5)
    assert len(out) == 2
    assert sorted(p for p, _ in out) == [0.5, 0.5]
    sets = sorted(tuple(np.flatnonzero(s)) for _, s in out)
    assert sets == [(0, 2, 4, 6, 8), (1, 3, 5, 7, 9)]


@given(st.lists(st.floats(0.2, 3.0), min_size=4, max_size=10), st.data())
def test_systematic_pps_enumeration_matches_sweep(sizes, data):
    n = data.draw(st.integers(1, 3))
    assume(max(sizes) < sum(sizes) / n * 0.99)
    pi, J = D.group_inclusion(D.SystematicPPS(n), sizes, keys=np.arange(len(sizes)))
    pi_o, J_o = systematic_sweep(sizes, n)
    assert np.allclose(pi, pi_o, atol=2e-4)
    assert np.allclose(J, J_o, atol=2e-4)
    assert abs(pi.sum() - n) < 1e-9


def test_systematic_pps_certainty_units():
    sizes = np.array([20.0, 1, 1, 1, 1, 1, 1, 1, 1, 1])
    assert list(D.systematic_certainty_units(np.arange(10), 3, sizes)) == [0]
    pi, _ = D.group_inclusion(D.SystematicPPS(3), sizes, np.arange(10))
    assert pi[0] == 1 and np.allclose(pi[1:], 2 / 9)
    for seed in range(10):
        idx = D.draw_systematic(np.arange(10), 3, seed, pps=True, sizes=sizes)
        assert 0 in idx and len(idx) == 3


def test_systematic_equal_respects_sort_order():
    keys = np.array([5.0, 1.0, 4.0, 2.0, 3.0, 0.0])
    pi, J = D.group_inclusion(D.SystematicEqual(3), np.ones(6), keys)
    assert np.allclose(pi, 0.5)
    order = np.argsort(keys)
    # sorted neighbours are never together, every second one always is
    assert J[order[0], order[1]] == 0 and J[order[0], order[2]] == 0.5


# --- one per group, SRS, dyadic -------------------------------------------------


@given(st.lists(st.integers(0, 4), min_size=2, max_size=15), st.integers(0, 10**6))
def test_one_pps_per_group_picks_exactly_one(groups, seed):
    groups = np.array(groups)
    sizes = np.linspace(1, 3, len(groups))
    idx = D.draw_one_pps_per_group(groups, sizes, seed)
    assert sorted(groups[idx].tolist()) == sorted(set(groups.tolist()))
    pi = D.one_pps_per_group_inclusion(groups, sizes)
    for g in set(groups.tolist()):
        assert abs(pi[groups == g].sum() - 1) < 1e-12


def test_one_pps_per_group_frequencies():
    groups = np.array([0, 0, 0, 1, 1])
    sizes = np.array([1.0, 2, 3, 1, 1])
    pop = _pop_with_sizes(sizes)
    sel = D._one_pps_per_group_batch(groups, pop.size, 60_000, np.random.default_rng(0))
    pi = D.one_pps_per_group_inclusion(groups, pop.size)
    assert np.all(np.abs(sel.mean(axis=0) - pi) < 4 * np.sqrt(pi * (1 - pi) / 60_000) + 1e-12)


def test_srs_enumeration_is_uniform():
    pop = generate_population(PopulationConfig(N=6), seed=0)
    out = D.enumerate_outcomes(D.SRS(2), pop)
    assert len(out) == 15
    pi, J = D._outcomes_table(out, 6)
    assert np.allclose(pi, 1 / 3) and np.allclose(J[0, 1], 1 / 15)


def test_dyadic_halves_follow_size(flat_pop):
    pop = flat_pop(10, seed=1)
    high, low = D.dyadic_outcomes(pop)
    assert high.n == low.n == 5
    assert pop.size[high.index].min() >= pop.size[low.index].max()
    assert np.allclose(high.weights, 2)
    with pytest.raises(D.DesignError):
        D.dyadic_outcomes(flat_pop(7))


def test_stratified_dyadic_takes_half_of_every_stratum(flat_pop):
    pop = flat_pop(100, seed=2)
    design = D.StratifiedDyadic(stratum_size=20)
    s = D.draw(design, pop, 4)
    assert s.n == 50
    order = np.argsort(pop.size, kind="stable")
    for b in range(5):
        block = order[20 * b:20 * (b + 1)]
        taken = np.isin(block, s.index)
        assert taken.sum() == 10
        assert taken[:10].all() or taken[10:].all()
    with pytest.raises(D.DesignError):
        D.draw(D.StratifiedDyadic(n_strata=3), pop, 0)


def test_stratified_dyadic_with_one_stratum_is_unstratified(flat_pop):
    pop = flat_pop(20)
    a = D.enumerate_outcomes(D.StratifiedDyadic(n_strata=1), pop)
    b = D.enumerate_outcomes(D.DyadicPartition(), pop)
    assert sorted(tuple(s) for _, s in a) == sorted(tuple(s) for _, s in b)


# --- multistage -----------------------------------------------------------------


def test_three_stage_sample_shape(nested_pop):
    spec = D.three_stage_design(40)
    assert D.fixed_size(spec, nested_pop) == 200
    for seed in range(5):
        s = D.draw(spec, nested_pop, seed)
        assert s.n == 200
        assert len(np.unique(nested_pop.psu[s.index])) == 40
        assert len(np.unique(nested_pop.hh[s.index])) == 200
        assert np.all(np.bincount(nested_pop.psu[s.index]) <= 5)


def test_three_stage_pi_is_product_of_stages(nested_pop):
    pop = nested_pop
    spec = D.three_stage_design(40)
    pi = D.first_order_inclusion(spec, pop)
    assert abs(pi.sum() - 200) < 1e-9
    psu_size = np.bincount(pop.psu, weights=pop.size)
    hh_size = np.bincount(pop.hh, weights=pop.size)
    p_psu = D.brewer_pps_inclusion(psu_size, 40)
    expect = p_psu[pop.psu] * 0.5 * pop.size / hh_size[pop.hh]
    assert np.allclose(pi, expect, rtol=1e-12)


def test_multistage_monte_carlo_pi(small_nested_pop):
    pop = small_nested_pop
    spec = D.Multistage((D.Stage("psu", D.BrewerPPS(2)), D.Stage("hh", D.SRS(2)),
                         D.Stage("unit", D.OnePPSPerGroup())))
    R = 100_000
    freq = D.draw_indicators(spec, pop, R, 8).mean(axis=0)
    pi = D.first_order_inclusion(spec, pop)
    assert np.all(np.abs(freq - pi) < 4 * np.sqrt(pi * (1 - pi) / R))


def test_draws_are_deterministic(nested_pop):
    spec = D.three_stage_design(10)
    a = D.draw(spec, nested_pop, 123)
    b = D.draw(spec, nested_pop, 123)
    c = D.draw(spec, nested_pop, 124)
    assert np.array_equal(a.index, b.index)
    assert not np.array_equal(a.index, c.index)


def test_sample_csv_round_trip(tmp_path, nested_pop):
    s = D.draw(D.three_stage_design(10), nested_pop, 1)
    path = tmp_path / "s.csv"
    text = s.to_csv(path)
    lines = text.splitlines()
    assert lines[0] == "index,delta,weight" and len(lines) == nested_pop.N + 1
    back = D.read_sample_csv(path)
    assert np.array_equal(back.index, s.index)
    assert np.array_equal(back.weights, s.weights)


def test_sample_rejects_bad_pi():
    with pytest.raises(ValueError):
        D.SampleDraw(5, [0, 1], [0.5, 0.0])
    with pytest.raises(ValueError):
        D.SampleDraw(5, [1, 1], [0.5, 0.5])


def test_census_and_srs_pi(flat_pop):
    pop = flat_pop(12)
    assert np.all(D.first_order_inclusion(D.Census(), pop) == 1)
    assert np.allclose(D.first_order_inclusion(D.SRS(3), pop), 0.25)
    assert D.draw(D.Census(), pop, 0).n == 12
