import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, optimize, special, stats

from infosamp.synthpop import (FIELDS, Population, PopulationConfig, TrueModel, expit, generate_population,
                               population_fit_curve, quantile_grid, read_population_csv)


def expected_y(truth=TrueModel()):
    """E[y] by quadrature over x1 ~ N(0,1), x2 ~ Exp(rate)."""
    rate = truth.x2_rate
    f = lambda x2, x1: (special.expit(truth.beta0 + truth.beta_x1 * x1 + truth.beta_x2 * x2)
                        * stats.norm.pdf(x1) * rate * np.exp(-rate * x2))
    val, _ = integrate.dblquad(f, -10, 10, 0, 300)
    return val


def test_expit_matches_reference_and_is_stable():
    z = np.linspace(-800, 800, 2001)
    np.testing.assert_allclose(expit(z), special.expit(z), rtol=1e-13, atol=1e-300)
    assert expit(-1.88) == pytest.approx(0.13238887, abs=1e-8)
    assert np.all(np.isfinite(expit(np.array([-1e308, 1e308]))))


def test_expected_outcome_rate_matches_quadrature():
    oracle = expected_y()
    assert oracle == pytest.approx(0.532641, abs=1e-6)
    pop = generate_population(PopulationConfig(N=200_000), seed=1)
    se = np.sqrt(oracle * (1 - oracle) / pop.N)
    assert abs(pop.y.mean() - oracle) < 4 * se


def test_covariate_laws():
    pop = generate_population(PopulationConfig(N=100_000), seed=2)
    assert stats.kstest(pop.x1, "norm").pvalue > 1e-3
    assert stats.kstest(pop.x2, "expon", args=(0, 5)).pvalue > 1e-3
    assert pop.size.min() == 1.0
    assert np.allclose(pop.size, pop.x2 - pop.x2.min() + 1)


def test_nested_structure(nested_pop):
    pop = nested_pop
    assert pop.N == 6000 and pop.structure == (200, 10, 3)
    assert np.array_equal(np.bincount(pop.hh), np.full(2000, 3))
    assert np.array_equal(np.bincount(pop.psu), np.full(200, 30))
    # households nest in PSUs
    for h in (0, 17, 1999):
        assert len(np.unique(pop.psu[pop.hh == h])) == 1


def test_flat_population_labels(flat_pop):
    pop = flat_pop(50)
    assert np.array_equal(pop.psu, np.arange(50)) and np.array_equal(pop.hh, np.arange(50))
    assert pop.structure is None


@given(st.integers(0, 10**9))
def test_same_seed_same_population(seed):
    a = generate_population(PopulationConfig(2, 2, 2), seed=seed)
    b = generate_population(PopulationConfig(2, 2, 2), seed=seed)
    assert a.to_csv() == b.to_csv()


def test_different_seeds_differ():
    a = generate_population(PopulationConfig(N=20), seed=0)
    b = generate_population(PopulationConfig(N=20), seed=1)
    assert not np.array_equal(a.x1, b.x1)


def test_arrays_are_read_only(flat_pop):
    pop = flat_pop(10)
    with pytest.raises(ValueError):
        pop.x1[0] = 0.0


def test_csv_round_trip_is_exact(tmp_path, small_nested_pop):
    pop = small_nested_pop
    path = tmp_path / "pop.csv"
    text = pop.to_csv(path)
    assert text.splitlines()[0] == ",".join(FIELDS)
    back = read_population_csv(path, pop.truth)
    for f in ("x1", "x2", "y", "psu", "hh", "size"):
        assert np.array_equal(back.column(f), pop.column(f))
    assert back.structure == pop.structure
    assert back.to_csv() == text


def test_csv_schema_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("index,x1\n0,1.0\n")
    with pytest.raises(ValueError, match="missing columns"):
        read_population_csv(p)


def test_config_validation():
    with pytest.raises(ValueError):
        PopulationConfig()
    with pytest.raises(ValueError):
        PopulationConfig(2, 2, 2, N=8)
    with pytest.raises(ValueError):
        PopulationConfig(N=0)
    with pytest.raises(KeyError):
        generate_population(PopulationConfig(N=4)).column("age")


def test_quantile_grid_levels(flat_pop):
    pop = flat_pop(1001, seed=3)
    g = quantile_grid(pop, 25)
    assert len(g) == 25 and np.all(np.diff(g) > 0)
    frac_below = [(pop.x1 <= v).mean() for v in g]
    assert np.allclose(frac_below, (np.arange(25) + 0.5) / 25, atol=1.5 / pop.N)


def test_population_fit_curve_matches_direct_optimizer(flat_pop):
    pop = flat_pop(3000, seed=4)
    X = np.column_stack([np.ones(pop.N), pop.x1])

    def nll(b):
        eta = X @ b
        return -(pop.y @ eta - np.logaddexp(0, eta).sum())

    b = optimize.minimize(nll, np.zeros(2), method="BFGS", options={"gtol": 1e-10}).x
    grid = quantile_grid(pop)
    curve = population_fit_curve(pop, grid)
    assert np.allclose([t for _, t in curve], special.expit(b[0] + b[1] * grid), atol=1e-6)


def test_population_curve_at_zero_is_near_marginal_oracle():
    # expit(a + b*0) for the marginal logistic fit of the true model, by quadrature of
    # the population score equations on a large draw
    pop = generate_population(PopulationConfig(N=200_000), seed=9)
    theta0 = population_fit_curve(pop, [0.0])[0][1]
    assert theta0 == pytest.approx(0.5265, abs=0.015)
