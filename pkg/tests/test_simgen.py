import numpy as np
import pytest

from conftest import within_mc
from tllfm.model import Population
from tllfm.simgen import (
    N_FRESH_SOURCE, RATIOS, SimulationSpec, draw_rows, generate_dataset,
    generate_ground_truth, parse_ratio, simulate,
)


def test_truth_dimensions(rng):
    t = generate_ground_truth(SimulationSpec(), rng)
    for b in (t.m, t.beta_S, t.beta_T):
        assert b.shape == (70, 20)
    assert t.sigma2.shape == (70,) and np.all(t.sigma2 > 0)


def test_zero_deviation_gives_identical_populations(rng):
    t = generate_ground_truth(SimulationSpec(), rng, beta_noise_sd=0.0)
    np.testing.assert_array_equal(t.beta_S, t.m)
    np.testing.assert_array_equal(t.beta_T, t.m)


def test_population_deviation_variance(rng):
    t = generate_ground_truth(SimulationSpec(P=400, K_true=50), rng)
    for b in (t.beta_S, t.beta_T):
        d = (b - t.m).ravel()
        assert abs(d.var() - 1.0) < 0.03
    assert abs(t.m.var() - 1.0) < 0.03


def test_precision_mean_two(rng):
    t = generate_ground_truth(SimulationSpec(P=10**5, K_true=1), rng)
    within_mc(1.0 / t.sigma2, 2.0, n_se=3)


def test_outcome_base_rate(rng):
    spec = SimulationSpec(P=8, K_true=3)
    t = generate_ground_truth(spec, rng)
    y = draw_rows(t, Population.TARGET, 10**5, rng)[:, 0] > 0
    within_mc(y, 0.5, n_se=3)


@pytest.mark.parametrize("pop", list(Population))
def test_sample_covariance_matches_truth(rng, pop):
    spec = SimulationSpec(P=6, K_true=2)
    t = generate_ground_truth(spec, rng)
    n = 10**6
    Z = draw_rows(t, pop, n, rng)
    om = t.omega(pop)
    S = Z.T @ Z / n
    se = np.sqrt((np.outer(np.diag(om), np.diag(om)) + om**2) / n)
    assert np.all(np.abs(S - om) < 3 * se)


@pytest.mark.parametrize("ratio,sizes,regen", [
    ((500, 2500), (3000, 500, 1500), False),
    ((700, 2800), (3500, 300, 1200), False),
    ((200, 4000), (4200, 800, N_FRESH_SOURCE), True),
])
def test_split_sizes(ratio, sizes, regen):
    spec = SimulationSpec(*ratio)
    _, split = simulate(spec, seed=3)
    assert (split.train.n, split.test_target.n, split.test_source.n) == sizes
    assert split.source_regenerated is regen
    assert split.train.n_target == ratio[0] and split.train.n_source == ratio[1]
    assert np.all(split.test_target.pop == Population.TARGET)
    assert np.all(split.test_source.pop == Population.SOURCE)


@pytest.mark.parametrize("ratio", RATIOS)
def test_splits_disjoint(ratio):
    _, split = simulate(SimulationSpec(*ratio), seed=1)
    ids = [set(d.row_id.tolist()) for d in (split.train, split.test_target, split.test_source)]
    assert not ids[0] & ids[1] and not ids[0] & ids[2] and not ids[1] & ids[2]
    assert len(ids[0]) == split.train.n


def test_regenerated_source_is_fresh():
    _, split = simulate(SimulationSpec(200, 4000), seed=0)
    assert split.test_source.row_id.min() >= 5000


def test_reproducible():
    spec = SimulationSpec(P=10, K_true=3)
    a, sa = simulate(spec, seed=11)
    b, sb = simulate(spec, seed=11)
    np.testing.assert_array_equal(a.beta_T, b.beta_T)
    assert sa.train.equals(sb.train) and sa.test_source.equals(sb.test_source)
    _, sc = simulate(spec, seed=12)
    assert not sa.train.equals(sc.train)


def test_outcome_is_thresholded_first_coordinate():
    truth, split = simulate(SimulationSpec(P=5, K_true=2), seed=2)
    assert set(np.unique(split.train.y)) == {0, 1}
    assert split.train.P == 4 and split.train.columns[0] == "x1"


def test_spec_validation():
    with pytest.raises(ValueError):
        SimulationSpec(1200, 2800)
    with pytest.raises(ValueError):
        SimulationSpec(700, 4500)
    assert parse_ratio("700:2800") == (700, 2800)
    with pytest.raises(ValueError):
        parse_ratio("700/2800")
