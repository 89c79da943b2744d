import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from conftest import make_state
from tllfm.errors import DataError, NumericalError, SchemaError
from tllfm.gibbs import PosteriorSamples
from tllfm.model import Hyperparameters, Standardization, assemble_marginal_covariance
from tllfm.predict import partition_covariance, predict, regression_coefficients


def samples_from(states, P):
    return PosteriorSamples(chains=(tuple(states),), hyper=Hyperparameters(K=1),
                            standardization=Standardization.identity(P),
                            columns=tuple(f"x{j}" for j in range(P)),
                            col_kind=("continuous",) * P)


def test_partition_small():
    xx, yx, yy = partition_covariance(np.array([[2.0, 1.0], [1.0, 3.0]]), 0)
    assert yy == 2.0
    np.testing.assert_array_equal(yx, [1.0])
    np.testing.assert_array_equal(xx, [[3.0]])


def test_partition_identity():
    _, yx, _ = partition_covariance(np.eye(4), 2)
    np.testing.assert_array_equal(yx, 0)


@pytest.mark.parametrize("y", range(6))
def test_partition_indexing_oracle(rng, y):
    A = rng.standard_normal((6, 6))
    om = A @ A.T
    xx, yx, yy = partition_covariance(om, y)
    rest = [i for i in range(6) if i != y]
    assert yy == om[y, y]
    for a, i in enumerate(rest):
        assert yx[a] == om[y, i]
        for b, j in enumerate(rest):
            assert xx[a, b] == om[i, j]
    # reassembly
    back = np.empty((6, 6))
    back[np.ix_(rest, rest)], back[y, rest], back[rest, y], back[y, y] = xx, yx, yx, yy
    np.testing.assert_array_equal(back, om)


def test_partition_range():
    with pytest.raises(IndexError):
        partition_covariance(np.eye(3), 3)


def test_regression_independent():
    om = np.diag([3.0, 1.0, 2.0])
    theta, s = regression_coefficients(om, 0)
    np.testing.assert_array_equal(theta, 0)
    assert s == 3.0


def test_regression_by_hand():
    theta, s = regression_coefficients(np.array([[2.0, 1.0], [1.0, 1.0]]), 0)
    assert theta == pytest.approx([1.0]) and s == pytest.approx(1.0)


def test_regression_matches_ols_on_simulation(rng):
    A = rng.standard_normal((5, 5))
    om = A @ A.T + 0.5 * np.eye(5)
    n = 10**6
    Z = rng.multivariate_normal(np.zeros(5), om, size=n)
    y, X = Z[:, 0], Z[:, 1:]
    XtX = X.T @ X
    coef = np.linalg.solve(XtX, X.T @ y)
    resid = y - X @ coef
    se = np.sqrt(resid @ resid / (n - 4) * np.diag(np.linalg.inv(XtX)))
    theta, s = regression_coefficients(om, 0)
    assert np.all(np.abs(theta - coef) < 3 * se)
    assert abs(s - resid.var()) < 0.01 * s


def test_regression_semidefinite_rescued_by_jitter():
    om = np.ones((3, 3))
    om[0, 0] = 2.0
    theta, s = regression_coefficients(om, 0)
    assert np.all(np.isfinite(theta)) and s >= 0


def test_regression_indefinite_reports_eigenvalue():
    om = np.array([[1.0, 0.2, 0.1], [0.2, 1.0, 2.0], [0.1, 2.0, 1.0]])
    with pytest.raises(NumericalError, match="eigenvalue -1.000e"):
        regression_coefficients(om, 0)


def test_regression_scale_consistent(rng):
    A = rng.standard_normal((4, 4))
    om = A @ A.T + np.eye(4)
    t1, s1 = regression_coefficients(om, 1)
    t2, s2 = regression_coefficients(7.5 * om, 1)
    np.testing.assert_allclose(t1, t2, rtol=1e-10)
    assert s2 == pytest.approx(7.5 * s1)


HAND = make_state(beta_S=np.array([[1.25], [0.8]]), sigma2=np.array([2 - 1.25**2, 1 - 0.64]))


def test_hand_built_omega():
    np.testing.assert_allclose(
        assemble_marginal_covariance(HAND.beta_S, HAND.sigma2).omega, [[2, 1], [1, 1]])


def test_predict_zero_row_is_half():
    s = samples_from([HAND, HAND], 1)
    r = predict(s, np.zeros((3, 1)), "T")
    np.testing.assert_array_equal(r.prob, 0.5)
    assert r.n_draws_used == 2


def test_predict_closed_form():
    r = predict(samples_from([HAND], 1), [[1.0]], "S")
    assert r.prob[0] == pytest.approx(stats.norm.cdf(1.0), abs=1e-12)
    assert r.latent_mean[0] == pytest.approx(1.0) and r.latent_sd[0] == pytest.approx(1.0)


def test_predict_matches_quadrature(rng):
    states = [make_state(beta_S=rng.standard_normal((3, 1)), sigma2=rng.uniform(0.3, 1.5, 3))
              for _ in range(3)]
    x = np.array([0.7, -1.2])

    def positive_utility(state):
        om = assemble_marginal_covariance(state.beta_S, state.sigma2).omega
        joint = stats.multivariate_normal(np.zeros(3), om)
        dens = lambda u: joint.pdf(np.r_[u, x])
        num = integrate.quad(dens, 0, np.inf, epsabs=1e-13)[0]
        den = num + integrate.quad(dens, -np.inf, 0, epsabs=1e-13)[0]
        return num / den

    expected = np.mean([positive_utility(s) for s in states])
    got = predict(samples_from(states, 2), x[None], "T").prob[0]
    assert abs(got - expected) < 1e-3


def test_posterior_mean_flag_single_draw_agrees():
    s = samples_from([HAND], 1)
    a = predict(s, [[0.3], [-2.0]], "T")
    b = predict(s, [[0.3], [-2.0]], "T", posterior_mean=True)
    np.testing.assert_allclose(a.prob, b.prob)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=30), st.integers(0, 10_000))
def test_monotone_in_linear_predictor(xs, seed):
    rng = np.random.default_rng(seed)
    states = [make_state(beta_S=rng.standard_normal((2, 1)), sigma2=rng.uniform(0.2, 2, 2))
              for _ in range(3)]
    x = np.sort(np.asarray(xs))[:, None]
    s = samples_from(states[:1], 1)
    theta, _ = regression_coefficients(
        assemble_marginal_covariance(states[0].beta_S, states[0].sigma2), 0)
    p = predict(s, x, "S").prob
    order = np.argsort(x[:, 0] * theta[0], kind="stable")
    assert np.all(np.diff(p[order]) >= 0)


def test_population_swap(rng):
    states = []
    for _ in range(4):
        b = rng.standard_normal((4, 2))
        states.append(make_state(m=b, beta_S=b, beta_T=b.copy(), sigma2=rng.uniform(0.5, 1, 4)))
    s = samples_from(states, 3)
    x = rng.standard_normal((10, 3))
    np.testing.assert_array_equal(predict(s, x, "S").prob, predict(s, x, "T").prob)
    states[0] = make_state(beta_S=states[0].beta_S, beta_T=-states[0].beta_S + 1,
                           sigma2=states[0].sigma2)
    s = samples_from(states, 3)
    assert not np.allclose(predict(s, x, "S").prob, predict(s, x, "T").prob)


def test_per_row_population(rng):
    b = rng.standard_normal((3, 1))
    st_ = make_state(beta_S=b, beta_T=-b, sigma2=np.ones(3))
    s = samples_from([st_], 2)
    x = rng.standard_normal((4, 2))
    mixed = predict(s, x, ["S", "T", "S", "T"]).prob
    np.testing.assert_array_equal(mixed[[0, 2]], predict(s, x[[0, 2]], "S").prob)
    np.testing.assert_array_equal(mixed[[1, 3]], predict(s, x[[1, 3]], "T").prob)


def test_predict_errors():
    s = samples_from([HAND], 1)
    with pytest.raises(SchemaError):
        predict(s, np.zeros((2, 3)), "T")
    with pytest.raises(DataError):
        predict(samples_from([], 1), np.zeros((1, 1)), "T")
