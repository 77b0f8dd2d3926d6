import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from gpabc.kernel import SEHyperparams, covariance_matrix, default_hyperpriors, se_cross
from gpabc.surrogates import TrainingSet, fit_standard_gp
from gpabc.surrogates.standard import log_prior_mean, marginal_loglik_and_gradient


def toy(t=30, seed=0, p=1):
    r = np.random.default_rng(seed)
    x = r.uniform(0, 5, size=(t, p))
    y = np.sin(x).sum(axis=1) + 0.1 * r.normal(size=t)
    return TrainingSet(x, y)


def test_flat_function_fit():
    r = np.random.default_rng(3)
    x = r.uniform(0, 5, 50)
    fit = fit_standard_gp(TrainingSet(x, 0.3 * r.normal(size=50)), seed=1, box=([0.0], [5.0]))
    h = fit.hyperparams
    assert h.signal_variance < h.noise_variance
    mean, _ = fit.predict(np.linspace(0, 5, 41))
    assert np.max(np.abs(mean)) < 0.1


def test_refit_is_identical():
    a = fit_standard_gp(toy(), seed=7)
    b = fit_standard_gp(toy(), seed=7)
    np.testing.assert_array_equal(a.hyperparams.to_log(), b.hyperparams.to_log())
    np.testing.assert_array_equal(a.weights, b.weights)


def test_map_is_stationary():
    fit = fit_standard_gp(toy(60, seed=2, p=2), seed=0)
    assert np.linalg.norm(fit.gradient) < 1e-3


def test_single_point_closed_form():
    h = SEHyperparams(2.0, [1.0], 0.5)
    fit = fit_standard_gp(TrainingSet([[1.0]], [3.0]), hyperparams=h)
    mean, var = fit.predict(1.0)
    assert mean == pytest.approx(2.0 * 3.0 / 2.5)
    assert var == pytest.approx(2.0 - 4.0 / 2.5)


def test_far_point_reverts_to_prior():
    h = SEHyperparams(1.5, [0.2], 0.01)
    fit = fit_standard_gp(toy(10), hyperparams=h)
    mean, var = fit.predict(5.0 + 10 * 0.2 + 5)
    assert abs(mean) < 1e-6
    assert var == pytest.approx(1.5, abs=1e-6)


def test_three_point_dense_solve():
    x = np.array([[0.0], [0.7], [2.0]])
    y = np.array([1.0, -0.5, 0.3])
    h = SEHyperparams(1.2, [0.8], 0.05)
    fit = fit_standard_gp(TrainingSet(x, y), hyperparams=h)
    q = np.array([[0.4], [1.5]])
    K = covariance_matrix(x, h)
    ks = se_cross(q, x, 1.2, [0.8])
    mean, var = fit.predict(q)
    np.testing.assert_allclose(mean, ks @ np.linalg.solve(K, y), rtol=1e-8)
    np.testing.assert_allclose(var, 1.2 - np.sum(ks * np.linalg.solve(K, ks.T).T, axis=1), rtol=1e-8)


def fixed_fit():
    return fit_standard_gp(toy(20), hyperparams=SEHyperparams(1.0, [1.0], 0.1))


def test_tail_probability_examples():
    fit = fixed_fit()
    mean, total = fit.predictive_moments(2.3)
    assert fit.tail_probability(2.3, mean) == pytest.approx(0.5)
    p = fit.tail_probability(2.3, mean - 2 * np.sqrt(total))
    assert p == pytest.approx(0.022750, abs=1e-6)


def test_tail_probability_matches_monte_carlo():
    fit = fixed_fit()
    mean, total = fit.predictive_moments(1.1)
    eps = mean + 0.3
    draws = np.random.default_rng(0).normal(mean, np.sqrt(total), 100_000)
    freq = np.mean(draws <= eps)
    p = fit.tail_probability(1.1, eps)
    assert abs(freq - p) < 3 * np.sqrt(p * (1 - p) / draws.size)


def test_log_predictive_density_examples():
    # far from the data the total variance is sf2 + noise = 1/(2 pi)
    h = SEHyperparams(0.1, [0.2], 1 / (2 * np.pi) - 0.1)
    fit = fit_standard_gp(toy(20), hyperparams=h)
    mean, total = fit.predictive_moments(40.0)
    assert total == pytest.approx(1 / (2 * np.pi), rel=1e-9)
    assert fit.log_predictive_density(40.0, mean) == pytest.approx(0.0, abs=1e-9)
    mean, total = fit.predictive_moments(0.5)
    sd = np.sqrt(total)
    assert fit.log_predictive_density(0.5, mean + 1.7 * sd) == pytest.approx(
        fit.log_predictive_density(0.5, mean - 1.7 * sd), rel=1e-12
    )
    assert fit.log_predictive_density(0.5, 0.2) == pytest.approx(stats.norm.logpdf(0.2, mean, sd), rel=1e-10)


@pytest.mark.parametrize("p", [1, 2])
def test_gradient_matches_finite_differences(p):
    tr = toy(25, seed=p, p=p)
    priors = default_hyperpriors("standard", (np.zeros(p), 5 * np.ones(p)), tr.discrepancies)
    psi = np.r_[np.log(0.8), np.log(np.linspace(0.6, 1.4, p)), np.log(0.05)]
    f = lambda v: marginal_loglik_and_gradient(tr, SEHyperparams.from_log(v, p), priors)[0]
    _, grad = marginal_loglik_and_gradient(tr, SEHyperparams.from_log(psi, p), priors)
    step = 1e-5
    for i in range(psi.size):
        e = np.zeros_like(psi)
        e[i] = step
        fd = (f(psi + e) - f(psi - e)) / (2 * step)
        assert abs(grad[i] - fd) <= 1e-4 * max(abs(fd), 1e-3)


def test_one_point_likelihood():
    tr = TrainingSet([[0.5]], [0.8])
    h = SEHyperparams(1.0, [2.0], 0.25)
    priors = default_hyperpriors("standard", ([0.0], [4.0]), [0.8, 0.1])
    value, _ = marginal_loglik_and_gradient(tr, h, priors)
    lp = priors.magnitude.logpdf(1.0) + priors.lengthscale[0].logpdf(2.0)
    assert value == pytest.approx(stats.norm.logpdf(0.8, 0, np.sqrt(1.25)) + lp, rel=1e-9)  # jitter floor


def test_scaling_identity():
    tr = toy(15)
    c = 3.0
    h = SEHyperparams(0.7, [1.1], 0.2)
    hc = SEHyperparams(0.7 * c * c, [1.1], 0.2 * c * c)
    v1, _ = marginal_loglik_and_gradient(tr, h)
    v2, _ = marginal_loglik_and_gradient(TrainingSet(tr.params, c * tr.discrepancies), hc)
    assert v2 - v1 == pytest.approx(-tr.size * np.log(c), rel=1e-10)


def test_log_prior_mean_is_nonpositive():
    assert log_prior_mean(TrainingSet([1.0, 2.0, 3.0], [2.0, 3.0, 4.0], "log")) == 0.0
    assert log_prior_mean(TrainingSet([1.0, 2.0, 3.0], [-2.0, -3.0, -4.0], "log")) == pytest.approx(-3.0)
    assert log_prior_mean(TrainingSet([1.0, 2.0, 3.0], [-2.0, -3.0, -4.0], "se")) == 0.0


def test_interpolation_with_tiny_noise():
    tr = toy(8)
    fit = fit_standard_gp(tr, hyperparams=SEHyperparams(1.0, [0.5], 1e-12))
    mean, _ = fit.predict(tr.params)
    np.testing.assert_allclose(mean, tr.discrepancies, atol=1e-5)


@given(st.floats(0.05, 3.0), st.floats(1e-4, 1.0), st.integers(2, 25))
def test_latent_variance_bounds_and_monotonicity(ell, noise, t):
    r = np.random.default_rng(t)
    x = r.uniform(0, 5, t + 1)
    y = r.normal(size=t + 1)
    h = SEHyperparams(1.3, [ell], noise)
    q = np.linspace(-1, 6, 30)
    small = fit_standard_gp(TrainingSet(x[:t], y[:t]), hyperparams=h)
    big = fit_standard_gp(TrainingSet(x, y), hyperparams=h)
    _, v1 = small.predict(q)
    _, v2 = big.predict(q)
    assert np.all(v1 >= 0) and np.all(v1 <= 1.3 + 1e-8)
    assert np.all(v2 <= v1 + 1e-8)


@given(st.floats(-3, 3), st.floats(0.01, 2))
def test_tail_monotone_with_limits(eps, step):
    fit = fixed_fit()
    assert fit.tail_probability(0.7, eps + step) >= fit.tail_probability(0.7, eps)
    assert fit.tail_probability(0.7, -1e300) == 0.0
    assert fit.tail_probability(0.7, 1e300) == 1.0
