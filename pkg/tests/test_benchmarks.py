import csv
import math
from pathlib import Path

import numpy as np
import pytest

from gpabc.benchmarks import (
    PROBLEMS,
    ObservedDataset,
    get_problem,
    lotka_volterra_trajectory,
    mc_tail_probabilities,
    median_table,
    observed_data,
    reference_posterior,
    run_experiment,
    simulate_discrepancy,
    simulate_training,
)
from gpabc.benchmarks.experiment import candidate_specs
from gpabc.exceptions import ContractViolation
from gpabc.model_selection import CandidateSpec
from gpabc.posterior import GridSpec, tv_distance

TABLE = Path(__file__).parent / "data" / "toy_problems.csv"


def table_rows():
    with open(TABLE) as fh:
        return list(csv.DictReader(fh))


def floats(text):
    return [float(v) for v in text.split()]


@pytest.mark.parametrize("row", table_rows(), ids=lambda r: r["name"])
def test_problem_matches_table(row):
    prob = get_problem(row["name"])
    np.testing.assert_array_equal(prob.prior.lower, floats(row["lower"]))
    np.testing.assert_array_equal(prob.prior.upper, floats(row["upper"]))
    assert prob.n_obs == int(row["n"])
    assert list(prob.true_theta) == floats(row["true_theta"])


def test_every_problem_is_listed():
    assert sorted(PROBLEMS) == sorted(r["name"] for r in table_rows())


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_discrepancies_nonnegative(name):
    prob = get_problem(name)
    r = np.random.default_rng(7)
    obs = prob.observe(r)
    theta = prob.prior.sample(r, 10_000)
    d = prob.simulate(theta, obs, r)
    assert d.shape == (10_000,)
    assert np.all(d >= 0) and np.all(np.isfinite(d))


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_analytic_tail_matches_simulation(name):
    prob = get_problem(name)
    obs = observed_data(prob, seed=3, rep=0)
    theta, deltas = simulate_training(prob, obs, 3, 0, 200)
    eps = float(np.quantile(deltas, 0.1))
    nodes = prob.prior.sample(np.random.default_rng(11), 4)
    nodes = np.vstack([nodes, np.asarray(prob.true_theta)])
    mc = mc_tail_probabilities(prob, obs, eps, nodes, seed=5, draws=20_000)
    exact = prob.tail(nodes, obs, eps)
    se = np.sqrt(np.maximum(exact * (1 - exact), 1e-12) / 20_000)
    assert np.all(np.abs(mc - exact) <= 3 * se + 1e-12)


@pytest.mark.parametrize("offset", [0.0, 1.0])
def test_gaussian1_discrepancy_moments(offset):
    prob = get_problem("gaussian1")
    obs = prob.observe(np.random.default_rng(0))
    ybar = obs.summaries["mean"]
    n = prob.n_obs
    d = prob.simulate(np.full(100_000, ybar + offset), obs, np.random.default_rng(1))
    m = d.mean()
    assert abs(m - (offset**2 + 1 / n)) <= 3 * d.std(ddof=1) / math.sqrt(d.size)
    # mean(x) - ybar ~ N(offset, 1/n), so var = 4 offset^2 / n + 2 / n^2
    sq = (d - m) ** 2
    assert abs(sq.mean() - (4 * offset**2 / n + 2 / n**2)) <= 3 * sq.std(ddof=1) / math.sqrt(d.size)


def test_simulation_is_deterministic():
    prob = get_problem("gaussian2-2d")
    obs = prob.observe(np.random.default_rng(0))
    a = simulate_discrepancy(prob, obs, [3.0, 2.0], np.random.default_rng(5))
    b = simulate_discrepancy(prob, obs, [3.0, 2.0], np.random.default_rng(5))
    assert a == b
    t1, d1 = simulate_training(prob, obs, 1, 2, 50)
    t2, d2 = simulate_training(prob, obs, 1, 2, 50)
    assert np.array_equal(t1, t2) and np.array_equal(d1, d2)


def test_observed_data_depends_only_on_seed_and_rep():
    prob = get_problem("poisson")
    a = observed_data(prob, 4, 2)
    b = observed_data(prob, 4, 2)
    c = observed_data(prob, 4, 3)
    assert np.array_equal(a.data, b.data) and not np.array_equal(a.data, c.data)


def test_lotka_volterra_fixed_point():
    out = lotka_volterra_trajectory([1.0, 1.0], initial=(1.0, 1.0))
    assert out.shape == (8, 2)
    np.testing.assert_allclose(out, 1.0, atol=1e-6)


def test_lotka_volterra_step_halving():
    a = lotka_volterra_trajectory([1.0, 1.0], times=(2.0,))
    b = lotka_volterra_trajectory([1.0, 1.0], times=(2.0,), dt=0.0025)
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_lotka_volterra_batch_matches_single():
    th = np.array([[0.5, 0.7], [1.2, 1.4]])
    batch = lotka_volterra_trajectory(th)
    for i in range(2):
        np.testing.assert_array_equal(batch[i], lotka_volterra_trajectory(th[i]))


def test_lotka_volterra_noiseless_discrepancy_zero():
    prob = get_problem("lotka-volterra")
    obs = ObservedDataset(lotka_volterra_trajectory([1.0, 1.0]))
    assert simulate_discrepancy(prob, obs, [1.0, 1.0], np.random.default_rng(0)) == 0.0


def test_gm1_discrepancy_is_bimodal_at_minus_four():
    prob = get_problem("gm1")
    obs = prob.observe(np.random.default_rng(0))
    d = np.sqrt(prob.simulate(np.full(20_000, -4.0), obs, np.random.default_rng(1)))
    # two-means split on |y - x| and Ashman's D between the clusters
    cut = np.median(d)
    for _ in range(50):
        lo, hi = d[d <= cut], d[d > cut]
        cut = 0.5 * (lo.mean() + hi.mean())
    sep = math.sqrt(2) * abs(hi.mean() - lo.mean()) / math.sqrt(lo.var() + hi.var())
    assert sep > 2.0
    assert min(lo.size, hi.size) > 0.2 * d.size


def test_reference_recipes_agree_for_gaussian1():
    prob = get_problem("gaussian1")
    obs = observed_data(prob, 0, 0)
    spec = GridSpec(128)
    exact = reference_posterior(prob, obs, 0.05, spec, recipe="analytic-abc")
    mc = reference_posterior(prob, obs, 0.05, spec, seed=1, recipe="mc-abc", draws=100_000)
    assert tv_distance(exact, mc) <= 0.01


def test_true_posterior_is_conjugate_normal():
    prob = get_problem("gaussian1")
    obs = observed_data(prob, 0, 0)
    post = reference_posterior(prob, obs, 0.0, recipe="analytic-true")
    theta = post.axes[0]
    ref = np.exp(-0.5 * prob.n_obs * (theta - np.mean(obs.data)) ** 2)
    ref /= np.sum(ref * post.cellweight)
    np.testing.assert_allclose(post.density, ref, rtol=1e-9, atol=1e-12)
    assert post.total_mass() == pytest.approx(1.0, abs=1e-12)


def test_bimodal_reference_has_two_modes():
    prob = get_problem("bimodal")
    obs = observed_data(prob, 0, 0)
    post = reference_posterior(prob, obs, 0.0, recipe="analytic-true")
    theta, dens = post.axes[0], post.density
    left = theta[np.argmax(np.where(theta < 0, dens, 0))]
    right = theta[np.argmax(np.where(theta > 0, dens, 0))]
    assert left == pytest.approx(-right, abs=0.02)
    assert 0.5 < right < 1.6


def test_unknown_recipe():
    prob = get_problem("gaussian1")
    with pytest.raises(ContractViolation):
        reference_posterior(prob, observed_data(prob, 0, 0), 0.1, recipe="exact")


def test_experiment_rows_and_determinism():
    cands = [CandidateSpec("gp", "sqrt"), CandidateSpec("classifier")]
    kwargs = dict(n_values=(30, 40), reps=2, seed=3, grid_spec=GridSpec(64))
    a = run_experiment("gaussian1", cands, **kwargs)
    b = run_experiment("gaussian1", cands, **kwargs)
    assert len(a) == 2 * 2 * 3
    assert [r.row() for r in a] == [r.row() for r in b]
    for r in a:
        assert 0.0 <= r.tv <= 1.0
        assert r.failed or r.kl >= 0
    header, rows = median_table(a)
    assert len(rows) == 2 * 3 and header[5] == "median_tv"


def test_failed_fit_is_recorded():
    # Poisson discrepancies hit exact zeros, which the log transform refuses
    res = run_experiment("poisson", [CandidateSpec("gp", "log")], n_values=(60,), reps=1,
                         include_rejection=False, grid_spec=GridSpec(64))
    assert len(res) == 1
    assert res[0].failed.startswith("TransformDomainError")
    assert res[0].tv == 1.0 and math.isnan(res[0].kl)


def test_candidate_specs_cross_product():
    specs, rejection = candidate_specs(["gp", "gp-indep", "classifier", "rejection"], ["se", "log", "sqrt"])
    assert len(specs) == 7 and rejection


def test_experiment_validation():
    with pytest.raises(ContractViolation):
        run_experiment("gaussian1", [], reps=0)
    with pytest.raises(ContractViolation):
        run_experiment("gaussian1", [], baseline="exact")
    with pytest.raises(ContractViolation):
        run_experiment("nope", [])
