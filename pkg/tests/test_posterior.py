import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from gpabc.exceptions import ContractViolation, DegeneratePosteriorError, EstimationError
from gpabc.posterior import (
    GridSpec,
    PosteriorGrid,
    PriorBox,
    SimulationRecord,
    empty_grid,
    grid_points,
    kde_posterior,
    kl_divergence,
    rejection_sample,
    surrogate_posterior,
    threshold_from_quantile,
    tv_distance,
)

UNIT = PriorBox([0.0], [1.0])


def grid_of(fn, box, nodes=None):
    axes = GridSpec(nodes).axes(box)
    pts = grid_points(axes)
    return PosteriorGrid.from_unnormalized(axes, fn(pts).reshape(tuple(a.size for a in axes)))


def random_grid(seed, nodes=64):
    r = np.random.default_rng(seed)
    return PosteriorGrid.from_unnormalized(GridSpec(nodes).axes(UNIT), r.random(nodes) + 1e-3)


def test_default_resolution():
    assert GridSpec().counts(1) == (512,)
    assert GridSpec().counts(2) == (128, 128)
    assert GridSpec().counts(3) == (32, 32, 32)
    with pytest.raises(ContractViolation):
        GridSpec((10, 10)).counts(3)


def test_threshold_examples():
    assert threshold_from_quantile(np.arange(1, 101), 0.05) == 5
    d = np.random.default_rng(0).permutation(np.arange(200.0))
    assert threshold_from_quantile(d, 0.05) == 9.0


@given(st.integers(1, 500), st.floats(0.001, 0.999))
def test_acceptance_fraction_bounds(t, q):
    d = np.random.default_rng(t).random(t)
    eps = threshold_from_quantile(d, q)
    frac = np.mean(d <= eps)
    assert q - 1e-9 <= frac <= q + 1.0 / t + 1e-12


@given(st.floats(0.01, 0.98), st.floats(0.001, 0.01))
def test_threshold_monotone_in_q(q, dq):
    d = np.random.default_rng(1).exponential(size=300)
    assert threshold_from_quantile(d, q + dq) >= threshold_from_quantile(d, q)


def test_rejection_examples():
    recs = [SimulationRecord([float(i)], d) for i, d in enumerate([5, 1, 3, 2, 4], start=1)]
    acc = rejection_sample(recs, 2.5)
    assert {float(a[0]) for a in acc} == {2.0, 4.0}
    assert rejection_sample(recs, 0.5) == []


def test_rejection_rate_at_quantile():
    r = np.random.default_rng(2)
    d = r.random(10_000)
    q = 0.05
    recs = [SimulationRecord([x], y) for x, y in zip(r.random(10_000), d)]
    rate = len(rejection_sample(recs, threshold_from_quantile(d, q))) / 10_000
    assert q <= rate <= q + 1e-4


@given(st.lists(st.floats(0, 10), min_size=0, max_size=40), st.floats(0, 10))
def test_rejection_equals_filter(ds, eps):
    recs = [SimulationRecord([i], d) for i, d in enumerate(ds)]
    got = [int(a[0]) for a in rejection_sample(recs, eps)]
    assert got == [i for i, d in enumerate(ds) if d <= eps]


def test_negative_discrepancy_rejected():
    with pytest.raises(ContractViolation):
        SimulationRecord([0.0], -1.0)


def test_kde_single_point_peaks_at_nearest_node():
    post = kde_posterior([[0.3141]], PriorBox([0.0], [1.0]), GridSpec(101))
    assert post.axes[0][np.argmax(post.density)] == pytest.approx(0.31)


def test_kde_normal_sample():
    r = np.random.default_rng(0)
    x = r.normal(size=100_000)
    box = PriorBox([-5.0], [5.0])
    x = x[(x > -5) & (x < 5)]
    est = kde_posterior(x[:, None], box)
    ref = grid_of(lambda p: stats.norm.pdf(p[:, 0]), box)
    assert tv_distance(est, ref) <= 0.02
    assert est.total_mass() == pytest.approx(1.0, abs=1e-6)


def test_kde_two_dimensional_normalised():
    r = np.random.default_rng(1)
    box = PriorBox([0.0, -1.0], [2.0, 1.0])
    est = kde_posterior(r.uniform(0, 1, (50, 2)), box, GridSpec(40))
    assert est.total_mass() == pytest.approx(1.0, abs=1e-6)


def test_kde_needs_samples():
    with pytest.raises(EstimationError):
        kde_posterior(np.empty((0, 1)), UNIT)


def test_constant_tail_gives_uniform():
    post = surrogate_posterior(lambda q, e: np.full(q.shape[0], 0.3), UNIT, 0.0)
    np.testing.assert_allclose(post.density, 1.0)
    assert post.total_mass() == pytest.approx(1.0, abs=1e-12)


def test_surrogate_posterior_two_dimensional_normalised():
    box = PriorBox([0.0, 0.0], [1.0, 2.0])
    post = surrogate_posterior(lambda q, e: stats.norm.cdf(e - q.sum(axis=1)), box, 1.0, chunk=1000)
    assert post.shape == (128, 128)
    assert post.total_mass() == pytest.approx(1.0, abs=1e-6)
    assert np.all(post.density >= 0)


def test_zero_tail_is_degenerate():
    with pytest.raises(DegeneratePosteriorError):
        surrogate_posterior(lambda q, e: np.zeros(q.shape[0]), UNIT, 0.0)


def test_tv_examples():
    a = random_grid(0)
    assert tv_distance(a, a) == 0.0
    box = PriorBox([0.0], [2.0])
    left = grid_of(lambda p: (p[:, 0] < 0.9).astype(float), box)
    right = grid_of(lambda p: (p[:, 0] > 1.1).astype(float), box)
    assert tv_distance(left, right) == pytest.approx(1.0, abs=1e-6)
    box = PriorBox([-0.5], [2.0])
    u1 = grid_of(lambda p: ((p[:, 0] >= 0) & (p[:, 0] <= 1)).astype(float), box, 2001)
    u2 = grid_of(lambda p: ((p[:, 0] >= 0.5) & (p[:, 0] <= 1.5)).astype(float), box, 2001)
    assert tv_distance(u1, u2) == pytest.approx(0.5, abs=5e-3)


@given(st.integers(0, 10_000), st.integers(0, 10_000), st.integers(0, 10_000))
def test_tv_is_a_metric(i, j, k):
    a, b, c = random_grid(i), random_grid(j), random_grid(k)
    assert tv_distance(a, b) == tv_distance(b, a)
    assert 0.0 <= tv_distance(a, b) <= 1.0
    assert tv_distance(a, c) <= tv_distance(a, b) + tv_distance(b, c) + 1e-9


def test_kl_examples():
    a = random_grid(3)
    assert kl_divergence(a, a) == 0.0
    box = PriorBox([-8.0], [8.5])
    p = grid_of(lambda x: stats.norm.pdf(x[:, 0]), box, 2001)
    q = grid_of(lambda x: stats.norm.pdf(x[:, 0], 0.5), box, 2001)
    assert kl_divergence(p, q) == pytest.approx(0.125, abs=1e-3)


def test_kl_nonnegative_random_pairs():
    for i in range(100):
        assert kl_divergence(random_grid(2 * i), random_grid(2 * i + 1)) >= 0.0


def test_kl_reports_clamping():
    box = PriorBox([0.0], [1.0])
    p = grid_of(lambda x: np.ones(len(x)), box, 11)
    q = grid_of(lambda x: (x[:, 0] < 0.5).astype(float), box, 11)
    kl, clamped = kl_divergence(p, q, return_clamped=True)
    assert clamped and np.isfinite(kl)


def test_grid_mismatch():
    with pytest.raises(ContractViolation):
        tv_distance(random_grid(0, 64), random_grid(0, 65))


@given(st.integers(1, 3), st.integers(2, 12), st.integers(0, 100))
def test_emitted_grids_normalised(dim, nodes, seed):
    box = PriorBox(np.zeros(dim), np.arange(1, dim + 1, dtype=float))
    r = np.random.default_rng(seed)
    post = PosteriorGrid.from_unnormalized(GridSpec(nodes).axes(box), r.random((nodes,) * dim))
    assert post.total_mass() == pytest.approx(1.0, abs=1e-6)
    for i in range(dim):
        axis, marg = post.marginal(i)
        w = np.gradient(axis)
        w[0] /= 2
        w[-1] /= 2
        assert np.sum(marg * w) == pytest.approx(1.0, abs=1e-6)


def test_uniform_template_and_csv(tmp_path):
    post = empty_grid(PriorBox([0.0, 1.0], [1.0, 3.0]), GridSpec(5))
    path = tmp_path / "g.csv"
    post.to_csv(path, {"note": "x"})
    lines = path.read_text().splitlines()
    assert lines[0] == "theta_1,theta_2,density"
    assert len(lines) == 1 + 25 + 1 and lines[-1] == "# note: x"


def test_prior_box_contract():
    with pytest.raises(ContractViolation):
        PriorBox([1.0], [0.0])
    box = PriorBox([0.0, 0.0], [2.0, 1.0])
    assert box.volume == 2.0
    draws = box.sample(np.random.default_rng(0), 1000)
    assert draws.shape == (1000, 2) and np.all(box.contains(draws))
