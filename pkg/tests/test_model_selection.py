import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from gpabc.exceptions import ContractViolation, SelectionError
from gpabc.model_selection import (
    CandidateSpec,
    CVScore,
    UtilityEntry,
    UtilityReport,
    classifier_utility,
    default_candidates,
    evaluate_candidates,
    make_folds,
    mlpd_utility,
    select_candidate,
)


class ConstModel:
    """Mock surrogate with a fixed tail probability or a per-point density."""

    def __init__(self, p=0.5, lpd=None):
        self.p = p
        self.lpd = lpd

    def log_tail_probabilities(self, q, eps):
        n = np.asarray(q).shape[0]
        return np.full(n, np.log(self.p)), np.full(n, np.log1p(-self.p))

    def log_predictive_density(self, q, y):
        return self.lpd(q, y)


def data(t=20, seed=0):
    r = np.random.default_rng(seed)
    x = r.uniform(0, 1, (t, 1))
    return x, r.exponential(size=t)


def test_fold_sizes():
    folds = make_folds(20, 10, seed=1)
    assert [f.size for f in folds] == [2] * 10
    folds = make_folds(23, 10, seed=1)
    assert sorted(f.size for f in folds) == [2] * 7 + [3] * 3
    assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(23))


@given(st.integers(10, 200), st.integers(2, 10), st.integers(0, 99))
def test_folds_deterministic_partition(t, k, seed):
    a, b = make_folds(t, k, seed), make_folds(t, k, seed)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert np.array_equal(np.sort(np.concatenate(a)), np.arange(t))


def test_oracle_density_gives_zero_mlpd():
    x, d = data()
    cand = CandidateSpec("gp", "se")
    # predicts Normal(delta_i, 1/(2 pi)) at each point: density 1 everywhere
    sd = np.sqrt(1 / (2 * np.pi))
    lookup = {float(xi): di for xi, di in zip(x[:, 0], d)}
    model = ConstModel(lpd=lambda q, y: stats.norm.logpdf(y, [lookup[float(v)] for v in q[:, 0]], sd))
    res = mlpd_utility(x, d, cand, make_folds(20, 10), fitter=lambda train: model)
    assert res.score == pytest.approx(0.0, abs=1e-12)


def test_mlpd_matches_direct_loop():
    x, d = data()
    cand = CandidateSpec("gp", "sqrt")
    folds = make_folds(20, 5, seed=3)

    def fitter(train):
        mu, sd = np.mean(np.sqrt(d[train])), np.std(np.sqrt(d[train]))
        return ConstModel(lpd=lambda q, y: stats.norm.logpdf(y, mu, sd))

    res = mlpd_utility(x, d, cand, folds, fitter=fitter)
    total = 0.0
    for f in folds:
        train = np.setdiff1d(np.arange(20), f)
        mu, sd = np.mean(np.sqrt(d[train])), np.std(np.sqrt(d[train]))
        y = d[f]
        total += np.sum(stats.norm.logpdf(np.sqrt(y), mu, sd) - np.log(2 * np.sqrt(y)))
    assert res.score == pytest.approx(total / 20, rel=1e-12)


def test_mlpd_shifts_with_constant():
    x, d = data()
    cand = CandidateSpec("gp", "se")
    folds = make_folds(20, 10)
    base = mlpd_utility(x, d, cand, folds, fitter=lambda t: ConstModel(lpd=lambda q, y: -y))
    shifted = mlpd_utility(x, d, cand, folds, fitter=lambda t: ConstModel(lpd=lambda q, y: -y + 1.7))
    assert shifted.score - base.score == pytest.approx(1.7, abs=1e-12)


def test_mlpd_rejects_classifier():
    x, d = data()
    with pytest.raises(ContractViolation):
        mlpd_utility(x, d, CandidateSpec("classifier"), make_folds(20, 10))


def test_classifier_utility_examples():
    x, d = data()
    folds = make_folds(20, 10)
    cand = CandidateSpec("gp", "se")
    half = classifier_utility(x, d, cand, 0.5, folds, fitter=lambda t: ConstModel(0.5))
    assert half.score == pytest.approx(np.log(0.5))
    allin = classifier_utility(x, d, cand, 1e9, folds, fitter=lambda t: ConstModel(0.9))
    assert allin.score == pytest.approx(-0.105361, abs=1e-6)


def test_classifier_utility_transform_invariant():
    x, d = data(40)
    folds = make_folds(40, 10, seed=2)
    eps = float(np.quantile(d, 0.3))
    probs = np.random.default_rng(0).uniform(0.05, 0.95, 40)
    lookup = {float(v): p for v, p in zip(x[:, 0], probs)}

    class Mock(ConstModel):
        def log_tail_probabilities(self, q, e):
            p = np.array([lookup[float(v)] for v in q[:, 0]])
            return np.log(p), np.log1p(-p)

    scores = [
        classifier_utility(x, d, CandidateSpec("gp", t), eps, folds, fitter=lambda tr: Mock()).score
        for t in ("se", "sqrt", "log")
    ]
    assert scores[0] == scores[1] == scores[2]
    assert scores[0] <= 0


@given(st.floats(0.01, 0.99), st.integers(0, 50))
def test_classifier_utility_nonpositive(p, seed):
    x, d = data(20, seed)
    res = classifier_utility(x, d, CandidateSpec("gp"), 1.0, make_folds(20, 10), fitter=lambda t: ConstModel(p))
    assert res.score <= 0


def test_failed_folds_disqualify():
    x, d = data()
    calls = {"n": 0}

    def fitter(train):
        calls["n"] += 1
        if calls["n"] <= 3:
            raise ValueError("no positives")
        return ConstModel(0.5)

    res = classifier_utility(x, d, CandidateSpec("gp"), 1.0, make_folds(20, 10), fitter=fitter)
    assert res.failed_folds == 3 and res.disqualified
    assert res.score == pytest.approx(np.log(0.5))


def report(scores, failed=None):
    cands = [CandidateSpec("gp", t) for t in ("se", "log", "sqrt")][: len(scores)]
    failed = failed or [0] * len(scores)
    return UtilityReport(
        [UtilityEntry(c, "mlpd", CVScore(s, f)) for c, s, f in zip(cands, scores, failed)], 0
    )


def test_select_examples():
    assert select_candidate(report([-1.0])).name == "gp/se"
    assert select_candidate(report([-0.2, -0.1, -0.3])).name == "gp/log"
    assert select_candidate(report([-0.2, -0.2])).name == "gp/se"
    assert select_candidate(report([-0.2, -0.1], failed=[0, 3])).name == "gp/se"
    with pytest.raises(SelectionError):
        select_candidate(report([-0.2], failed=[5]))


def test_winner_is_argmax_of_mock_scores():
    x, d = data(30)
    cands = [CandidateSpec("gp", "se"), CandidateSpec("classifier")]
    fitters = {"gp/se": lambda t: ConstModel(0.5), "classifier": lambda t: ConstModel(0.1)}
    eps = threshold = float(np.quantile(d, 0.1))
    rep = evaluate_candidates(x, d, cands, "classifier", eps, k=10, fitters=fitters)
    scores = rep.scores("classifier")
    assert select_candidate(rep).name == max(scores, key=scores.get)


def test_report_formatting(tmp_path):
    rep = UtilityReport([UtilityEntry(CandidateSpec("classifier"), "classifier", CVScore(-0.101, 0))], 0)
    path = tmp_path / "u.csv"
    rep.to_csv(path)
    assert path.read_text().splitlines()[1] == "classifier,se,classifier,-0.101,0"


def test_default_candidates():
    names = [c.name for c in default_candidates()]
    assert names == ["gp/se", "gp/log", "gp/sqrt", "gp-indep/se", "gp-indep/log", "gp-indep/sqrt", "classifier"]
    assert CandidateSpec("classifier", "sqrt").transform == "se"


def test_real_fits_end_to_end():
    r = np.random.default_rng(0)
    x = r.uniform(-2, 4, 60)
    d = (x - 1.0) ** 2 + r.exponential(0.3, 60)
    cands = [CandidateSpec("gp", "se"), CandidateSpec("gp", "sqrt"), CandidateSpec("classifier")]
    eps = float(np.quantile(d, 0.2))
    rep = evaluate_candidates(x[:, None], d, cands, "classifier", eps, k=5, seed=1)
    assert all(np.isfinite(e.score) and e.score <= 0 for e in rep.entries)
    rep2 = evaluate_candidates(x[:, None], d, cands[:2], "mlpd", k=5, seed=1)
    assert all(np.isfinite(e.score) for e in rep2.entries)
