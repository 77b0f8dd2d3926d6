"""Repeated benchmark experiments comparing surrogates against a reference posterior."""

from dataclasses import dataclass
import math

import numpy as np

from .. import transforms
from ..exceptions import ContractViolation, GPABCError
from ..io import write_csv
from ..model_selection import (
    CRITERIA,
    CandidateSpec,
    default_candidates,
    evaluate_candidates,
    fit_candidate,
    select_candidate,
)
from ..posterior import (
    kde_posterior,
    kl_divergence,
    surrogate_posterior,
    threshold_from_quantile,
    tv_distance,
)
from .problems import PROBLEMS, get_problem
from .reference import reference_posterior

RESULT_COLUMNS = ["problem", "model", "transform", "n", "rep", "tv", "kl", "failed"]
BASELINES = {"abc": "analytic-abc", "abc-mc": "mc-abc", "true": "analytic-true"}

# stream tags below the (seed, problem, rep, n) prefix
STREAM_OBSERVED, STREAM_THETA, STREAM_SIM, STREAM_FIT, STREAM_REF = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class ExperimentResult:
    problem: str
    model: str
    transform: str
    n: int
    rep: int
    tv: float
    kl: float
    failed: str = ""
    seed_path: tuple = ()
    kl_clamped: bool = False

    def row(self):
        return [self.problem, self.model, self.transform, self.n, self.rep, self.tv, self.kl, self.failed]


def problem_index(problem):
    return list(PROBLEMS).index(problem.name)


def _rng(seed, pidx, rep, n, stream):
    return np.random.default_rng([seed, pidx, rep, n, stream])


def _int_seed(seed, pidx, rep, n, stream):
    return int(np.random.SeedSequence([seed, pidx, rep, n, stream]).generate_state(1)[0])


def observed_data(problem, seed, rep):
    """Observed dataset of one repetition; it does not depend on ``n``."""
    return problem.observe(_rng(seed, problem_index(problem), rep, 0, STREAM_OBSERVED))


def simulate_training(problem, observed, seed, rep, n):
    """``n`` prior draws and their raw discrepancies for one repetition."""
    pidx = problem_index(problem)
    theta = problem.prior.sample(_rng(seed, pidx, rep, n, STREAM_THETA), n)
    deltas = problem.simulate(theta, observed, _rng(seed, pidx, rep, n, STREAM_SIM))
    return theta, deltas


def _short(exc):
    msg = str(exc).splitlines()[0] if str(exc) else ""
    return f"{type(exc).__name__}: {msg}"[:120]


def _compare(ref, approx):
    kl, clamped = kl_divergence(ref, approx, return_clamped=True)
    return tv_distance(ref, approx), kl, clamped


def run_repetition(
    problem,
    rep,
    n,
    candidates,
    *,
    q_level=0.05,
    seed=0,
    grid_spec=None,
    baseline="abc",
    include_rejection=True,
    selection=(),
    k=10,
):
    """All result rows for one (repetition, n) cell."""
    pidx = problem_index(problem)
    path = (seed, pidx, rep, n)
    observed = observed_data(problem, seed, rep)
    theta, deltas = simulate_training(problem, observed, seed, rep, n)
    eps = threshold_from_quantile(deltas, q_level)
    ref = reference_posterior(
        problem, observed, eps, grid_spec, seed=_int_seed(*path, STREAM_REF), recipe=BASELINES[baseline]
    )
    fit_seed = _int_seed(*path, STREAM_FIT)
    rows, fits, tvs = [], {}, {}

    def record(model, transform, fn):
        try:
            tv, kl, clamped = fn()
            failed = ""
        except GPABCError as exc:
            tv, kl, clamped, failed = 1.0, math.nan, False, _short(exc)
        rows.append(ExperimentResult(problem.name, model, transform, n, rep, tv, kl, failed, path, clamped))
        return tv

    for cand in candidates:

        def estimate(cand=cand):
            fit = fit_candidate(cand, theta, deltas, eps, box=problem.prior, seed=fit_seed, q_level=q_level)
            fits[cand.name] = fit
            eps_t = transforms.transform_threshold(cand.transform, eps)
            return _compare(ref, surrogate_posterior(fit, problem.prior, eps_t, grid_spec))

        tvs[cand.name] = record(cand.model, cand.transform, estimate)

    if include_rejection:

        def rejection():
            accepted = theta[deltas <= eps]
            return _compare(ref, kde_posterior(accepted, problem.prior, grid_spec))

        record("rejection", "se", rejection)

    for criterion in selection:
        pool = [c for c in candidates if criterion == "classifier" or c.is_regression]

        def select(criterion=criterion, pool=pool):
            report = evaluate_candidates(
                theta, deltas, pool, criterion, eps, k=k, seed=fit_seed, box=problem.prior,
                q_level=q_level, full_fits=fits,
            )
            winner = select_candidate(report, criterion)
            return winner, report

        try:
            winner, _ = select()
            failed = ""
            row_tv = tvs[winner.name]
            prior_row = next(r for r in rows if r.model == winner.model and r.transform == winner.transform)
            kl, clamped = prior_row.kl, prior_row.kl_clamped
            model = f"select-{criterion}:{winner.model}"
            transform = winner.transform
        except GPABCError as exc:
            row_tv, kl, clamped, failed = 1.0, math.nan, False, _short(exc)
            model, transform = f"select-{criterion}", "se"
        rows.append(ExperimentResult(problem.name, model, transform, n, rep, row_tv, kl, failed, path, clamped))
    return rows


def run_experiment(
    problem,
    candidates=None,
    n_values=(50, 100, 200, 400, 600),
    reps=20,
    q_level=0.05,
    seed=0,
    *,
    grid_spec=None,
    baseline="abc",
    include_rejection=True,
    selection=(),
    k=10,
    rep_offset=0,
    progress=None,
):
    """Repeat the benchmark protocol ``reps`` times for each ``n``.

    Per repetition: fresh observed data; per ``n``: fresh prior draws, the
    threshold at quantile ``q_level`` of their discrepancies (shared by all
    methods and the reference), every candidate fitted on the same data.
    Failures are recorded as rows with ``tv = 1`` and the error in ``failed``.

    Parameters
    ----------
    problem : ToyProblem or str
    candidates : list of CandidateSpec, optional
        Defaults to all six regression candidates plus the classifier.
    baseline : {"abc", "abc-mc", "true"}
        Reference: exact ABC posterior, per-node Monte-Carlo ABC posterior,
        or the exact posterior.
    selection : sequence of {"mlpd", "classifier"}
        Also record the TV of the candidate picked by each CV criterion.
    progress : callable, optional
        Called with ``(rep, n)`` before each cell.
    """
    problem = get_problem(problem) if isinstance(problem, str) else problem
    candidates = default_candidates() if candidates is None else list(candidates)
    if reps < 1:
        raise ContractViolation("reps must be >= 1")
    if baseline not in BASELINES:
        raise ContractViolation(f"baseline must be one of {sorted(BASELINES)}")
    for criterion in selection:
        if criterion not in CRITERIA:
            raise ContractViolation(f"unknown selection criterion {criterion!r}")
    results = []
    for rep in range(rep_offset, rep_offset + reps):
        for n in n_values:
            if progress is not None:
                progress(rep, n)
            results.extend(
                run_repetition(
                    problem, rep, n, candidates, q_level=q_level, seed=seed, grid_spec=grid_spec,
                    baseline=baseline, include_rejection=include_rejection, selection=selection, k=k,
                )
            )
    return results


def write_results(path, results, metadata=None):
    write_csv(path, RESULT_COLUMNS, [r.row() for r in results], metadata)


def median_table(results):
    """Median TV and KL per (problem, model, transform, n), in first-seen order."""
    groups = {}
    for r in results:
        groups.setdefault((r.problem, r.model, r.transform, r.n), []).append(r)
    rows = []
    for (prob, model, transform, n), rs in groups.items():
        tv = float(np.median([r.tv for r in rs]))
        kls = [r.kl for r in rs if not math.isnan(r.kl)]
        kl = float(np.median(kls)) if kls else math.nan
        failed = sum(1 for r in rs if r.failed)
        rows.append([prob, model, transform, n, len(rs), round(tv, 4), round(kl, 4), failed])
    return ["problem", "model", "transform", "n", "reps", "median_tv", "median_kl", "failed"], rows


def median_tv(results, model, transform=None, n=None, problem=None):
    vals = [
        r.tv
        for r in results
        if r.model == model
        and (transform is None or r.transform == transform)
        and (n is None or r.n == n)
        and (problem is None or r.problem == problem)
    ]
    if not vals:
        raise ContractViolation(f"no results for {model}/{transform} n={n}")
    return float(np.median(vals))


def candidate_specs(models, transforms_):
    """Cross models (gp, gp-indep, classifier, rejection) with transforms.

    The classifier appears once; ``rejection`` is not a surrogate and is
    returned separately as a flag.
    """
    specs, rejection = [], False
    for m in models:
        if m == "rejection":
            rejection = True
        elif m == "classifier":
            specs.append(CandidateSpec("classifier"))
        else:
            specs.extend(CandidateSpec(m, t) for t in transforms_)
    return specs, rejection
