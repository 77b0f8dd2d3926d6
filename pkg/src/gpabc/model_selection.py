"""K-fold cross-validated utilities for choosing a surrogate and transform.

Two criteria are available:

``mlpd``
    Mean held-out log predictive density of the raw discrepancy. Densities
    from transformed-scale models are mapped back with the log-Jacobian so
    candidates with different transforms are comparable. Regression only.
``classifier``
    Mean held-out log probability of the side of the threshold each held-out
    discrepancy actually fell on. Any surrogate with a tail probability works.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import transforms
from .exceptions import ContractViolation, GPABCError, SelectionError
from .io import write_csv
from .surrogates import fit_surrogate
from .surrogates.base import TrainingSet

CRITERIA = ("mlpd", "classifier")
MODEL_KINDS = {"gp": "standard", "gp-indep": "inputdep", "classifier": "classifier"}
KIND_MODELS = {v: k for k, v in MODEL_KINDS.items()}
MAX_FAILED_FOLDS = 2


@dataclass(frozen=True)
class CandidateSpec:
    """One surrogate formulation: kind, discrepancy transform and (classifier) link."""

    kind: str
    transform: str = "se"
    link: str = "logit"

    def __post_init__(self):
        kind = MODEL_KINDS.get(self.kind, self.kind)
        if kind not in KIND_MODELS:
            raise ContractViolation(f"unknown surrogate kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "transform", transforms.as_transform(self.transform).value)
        if kind == "classifier":
            # labels do not depend on the transform
            object.__setattr__(self, "transform", "se")

    @property
    def model(self):
        return KIND_MODELS[self.kind]

    @property
    def name(self):
        return self.model if self.kind == "classifier" else f"{self.model}/{self.transform}"

    @property
    def is_regression(self):
        return self.kind != "classifier"


def default_candidates():
    """Standard and input-dependent GP under se/log/sqrt, plus the classifier."""
    out = [CandidateSpec(k, t) for k in ("standard", "inputdep") for t in transforms.TRANSFORMS]
    return out + [CandidateSpec("classifier")]


def make_folds(t, k=10, seed=0):
    """Seeded shuffle of ``range(t)`` cut into ``k`` contiguous chunks (sizes differ by <= 1)."""
    if k < 2:
        raise ContractViolation("need k >= 2 folds")
    if t < k:
        raise ContractViolation(f"cannot split {t} points into {k} folds")
    perm = np.random.default_rng(seed).permutation(t)
    return [np.sort(chunk) for chunk in np.array_split(perm, k)]


def fit_candidate(candidate, params, deltas_raw, eps_raw=None, *, box=None, seed=0, q_level=0.05, **kwargs):
    """Fit ``candidate`` on raw discrepancies (transformed here as needed)."""
    y = transforms.apply(candidate.transform, deltas_raw)
    training = TrainingSet(params, y, candidate.transform)
    eps = None if eps_raw is None else transforms.transform_threshold(candidate.transform, eps_raw)
    return fit_surrogate(
        candidate.kind,
        training,
        eps=eps,
        box=box,
        seed=seed,
        q_level=q_level,
        link=candidate.link,
        **kwargs,
    )


@dataclass
class CVScore:
    """Cross-validated utility of one candidate.

    ``score`` averages over points of folds that fitted; ``failed_folds``
    counts the rest. More than two failures disqualify the candidate.
    """

    score: float
    failed_folds: int
    fold_scores: list = field(default_factory=list)
    fold_errors: dict = field(default_factory=dict)

    @property
    def disqualified(self):
        return self.failed_folds > MAX_FAILED_FOLDS or not np.isfinite(self.score)

    def __float__(self):
        return float(self.score)


def _cross_validate(params, point_utility, folds, fitter):
    params = np.asarray(params, dtype=float)
    if params.ndim == 1:
        params = params[:, None]
    t = params.shape[0]
    all_idx = np.arange(t)
    total, count, failed = 0.0, 0, 0
    fold_scores, errors = [], {}
    for j, test in enumerate(folds):
        train = np.setdiff1d(all_idx, test)
        try:
            model = fitter(train)
            u = np.asarray(point_utility(model, test), dtype=float)
            if not np.all(np.isfinite(u)):
                raise GPABCError("non-finite held-out utility")
        except (GPABCError, ValueError, np.linalg.LinAlgError) as exc:
            failed += 1
            fold_scores.append(np.nan)
            errors[j] = f"{type(exc).__name__}: {exc}"
            continue
        fold_scores.append(float(np.mean(u)))
        total += float(np.sum(u))
        count += u.size
    score = total / count if count else np.nan
    return CVScore(score, failed, fold_scores, errors)


def _default_fitter(candidate, params, deltas_raw, eps_raw, box, seed, q_level, init_fit, fit_kwargs):
    params = np.asarray(params, dtype=float)

    def fitter(train):
        kwargs = dict(fit_kwargs)
        if init_fit is not None:
            # warm start from the full-data MAP with a single local search
            kwargs.setdefault("init", init_fit.hyperparams)
            kwargs.setdefault("restarts", 0)
        return fit_candidate(
            candidate,
            params[train],
            np.asarray(deltas_raw)[train],
            eps_raw,
            box=box,
            seed=seed,
            q_level=q_level,
            **kwargs,
        )

    return fitter


def mlpd_utility(
    params,
    deltas_raw,
    candidate,
    folds,
    *,
    box=None,
    seed=0,
    fitter: Optional[Callable] = None,
    init_fit=None,
    fit_kwargs=None,
):
    """Mean held-out log predictive density on the raw discrepancy scale.

    Parameters
    ----------
    params : array_like, shape (t, p)
    deltas_raw : array_like, shape (t,)
        Untransformed discrepancies.
    candidate : CandidateSpec
        Must be a regression surrogate.
    folds : list of index arrays
    fitter : callable, optional
        ``fitter(train_idx) -> model`` with ``log_predictive_density``; replaces
        the GP fit (used for mock models).
    init_fit : fitted surrogate, optional
        Full-data fit whose hyperparameters warm-start every fold refit.
    """
    if not candidate.is_regression:
        raise ContractViolation("the mlpd utility needs a regression surrogate")
    deltas_raw = np.asarray(deltas_raw, dtype=float)
    fitter = fitter or _default_fitter(
        candidate, params, deltas_raw, None, box, seed, 0.05, init_fit, fit_kwargs or {}
    )
    params2 = np.asarray(params, dtype=float).reshape(deltas_raw.size, -1)

    def point_utility(model, test):
        d = deltas_raw[test]
        y = transforms.apply(candidate.transform, d)
        lpd = np.asarray(model.log_predictive_density(params2[test], y), dtype=float)
        return lpd + transforms.log_jacobian(candidate.transform, d)

    return _cross_validate(params2, point_utility, folds, fitter)


def classifier_utility(
    params,
    deltas_raw,
    candidate,
    eps_raw,
    folds,
    *,
    box=None,
    seed=0,
    q_level=0.05,
    fitter: Optional[Callable] = None,
    init_fit=None,
    fit_kwargs=None,
):
    """Mean held-out log probability of the realised side of ``eps_raw``.

    Each candidate sees the threshold transported by its own transform.
    ``fitter(train_idx)`` may supply any model with ``log_tail_probabilities``.
    """
    deltas_raw = np.asarray(deltas_raw, dtype=float)
    fitter = fitter or _default_fitter(
        candidate, params, deltas_raw, eps_raw, box, seed, q_level, init_fit, fit_kwargs or {}
    )
    params2 = np.asarray(params, dtype=float).reshape(deltas_raw.size, -1)
    below = deltas_raw <= eps_raw

    def point_utility(model, test):
        eps_t = transforms.transform_threshold(candidate.transform, eps_raw)
        log_lo, log_hi = model.log_tail_probabilities(params2[test], eps_t)
        return np.where(below[test], log_lo, log_hi)

    return _cross_validate(params2, point_utility, folds, fitter)


@dataclass
class UtilityEntry:
    candidate: CandidateSpec
    criterion: str
    result: CVScore

    @property
    def score(self):
        return self.result.score

    @property
    def disqualified(self):
        return self.result.disqualified


@dataclass
class UtilityReport:
    """Per-candidate CV utilities in candidate-list order."""

    entries: list
    fold_seed: int
    k: int = 10

    def scores(self, criterion):
        return {e.candidate.name: e.score for e in self.entries if e.criterion == criterion}

    def rows(self):
        return [
            (e.candidate.model, e.candidate.transform, e.criterion, e.score, e.result.failed_folds)
            for e in self.entries
        ]

    def to_csv(self, path, metadata=None):
        header = ["candidate", "transform", "criterion", "score", "failed_folds"]
        write_csv(path, header, self.rows(), metadata)


def evaluate_candidates(
    params,
    deltas_raw,
    candidates,
    criterion,
    eps_raw=None,
    *,
    k=10,
    seed=0,
    box=None,
    q_level=0.05,
    full_fits=None,
    fitters=None,
    fit_kwargs=None,
):
    """Score every candidate under one criterion with shared folds.

    Parameters
    ----------
    full_fits : dict, optional
        Candidate name -> full-data fit used to warm-start fold refits.
    fitters : dict, optional
        Candidate name -> ``fitter(train_idx)`` override (mock models).
    """
    if criterion not in CRITERIA:
        raise ContractViolation(f"criterion must be one of {CRITERIA}")
    if criterion == "classifier" and eps_raw is None:
        raise ContractViolation("the classifier utility needs eps_raw")
    deltas_raw = np.asarray(deltas_raw, dtype=float)
    folds = make_folds(deltas_raw.size, k, seed)
    entries = []
    for cand in candidates:
        init = (full_fits or {}).get(cand.name)
        fitter = (fitters or {}).get(cand.name)
        if criterion == "mlpd":
            res = mlpd_utility(
                params, deltas_raw, cand, folds, box=box, seed=seed, fitter=fitter,
                init_fit=init, fit_kwargs=fit_kwargs,
            )
        else:
            res = classifier_utility(
                params, deltas_raw, cand, eps_raw, folds, box=box, seed=seed, q_level=q_level,
                fitter=fitter, init_fit=init, fit_kwargs=fit_kwargs,
            )
        entries.append(UtilityEntry(cand, criterion, res))
    return UtilityReport(entries, seed, k)


def select_candidate(report, criterion=None):
    """Highest-utility candidate that is not disqualified; ties go to the earlier one."""
    best, best_score = None, -np.inf
    for e in report.entries:
        if criterion is not None and e.criterion != criterion:
            continue
        if e.disqualified:
            continue
        if e.score > best_score:
            best, best_score = e.candidate, e.score
    if best is None:
        raise SelectionError("every candidate is disqualified under this criterion")
    return best
