"""Homoscedastic GP regression on (transformed) discrepancies."""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import log_ndtr, ndtr

from ..exceptions import ContractViolation
from ..kernel import (
    SEHyperparams,
    as_points,
    chol_inverse,
    default_hyperpriors,
    se_cross,
    sq_dist_per_dim,
    stable_cholesky,
    trimmed_mean,
)
from ..transforms import DiscrepancyTransform
from .base import TrainingSet, is_single_point, multistart_minimize, projected_gradient

LOG2PI = np.log(2 * np.pi)
DEFAULT_RESTARTS = 10


def log_prior_mean(training):
    """Constant prior mean: trimmed mean of log-discrepancies (clamped <= 0) under log, else 0."""
    if training.transform_tag is DiscrepancyTransform.LOG:
        return min(trimmed_mean(training.discrepancies), 0.0)
    return 0.0


def _hyperprior_terms(h, priors):
    """Log hyperprior and its gradient in log-hyperparameter space."""
    p = h.dim
    grad = np.zeros(p + 2)
    if priors is None:
        return 0.0, grad
    sf = np.sqrt(h.signal_variance)
    val = float(priors.magnitude.logpdf(sf))
    grad[0] = priors.magnitude.dlogpdf(sf) * sf / 2
    for i, (prior, ell) in enumerate(zip(priors.lengthscale, h.lengthscales)):
        val += float(prior.logpdf(ell))
        grad[1 + i] = prior.dlogpdf(ell) * ell
    if priors.noise_variance is not None:
        sn = np.sqrt(h.noise_variance)
        val += float(priors.noise_variance.logpdf(sn))
        grad[-1] = priors.noise_variance.dlogpdf(sn) * sn / 2
    return val, grad


def marginal_loglik_and_gradient(training, h, priors=None, prior_mean=0.0, _dists=None):
    """Gaussian log marginal likelihood plus log hyperprior.

    Parameters
    ----------
    training : TrainingSet
    h : SEHyperparams
    priors : HyperPriorSpec or None
        ``None`` drops the hyperprior term entirely.
    prior_mean : float
        Constant prior mean subtracted from the discrepancies.

    Returns
    -------
    value : float
    gradient : ndarray
        Derivatives with respect to ``(log sf2, log l_1..l_p, log noise)``.
    """
    x = training.params
    y = training.discrepancies - prior_mean
    t = y.size
    Kse = se_cross(x, x, h.signal_variance, h.lengthscales)
    np.fill_diagonal(Kse, h.signal_variance)
    K = Kse.copy()
    K[np.diag_indices(t)] += h.noise_variance
    L, _ = stable_cholesky(K)
    alpha = linalg.cho_solve((L, True), y, check_finite=False)
    value = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * t * LOG2PI

    Kinv = chol_inverse(L)
    Q = np.outer(alpha, alpha) - Kinv
    dists = _dists if _dists is not None else sq_dist_per_dim(x)
    grad = np.empty(h.dim + 2)
    QK = Q * Kse
    grad[0] = 0.5 * np.sum(QK)
    for i, D in enumerate(dists):
        grad[1 + i] = 0.5 * np.sum(QK * D) / h.lengthscales[i] ** 2
    grad[-1] = 0.5 * h.noise_variance * np.trace(Q)

    pv, pg = _hyperprior_terms(h, priors)
    return float(value + pv), grad + pg


@dataclass(frozen=True, eq=False)
class StandardGPFit:
    """A fitted standard GP. Immutable; safe to query from many threads."""

    hyperparams: SEHyperparams
    training: TrainingSet
    chol: np.ndarray
    weights: np.ndarray
    prior_mean_const: float = 0.0
    jitter: float = 0.0
    objective: float = np.nan
    gradient: np.ndarray = None
    diagnostics: list = field(default_factory=list)

    kind = "standard"

    def predict(self, q):
        """Latent predictive mean and variance at one or many points.

        Returns floats for a single point and arrays for a stack of points.
        """
        Q = as_points(q, self.training.dim)
        h = self.hyperparams
        Ks = se_cross(Q, self.training.params, h.signal_variance, h.lengthscales)
        mean = self.prior_mean_const + Ks @ self.weights
        v = linalg.solve_triangular(self.chol, Ks.T, lower=True, check_finite=False)
        var = np.maximum(h.signal_variance - np.sum(v * v, axis=0), 0.0)
        if is_single_point(q, self.training.dim):
            return float(mean[0]), float(var[0])
        return mean, var

    def predictive_moments(self, q):
        """Mean and total (latent + noise) variance of a new discrepancy."""
        mean, var = self.predict(q)
        return mean, var + self.hyperparams.noise_variance

    def tail_probability(self, q, eps):
        mean, total = self.predictive_moments(q)
        return ndtr((eps - mean) / np.sqrt(total))

    def log_tail_probabilities(self, q, eps):
        """``(log P(d <= eps), log P(d > eps))`` computed without cancellation."""
        mean, total = self.predictive_moments(q)
        z = (eps - mean) / np.sqrt(total)
        return log_ndtr(z), log_ndtr(-z)

    def log_predictive_density(self, q, delta):
        mean, total = self.predictive_moments(q)
        return -0.5 * (LOG2PI + np.log(total) + (delta - mean) ** 2 / total)


def _condition(training, h, prior_mean, **extra):
    x = training.params
    K = se_cross(x, x, h.signal_variance, h.lengthscales)
    K[np.diag_indices_from(K)] = h.signal_variance + h.noise_variance
    L, jitter = stable_cholesky(K)
    weights = linalg.cho_solve((L, True), training.discrepancies - prior_mean, check_finite=False)
    return StandardGPFit(h, training, L, weights, prior_mean, jitter, **extra)


def _bounds(training, prior_mean, ranges):
    y = training.discrepancies
    scale2 = max(float(np.mean((y - prior_mean) ** 2)), 1e-12)
    var = max(float(np.var(y)), 1e-12 * scale2)
    bounds = [(np.log(1e-8 * scale2), np.log(1e4 * scale2))]
    # lengthscales below the typical point spacing make the SE kernel act as
    # white noise, a mode the half-t lengthscale prior would otherwise favour
    spacing = float(y.size) ** (-1.0 / training.dim)
    bounds += [(np.log(max(1e-3, spacing) * r), np.log(1e3 * r)) for r in ranges]
    # noise floor: sigma^2 >= 1e-10 var(delta)
    bounds.append((np.log(1e-10 * var), np.log(1e4 * scale2)))
    return bounds, var


def _starts(priors, var, restarts, rng, p):
    starts = []
    for _ in range(restarts):
        sf = priors.magnitude.sample_positive(rng)
        ls = [pr.sample_positive(rng) for pr in priors.lengthscale]
        noise = var * 10 ** rng.uniform(-3, 0)
        starts.append(np.concatenate([[2 * np.log(sf)], np.log(ls), [np.log(noise)]]))
    return starts


def fit_standard_gp(
    training,
    priors=None,
    seed=0,
    *,
    box=None,
    restarts=DEFAULT_RESTARTS,
    hyperparams=None,
    init=None,
    hyper_subsample=None,
):
    """MAP fit of a standard GP.

    Parameters
    ----------
    training : TrainingSet
    priors : HyperPriorSpec, optional
        Defaults to :func:`default_hyperpriors` on ``box`` (or the data's bounding box).
    seed : int
        Seeds the restart initialisations; equal seeds give identical fits.
    restarts : int
        Number of random initialisations drawn from the hyperpriors.
    hyperparams : SEHyperparams, optional
        Skip optimisation and condition on these values.
    init : SEHyperparams, optional
        Extra first start (used for warm-started cross-validation refits).
        When given with ``restarts=0`` only this start is used.
    hyper_subsample : int, optional
        Optimise hyperparameters on a seeded subsample of this size when the
        training set is larger, then condition on all points.
    """
    prior_mean = log_prior_mean(training)
    if hyperparams is not None and priors is None:
        return _condition(training, hyperparams, prior_mean)
    if training.size < 2:
        raise ContractViolation("standard GP needs at least 2 training points")
    if priors is None:
        priors = default_hyperpriors(
            "standard", box if box is not None else _data_box(training), training.discrepancies
        )
    if hyperparams is not None:
        return _condition(training, hyperparams, prior_mean)

    rng = np.random.default_rng(seed)
    opt_set = training
    if hyper_subsample is not None and training.size > hyper_subsample:
        idx = np.sort(rng.choice(training.size, hyper_subsample, replace=False))
        opt_set = training.subset(idx)
    ranges = [2 * pr.scale for pr in priors.lengthscale]
    bounds, var = _bounds(opt_set, prior_mean, ranges)
    dists = sq_dist_per_dim(opt_set.params)
    p = training.dim

    def negobj(psi):
        h = SEHyperparams.from_log(psi, p)
        val, grad = marginal_loglik_and_gradient(opt_set, h, priors, prior_mean, dists)
        return -val, -grad

    starts = [] if init is None else [init.to_log()]
    starts += _starts(priors, var, restarts, rng, p)
    psi, best, diagnostics = multistart_minimize(negobj, starts, bounds)
    h = SEHyperparams.from_log(psi, p)
    _, grad = marginal_loglik_and_gradient(opt_set, h, priors, prior_mean, dists)
    grad = projected_gradient(psi, grad, bounds)
    return _condition(
        training, h, prior_mean, objective=-best, gradient=grad, diagnostics=diagnostics
    )


def _data_box(training):
    lo = training.params.min(axis=0)
    hi = training.params.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    return lo, hi


def predict(fit, q):
    return fit.predict(q)


def tail_probability(fit, q, eps):
    return fit.tail_probability(q, eps)


def log_predictive_density(fit, q, delta):
    return fit.log_predictive_density(q, delta)
