"""GP classification of ``1{delta <= eps}``, fitted with the Laplace approximation.

Labels are ``z_i = 2 * 1{delta_i <= eps} - 1``. The latent function has a
constant negative prior mean ``link^-1(q_level)`` because accepted points are
rare. The predictive probability of ``z = +1`` at ``q`` is the modelled tail
probability ``P(delta <= eps | q)``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special
from scipy.special import expit, log_ndtr, logsumexp, ndtr, ndtri

from ..exceptions import ContractViolation, DegenerateLabelsError, FitError
from ..kernel import SEHyperparams, as_points, default_hyperpriors, se_cross, sq_dist_per_dim
from .base import TrainingSet, is_single_point, multistart_minimize, projected_gradient

NEWTON_TOL = 1e-6
NEWTON_MAXITER = 100
DEFAULT_RESTARTS = 5
LINKS = ("logit", "probit")

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(32)
_LOG_GH_WEIGHTS = np.log(_GH_WEIGHTS) - 0.5 * np.log(np.pi)


@dataclass(frozen=True)
class ClassifiedTrainingSet:
    """Parameter points with labels ``+1`` (below threshold) or ``-1``."""

    params: np.ndarray
    labels: np.ndarray
    eps_used: float = np.nan

    def __post_init__(self):
        x = np.asarray(self.params, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        z = np.asarray(self.labels, dtype=float).ravel()
        object.__setattr__(self, "params", x)
        object.__setattr__(self, "labels", z)
        if x.shape[0] != z.size:
            raise ContractViolation("params and labels differ in length")
        if not np.all(np.isin(z, (-1.0, 1.0))):
            raise ContractViolation("labels must be -1 or +1")

    @property
    def size(self):
        return self.labels.size

    @property
    def dim(self):
        return self.params.shape[1]

    @property
    def has_both_classes(self):
        return bool(np.any(self.labels > 0) and np.any(self.labels < 0))


def classify(training, eps):
    """Label a training set: ``+1`` where the discrepancy is at most ``eps``.

    ``eps`` must be on the same scale as ``training.discrepancies``.
    """
    z = np.where(training.discrepancies <= eps, 1.0, -1.0)
    return ClassifiedTrainingSet(training.params, z, float(eps))


class _Link:
    """Log-likelihood ``log p(z | f)`` and its first three derivatives in ``f``."""

    def __init__(self, name):
        if name not in LINKS:
            raise ContractViolation(f"unknown link {name!r}; expected logit or probit")
        self.name = name

    def inverse(self, prob):
        return special.logit(prob) if self.name == "logit" else float(ndtri(prob))

    def derivs(self, z, f):
        if self.name == "logit":
            pi = expit(f)
            ll = -np.logaddexp(0.0, -z * f)
            d1 = (z + 1) / 2 - pi
            w = pi * (1 - pi)
            d3 = -w * (1 - 2 * pi)
            return ll, d1, w, d3
        s = z * f
        ll = log_ndtr(s)
        # ratio N(s) / Phi(s), stable in the left tail
        r = np.exp(-0.5 * s * s - 0.5 * np.log(2 * np.pi) - ll)
        dr = -s * r - r * r
        d1 = z * r
        d2 = dr
        d3 = z * (-r - s * dr - 2 * r * dr)
        return ll, d1, -d2, d3


@dataclass
class _Mode:
    f: np.ndarray
    a: np.ndarray
    chol_B: np.ndarray
    sqrt_w: np.ndarray
    grad_loglik: np.ndarray
    d3: np.ndarray
    psi: float
    log_evidence: float
    grad_norm: float
    iterations: int


def _b_cholesky(K, sw):
    B = (sw[:, None] * K) * sw[None, :]
    B[np.diag_indices_from(B)] += 1.0
    return linalg.cholesky(B, lower=True, check_finite=False)


def _laplace_mode(K, z, m0, link, a0=None, tol=NEWTON_TOL, maxiter=NEWTON_MAXITER):
    """Newton iteration on ``a`` with ``f = m0 + K a`` and backtracking."""
    t = z.size
    a = np.zeros(t) if a0 is None else a0.copy()
    f = m0 + K @ a
    ll, d1, w, d3 = link.derivs(z, f)
    psi = float(np.sum(ll) - 0.5 * a @ (f - m0))
    for it in range(maxiter + 1):
        gnorm = np.linalg.norm(d1 - a)
        if gnorm < tol:
            break
        if it == maxiter:
            raise FitError(f"Newton did not converge in {maxiter} iterations (gradient norm {gnorm:.3g})")
        sw = np.sqrt(np.maximum(w, 0.0))
        L = _b_cholesky(K, sw)
        b = w * (f - m0) + d1
        c = linalg.cho_solve((L, True), sw * (K @ b), check_finite=False)
        da = b - sw * c - a
        df = K @ da
        step = 1.0
        for _ in range(50):
            a_try = a + step * da
            f_try = f + step * df
            ll_try = link.derivs(z, f_try)[0]
            psi_try = float(np.sum(ll_try) - 0.5 * a_try @ (f_try - m0))
            if psi_try >= psi:
                break
            step *= 0.5
        else:
            if gnorm < 1e3 * tol:
                break
            raise FitError(f"line search failed (gradient norm {gnorm:.3g})")
        a, f, psi = a_try, f_try, psi_try
        ll, d1, w, d3 = link.derivs(z, f)
    sw = np.sqrt(np.maximum(w, 0.0))
    L = _b_cholesky(K, sw)
    log_z = psi - np.sum(np.log(np.diag(L)))
    return _Mode(f, a, L, sw, d1, d3, psi, float(log_z), float(gnorm), it)


def _prior_terms(h, priors):
    grad = np.zeros(h.dim + 1)
    if priors is None:
        return 0.0, grad
    sf = np.sqrt(h.signal_variance)
    val = float(priors.magnitude.logpdf(sf))
    grad[0] = priors.magnitude.dlogpdf(sf) * sf / 2
    for i, (pr, ell) in enumerate(zip(priors.lengthscale, h.lengthscales)):
        val += float(pr.logpdf(ell))
        grad[1 + i] = pr.dlogpdf(ell) * ell
    return val, grad


def classifier_evidence_and_gradient(data, h, priors, prior_mean, link="logit", a0=None, _dists=None):
    """Laplace log evidence + log hyperprior with its exact gradient.

    The gradient is in ``(log sf2, log l_1..l_p)`` and accounts for the
    implicit dependence of the latent mode on the hyperparameters.
    """
    link = link if isinstance(link, _Link) else _Link(link)
    x = data.params
    K = se_cross(x, x, h.signal_variance, h.lengthscales)
    np.fill_diagonal(K, h.signal_variance)
    mode = _laplace_mode(K, data.labels, prior_mean, link, a0)
    L, sw = mode.chol_B, mode.sqrt_w
    V = linalg.solve_triangular(L, np.diag(sw), lower=True, check_finite=False)
    Zm = V.T @ V  # (K + W^-1)^-1
    C = linalg.solve_triangular(L, sw[:, None] * K, lower=True, check_finite=False)
    s2 = 0.5 * (np.diag(K) - np.sum(C * C, axis=0)) * mode.d3
    dists = _dists if _dists is not None else sq_dist_per_dim(x)
    derivs = [K] + [K * D / ell**2 for D, ell in zip(dists, h.lengthscales)]
    grad = np.empty(h.dim + 1)
    for j, dK in enumerate(derivs):
        s1 = 0.5 * mode.a @ dK @ mode.a - 0.5 * np.sum(Zm * dK)
        b = dK @ mode.grad_loglik
        s3 = b - K @ (Zm @ b)
        grad[j] = s1 + s2 @ s3
    pv, pg = _prior_terms(h, priors)
    return mode.log_evidence + pv, grad + pg, mode


@dataclass(frozen=True, eq=False)
class ClassifierGPFit:
    hyperparams: SEHyperparams
    training: ClassifiedTrainingSet
    link: str
    prior_mean_const: float
    latent_mode: np.ndarray
    weights: np.ndarray
    chol_B: np.ndarray
    sqrt_w: np.ndarray
    mode_gradient_norm: float = 0.0
    objective: float = np.nan
    gradient: np.ndarray = None
    diagnostics: list = field(default_factory=list)

    kind = "classifier"

    def latent(self, q):
        """Gaussian approximation ``(mean, variance)`` of the latent function at ``q``."""
        Q = as_points(q, self.training.dim)
        h = self.hyperparams
        ks = se_cross(Q, self.training.params, h.signal_variance, h.lengthscales)
        mean = self.prior_mean_const + ks @ self.weights
        v = linalg.solve_triangular(self.chol_B, (self.sqrt_w[:, None] * ks.T), lower=True, check_finite=False)
        var = np.maximum(h.signal_variance - np.sum(v * v, axis=0), 0.0)
        return mean, var

    def log_tail_probabilities(self, q, eps=None):
        """``(log P(z=+1), log P(z=-1))`` at ``q``; ``eps`` is fixed at fit time."""
        mean, var = self.latent(q)
        if self.link == "probit":
            s = mean / np.sqrt(1.0 + var)
            lo, hi = log_ndtr(s), log_ndtr(-s)
        else:
            f = mean[:, None] + np.sqrt(2.0 * var)[:, None] * _GH_NODES[None, :]
            lo = logsumexp(_LOG_GH_WEIGHTS - np.logaddexp(0.0, -f), axis=1)
            hi = logsumexp(_LOG_GH_WEIGHTS - np.logaddexp(0.0, f), axis=1)
        if is_single_point(q, self.training.dim):
            return float(lo[0]), float(hi[0])
        return lo, hi

    def class_probability(self, q):
        lo, hi = self.log_tail_probabilities(q)
        # normalise the quadrature so p + (1 - p) = 1 exactly
        return np.exp(lo) / (np.exp(lo) + np.exp(hi))

    def tail_probability(self, q, eps=None):
        return self.class_probability(q)


def prior_mean_for_level(q_level, link="logit"):
    """Constant prior mean ``link^-1(q_level)``, e.g. logit(0.05) = -2.9444."""
    if not 0 < q_level < 1:
        raise ContractViolation("q_level must lie in (0, 1)")
    return float(_Link(link).inverse(q_level))


def _build_fit(data, h, priors, prior_mean, link, **extra):
    value, grad, mode = classifier_evidence_and_gradient(data, h, priors, prior_mean, link)
    return ClassifierGPFit(
        h,
        data,
        link,
        prior_mean,
        mode.f,
        mode.a,
        mode.chol_B,
        mode.sqrt_w,
        mode.grad_norm,
        value,
        **extra,
    )


def fit_classifier_gp(
    training,
    eps=None,
    priors=None,
    link="logit",
    seed=0,
    *,
    q_level=0.05,
    prior_mean=None,
    box=None,
    restarts=DEFAULT_RESTARTS,
    hyperparams=None,
    init=None,
):
    """MAP fit of a GP classifier on ``1{delta <= eps}``.

    Parameters
    ----------
    training : TrainingSet or ClassifiedTrainingSet
        With a ``TrainingSet``, ``eps`` (same scale as its discrepancies) is
        required and labels are derived from it.
    link : {"logit", "probit"}
    q_level : float
        Quantile level that produced ``eps``; sets the prior mean.
    prior_mean : float, optional
        Override of the constant prior mean.
    hyperparams : SEHyperparams, optional
        Skip optimisation.

    Raises
    ------
    DegenerateLabelsError
        If all labels fall in one class.
    """
    _Link(link)
    if isinstance(training, TrainingSet):
        if eps is None:
            raise ContractViolation("eps is required to label a TrainingSet")
        data = classify(training, eps)
        disc = training.discrepancies
    else:
        data = training
        disc = data.labels
    if not data.has_both_classes:
        raise DegenerateLabelsError(
            f"all {data.size} labels are {'+1' if data.labels[0] > 0 else '-1'}; "
            "enlarge eps or use a regression surrogate"
        )
    m0 = prior_mean_for_level(q_level, link) if prior_mean is None else float(prior_mean)
    if priors is None:
        from .standard import _data_box

        priors = default_hyperpriors("classifier", box if box is not None else _data_box(data), disc)
    if hyperparams is not None:
        return _build_fit(data, hyperparams, priors, m0, link)

    p = data.dim
    rng = np.random.default_rng(seed)
    ranges = [5 * pr.scale for pr in priors.lengthscale]
    bounds = [(np.log(1e-4), np.log(1e4))]
    bounds += [(np.log(1e-2 * r), np.log(1e2 * r)) for r in ranges]
    dists = sq_dist_per_dim(data.params)
    warm = {"a": None}
    lk = _Link(link)

    def negobj(psi):
        h = SEHyperparams.from_log(psi, p, with_noise=False)
        val, grad, mode = classifier_evidence_and_gradient(data, h, priors, m0, lk, warm["a"], dists)
        warm["a"] = mode.a
        return -val, -grad

    starts = [] if init is None else [init.to_log(with_noise=False)]
    for _ in range(restarts):
        sf = priors.magnitude.sample_positive(rng)
        ls = [pr.sample_positive(rng) for pr in priors.lengthscale]
        starts.append(np.concatenate([[2 * np.log(sf)], np.log(ls)]))

    best_psi, best_val, diagnostics = None, np.inf, []
    for i, s in enumerate(starts):
        warm["a"] = None
        try:
            psi, val, diag = multistart_minimize(negobj, [s], bounds, gtol=1e-6, maxiter=300)
        except FitError as exc:
            diagnostics.extend(dict(d, restart=i) for d in exc.diagnostics)
            continue
        diagnostics.extend(dict(d, restart=i) for d in diag)
        if val < best_val:
            best_psi, best_val = psi, val
    if best_psi is None:
        raise FitError("all restarts failed numerically", diagnostics)
    h = SEHyperparams.from_log(best_psi, p, with_noise=False)
    fit = _build_fit(data, h, priors, m0, link, diagnostics=diagnostics)
    grad = classifier_evidence_and_gradient(data, h, priors, m0, link)[1]
    object.__setattr__(fit, "gradient", projected_gradient(best_psi, grad, bounds))
    return fit


def class_probability(fit, q):
    return fit.class_probability(q)
