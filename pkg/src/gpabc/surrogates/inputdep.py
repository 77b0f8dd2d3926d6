"""Input-dependent (heteroscedastic) GP fitted with the Laplace approximation.

Model::

    d_i ~ N(f_i, s2 * exp(g_i)),  f ~ GP(m, k_f),  g ~ GP(0, k_g)

with ``s2`` fixed. The latent vector ``x = (f, g)`` has length ``2t`` and its
prior covariance ``K = blockdiag(K_f, K_g)``. Newton iterations are carried
out on ``a = K^-1 (x - m)`` with ``x = m + K a`` so no inverse of ``K`` is ever
formed. The observed negative Hessian ``W`` of the likelihood is 2x2-block
diagonal and *indefinite*, so the symmetric system ``B = I + L^T W L``
(``K = L L^T``) is used; when ``B`` is not positive definite the step falls
back to the expected (Fisher) information, which is.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import log_ndtr, ndtr

from ..exceptions import ContractViolation, FitError
from ..kernel import as_points, chol_inverse, default_hyperpriors, se_cross, sq_dist_per_dim
from ..kernel import stable_cholesky, trimmed_mean, trimmed_std
from .base import TrainingSet, is_single_point, multistart_minimize
from .standard import LOG2PI, log_prior_mean

NEWTON_TOL = 1e-6
NEWTON_MAXITER = 100
DEFAULT_RESTARTS = 5


@dataclass(frozen=True)
class InputDepHyperparams:
    signal_variance: float
    lengthscales: np.ndarray
    noise_signal_variance: float
    noise_lengthscales: np.ndarray
    fixed_noise: float

    def __post_init__(self):
        for name in ("lengthscales", "noise_lengthscales"):
            object.__setattr__(
                self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            )
        if not (self.signal_variance > 0 and self.noise_signal_variance > 0):
            raise ContractViolation("signal variances must be > 0")
        if not self.fixed_noise > 0:
            raise ContractViolation("fixed_noise must be > 0")
        if np.any(~(self.lengthscales > 0)) or np.any(~(self.noise_lengthscales > 0)):
            raise ContractViolation("lengthscales must be > 0")
        if self.lengthscales.size != self.noise_lengthscales.size:
            raise ContractViolation("f and g lengthscale counts differ")

    @property
    def dim(self):
        return self.lengthscales.size

    def to_log(self):
        return np.concatenate(
            [
                [np.log(self.signal_variance)],
                np.log(self.lengthscales),
                [np.log(self.noise_signal_variance)],
                np.log(self.noise_lengthscales),
            ]
        )

    @classmethod
    def from_log(cls, psi, dim, fixed_noise):
        psi = np.asarray(psi, dtype=float)
        return cls(
            float(np.exp(psi[0])),
            np.exp(psi[1 : dim + 1]),
            float(np.exp(psi[dim + 1])),
            np.exp(psi[dim + 2 : 2 * dim + 2]),
            fixed_noise,
        )


class _Likelihood:
    """Heteroscedastic Gaussian log-likelihood and its derivatives per point."""

    def __init__(self, y, s2):
        self.y = y
        self.s2 = s2

    def value(self, f, g):
        r = self.y - f
        return float(np.sum(-0.5 * (LOG2PI + np.log(self.s2) + g) - 0.5 * r * r * np.exp(-g) / self.s2))

    def derivs(self, f, g):
        r = self.y - f
        u = np.exp(-g) / self.s2
        grad_f = r * u
        grad_g = -0.5 + 0.5 * r * r * u
        # negative Hessian blocks
        w_ff = u
        w_fg = r * u
        w_gg = 0.5 * r * r * u
        return r, u, grad_f, grad_g, w_ff, w_fg, w_gg


@dataclass
class _Mode:
    x: np.ndarray
    a: np.ndarray
    psi: float
    log_evidence: float
    chol_B: np.ndarray
    w: tuple
    fisher: bool
    grad_norm: float
    iterations: int


class _Prior:
    """Block prior covariance with its Cholesky factors."""

    def __init__(self, x, h, prior_mean):
        t = x.shape[0]
        Kf = se_cross(x, x, h.signal_variance, h.lengthscales)
        Kg = se_cross(x, x, h.noise_signal_variance, h.noise_lengthscales)
        np.fill_diagonal(Kf, h.signal_variance)
        np.fill_diagonal(Kg, h.noise_signal_variance)
        self.Lf, jf = stable_cholesky(Kf)
        self.Lg, jg = stable_cholesky(Kg)
        self.Kf_se, self.Kg_se = Kf, Kg
        Kf = Kf.copy()
        Kg = Kg.copy()
        Kf[np.diag_indices(t)] += jf
        Kg[np.diag_indices(t)] += jg
        self.Kf, self.Kg = Kf, Kg
        self.jitter = (jf, jg)
        self.t = t
        self.mean = np.concatenate([np.full(t, prior_mean), np.zeros(t)])

    def K_times(self, a):
        t = self.t
        return np.concatenate([self.Kf @ a[:t], self.Kg @ a[t:]])

    def B_matrix(self, w_ff, w_fg, w_gg):
        Lf, Lg = self.Lf, self.Lg
        t = self.t
        B = np.empty((2 * t, 2 * t))
        B[:t, :t] = Lf.T @ (w_ff[:, None] * Lf)
        B[:t, t:] = Lf.T @ (w_fg[:, None] * Lg)
        B[t:, :t] = B[:t, t:].T
        B[t:, t:] = Lg.T @ (w_gg[:, None] * Lg)
        B[np.diag_indices(2 * t)] += 1.0
        return B

    def solve(self, v):
        t = self.t
        return np.concatenate([
            linalg.cho_solve((self.Lf, True), v[:t], check_finite=False),
            linalg.cho_solve((self.Lg, True), v[t:], check_finite=False),
        ])

    def Lt_times(self, v):
        t = self.t
        return np.concatenate([self.Lf.T @ v[:t], self.Lg.T @ v[t:]])

    def L_times(self, v):
        t = self.t
        return np.concatenate([self.Lf @ v[:t], self.Lg @ v[t:]])


def _w_times(w, v, t):
    w_ff, w_fg, w_gg = w
    return np.concatenate([w_ff * v[:t] + w_fg * v[t:], w_fg * v[:t] + w_gg * v[t:]])


def _curvature(prior, w_obs, u):
    """Cholesky of ``B`` for the observed curvature, or the Fisher one if that fails."""
    t = prior.t
    try:
        return linalg.cholesky(prior.B_matrix(*w_obs), lower=True, check_finite=False), w_obs, False
    except linalg.LinAlgError:
        w = (u, np.zeros(t), np.full(t, 0.5))
        return linalg.cholesky(prior.B_matrix(*w), lower=True, check_finite=False), w, True


def _laplace_mode(prior, lik, x0=None, a0=None, tol=NEWTON_TOL, maxiter=NEWTON_MAXITER):
    """Newton iteration with backtracking on the 2t-dimensional log joint.

    Starts from ``a0`` when given (warm start), otherwise from the latent
    vector ``x0``.
    """
    t = prior.t
    m = prior.mean
    if a0 is not None:
        a = a0.copy()
        x = m + prior.K_times(a)
    else:
        x = x0.copy()
        a = prior.solve(x - m)
    psi = lik.value(x[:t], x[t:]) - 0.5 * a @ (x - m)
    for it in range(maxiter + 1):
        r, u, gf, gg, w_ff, w_fg, w_gg = lik.derivs(x[:t], x[t:])
        grad = np.concatenate([gf, gg])
        gnorm = np.linalg.norm(grad - a)
        if gnorm < tol:
            break
        if it == maxiter:
            raise FitError(f"Newton did not converge in {maxiter} iterations (gradient norm {gnorm:.3g})")
        C, w, _ = _curvature(prior, (w_ff, w_fg, w_gg), u)
        b = _w_times(w, x - m, t) + grad
        a_new = b - _w_times(w, prior.L_times(linalg.cho_solve((C, True), prior.Lt_times(b))), t)
        da = a_new - a
        dx = prior.K_times(da)
        step = 1.0
        for _ in range(50):
            a_try = a + step * da
            x_try = x + step * dx
            psi_try = lik.value(x_try[:t], x_try[t:]) - 0.5 * a_try @ (x_try - m)
            if psi_try >= psi:
                break
            step *= 0.5
        else:
            # no ascent left at machine precision
            if gnorm < 1e3 * tol:
                break
            raise FitError(f"line search failed (gradient norm {gnorm:.3g})")
        a, x, psi = a_try, x_try, psi_try

    r, u, gf, gg, w_ff, w_fg, w_gg = lik.derivs(x[:t], x[t:])
    C, w, fisher = _curvature(prior, (w_ff, w_fg, w_gg), u)
    log_z = psi - np.sum(np.log(np.diag(C)))
    return _Mode(x, a, psi, log_z, C, w, fisher, float(gnorm), it)


def _posterior_cov_blocks(prior, mode):
    """Blocks of ``A = (K^-1 + W)^-1`` and of ``R = W - W A W``."""
    t = prior.t
    Binv = chol_inverse(mode.chol_B)
    Lf, Lg = prior.Lf, prior.Lg
    A_ff = Lf @ Binv[:t, :t] @ Lf.T
    A_fg = Lf @ Binv[:t, t:] @ Lg.T
    A_gg = Lg @ Binv[t:, t:] @ Lg.T
    w_ff, w_fg, w_gg = mode.w
    WAW_ff = (
        w_ff[:, None] * A_ff * w_ff[None, :]
        + w_ff[:, None] * A_fg * w_fg[None, :]
        + w_fg[:, None] * A_fg.T * w_ff[None, :]
        + w_fg[:, None] * A_gg * w_fg[None, :]
    )
    WAW_gg = (
        w_fg[:, None] * A_ff * w_fg[None, :]
        + w_fg[:, None] * A_fg * w_gg[None, :]
        + w_gg[:, None] * A_fg.T * w_fg[None, :]
        + w_gg[:, None] * A_gg * w_gg[None, :]
    )
    R_ff = np.diag(w_ff) - WAW_ff
    R_gg = np.diag(w_gg) - WAW_gg
    return (A_ff, A_fg, A_gg), (R_ff, R_gg)


def _prior_terms(h, priors):
    p = h.dim
    grad = np.zeros(2 * p + 2)
    if priors is None:
        return 0.0, grad
    val = 0.0
    sf = np.sqrt(h.signal_variance)
    val += priors.magnitude.logpdf(sf)
    grad[0] = priors.magnitude.dlogpdf(sf) * sf / 2
    for i, (pr, ell) in enumerate(zip(priors.lengthscale, h.lengthscales)):
        val += pr.logpdf(ell)
        grad[1 + i] = pr.dlogpdf(ell) * ell
    sg = np.sqrt(h.noise_signal_variance)
    val += priors.noise_magnitude.logpdf(sg)
    grad[p + 1] = priors.noise_magnitude.dlogpdf(sg) * sg / 2
    for i, (pr, ell) in enumerate(zip(priors.noise_lengthscale, h.noise_lengthscales)):
        val += pr.logpdf(ell)
        grad[p + 2 + i] = pr.dlogpdf(ell) * ell
    return float(val), grad


def laplace_evidence_and_gradient(training, h, priors, prior_mean=0.0, a0=None, _dists=None):
    """Laplace log evidence + log hyperprior, and its exact gradient.

    The gradient is taken in ``(log sf2, log l_f, log sg2, log l_g)`` and
    includes the implicit dependence of the mode on the hyperparameters.

    Returns
    -------
    value, gradient, mode
    """
    x = training.params
    y = training.discrepancies
    t = y.size
    p = h.dim
    prior = _Prior(x, h, prior_mean)
    lik = _Likelihood(y, h.fixed_noise)
    x0 = np.concatenate([np.full(t, trimmed_mean(y)), np.zeros(t)])
    mode = _laplace_mode(prior, lik, x0=x0, a0=a0)
    (A_ff, A_fg, A_gg), (R_ff, R_gg) = _posterior_cov_blocks(prior, mode)

    a_f, a_g = mode.a[:t], mode.a[t:]
    r = y - mode.x[:t]
    u = np.exp(-mode.x[t:]) / h.fixed_noise
    dA_ff, dA_fg, dA_gg = np.diag(A_ff), np.diag(A_fg), np.diag(A_gg)
    if mode.fisher:
        s2_f = np.zeros(t)
        s2_g = 0.5 * u * dA_ff
    else:
        s2_f = u * (dA_fg + 0.5 * r * dA_gg)
        s2_g = 0.5 * u * (dA_ff + 2 * r * dA_fg + 0.5 * r * r * dA_gg)
    w_ff, w_fg, w_gg = mode.w

    dists = _dists if _dists is not None else sq_dist_per_dim(x)
    derivs_f = [prior.Kf_se] + [prior.Kf_se * D / ell**2 for D, ell in zip(dists, h.lengthscales)]
    derivs_g = [prior.Kg_se] + [
        prior.Kg_se * D / ell**2 for D, ell in zip(dists, h.noise_lengthscales)
    ]
    grad = np.empty(2 * p + 2)
    for j, dK in enumerate(derivs_f):
        v = dK @ a_f
        explicit = 0.5 * a_f @ v - 0.5 * np.sum(R_ff * dK)
        wv_f, wv_g = w_ff * v, w_fg * v
        dx_f = v - (A_ff @ wv_f + A_fg @ wv_g)
        dx_g = -(A_fg.T @ wv_f + A_gg @ wv_g)
        grad[j] = explicit + s2_f @ dx_f + s2_g @ dx_g
    for j, dK in enumerate(derivs_g):
        v = dK @ a_g
        explicit = 0.5 * a_g @ v - 0.5 * np.sum(R_gg * dK)
        wv_f, wv_g = w_fg * v, w_gg * v
        dx_f = -(A_ff @ wv_f + A_fg @ wv_g)
        dx_g = v - (A_fg.T @ wv_f + A_gg @ wv_g)
        grad[p + 1 + j] = explicit + s2_f @ dx_f + s2_g @ dx_g

    pv, pg = _prior_terms(h, priors)
    mode.R = (R_ff, R_gg)
    mode.prior = prior
    return float(mode.log_evidence + pv), grad + pg, mode


@dataclass(frozen=True, eq=False)
class InputDepGPFit:
    hyperparams: InputDepHyperparams
    training: TrainingSet
    latent_mode: np.ndarray
    weights: np.ndarray
    laplace_curvature: np.ndarray
    R_f: np.ndarray
    R_g: np.ndarray
    prior_mean_const: float = 0.0
    fisher_curvature: bool = False
    mode_gradient_norm: float = 0.0
    objective: float = np.nan
    diagnostics: list = field(default_factory=list)

    kind = "inputdep"

    def predict(self, q):
        """Latent mean, latent variance and expected noise variance at ``q``.

        The noise variance is the log-normal mean ``s2 exp(mu_g + v_g / 2)``.
        """
        Q = as_points(q, self.training.dim)
        h = self.hyperparams
        t = self.training.size
        X = self.training.params
        kf = se_cross(Q, X, h.signal_variance, h.lengthscales)
        kg = se_cross(Q, X, h.noise_signal_variance, h.noise_lengthscales)
        mean_f = self.prior_mean_const + kf @ self.weights[:t]
        var_f = h.signal_variance - np.einsum("ij,ij->i", kf @ self.R_f, kf)
        mean_g = kg @ self.weights[t:]
        var_g = h.noise_signal_variance - np.einsum("ij,ij->i", kg @ self.R_g, kg)
        var_f = np.maximum(var_f, 0.0)
        var_g = np.maximum(var_g, 0.0)
        noise = h.fixed_noise * np.exp(mean_g + 0.5 * var_g)
        if is_single_point(q, self.training.dim):
            return float(mean_f[0]), float(var_f[0]), float(noise[0])
        return mean_f, var_f, noise

    def predictive_moments(self, q):
        mean, var, noise = self.predict(q)
        return mean, var + noise

    def tail_probability(self, q, eps):
        mean, total = self.predictive_moments(q)
        return ndtr((eps - mean) / np.sqrt(total))

    def log_tail_probabilities(self, q, eps):
        mean, total = self.predictive_moments(q)
        z = (eps - mean) / np.sqrt(total)
        return log_ndtr(z), log_ndtr(-z)

    def log_predictive_density(self, q, delta):
        mean, total = self.predictive_moments(q)
        return -0.5 * (LOG2PI + np.log(total) + (delta - mean) ** 2 / total)


def fixed_noise_level(discrepancies):
    """10 %-trimmed sample variance of the (transformed) discrepancies."""
    return trimmed_std(discrepancies) ** 2


def _build_fit(training, h, priors, prior_mean, **extra):
    value, grad, mode = laplace_evidence_and_gradient(training, h, priors, prior_mean)
    R_f, R_g = mode.R
    return InputDepGPFit(
        h,
        training,
        mode.x,
        mode.a,
        mode.chol_B,
        R_f,
        R_g,
        prior_mean,
        mode.fisher,
        mode.grad_norm,
        value,
        **extra,
    )


def fit_inputdep_gp(
    training,
    priors=None,
    seed=0,
    *,
    box=None,
    restarts=DEFAULT_RESTARTS,
    hyperparams=None,
    init=None,
):
    """Fit the input-dependent GP by maximising the Laplace evidence plus hyperpriors.

    Arguments mirror :func:`gpabc.surrogates.standard.fit_standard_gp`. The
    fixed noise level is the trimmed variance of the training discrepancies.
    """
    if training.size < 2:
        raise ContractViolation("input-dependent GP needs at least 2 training points")
    y = training.discrepancies
    prior_mean = log_prior_mean(training)
    s2 = fixed_noise_level(y)
    if priors is None:
        from .standard import _data_box

        priors = default_hyperpriors(
            "inputdep", box if box is not None else _data_box(training), y
        )
    if hyperparams is not None:
        return _build_fit(training, hyperparams, priors, prior_mean)

    p = training.dim
    rng = np.random.default_rng(seed)
    ranges = [3 * pr.scale for pr in priors.lengthscale]
    scale2 = max(float(np.mean((y - prior_mean) ** 2)), 1e-12)
    bounds = [(np.log(1e-8 * scale2), np.log(1e4 * scale2))]
    bounds += [(np.log(1e-2 * r), np.log(1e2 * r)) for r in ranges]
    # sigma_g has a t(0, 1) prior, so sigma_g^2 beyond 25 is implausible
    bounds += [(np.log(1e-8), np.log(25.0))]
    bounds += [(np.log(1e-2 * r), np.log(1e2 * r)) for r in ranges]
    dists = sq_dist_per_dim(training.params)
    warm = {"a": None}

    def negobj(psi):
        h = InputDepHyperparams.from_log(psi, p, s2)
        val, grad, mode = laplace_evidence_and_gradient(
            training, h, priors, prior_mean, warm["a"], dists
        )
        warm["a"] = mode.a
        return -val, -grad

    starts = [] if init is None else [np.asarray(init.to_log())]
    for _ in range(restarts):
        sf = priors.magnitude.sample_positive(rng)
        lf = [pr.sample_positive(rng) for pr in priors.lengthscale]
        sg = priors.noise_magnitude.sample_positive(rng)
        lg = [pr.sample_positive(rng) for pr in priors.noise_lengthscale]
        starts.append(np.concatenate([[2 * np.log(sf)], np.log(lf), [2 * np.log(sg)], np.log(lg)]))

    def run_start(fun, x0s):
        return multistart_minimize(fun, x0s, bounds, gtol=1e-5, maxiter=200)

    # each restart begins from the cold latent initialisation
    best_psi, best_val, diagnostics = None, np.inf, []
    for i, s in enumerate(starts):
        warm["a"] = None
        try:
            psi, val, diag = run_start(negobj, [s])
        except FitError as exc:
            diagnostics.extend(dict(d, restart=i) for d in exc.diagnostics)
            continue
        diagnostics.extend(dict(d, restart=i) for d in diag)
        if val < best_val:
            best_psi, best_val = psi, val
    if best_psi is None:
        raise FitError("all restarts failed numerically", diagnostics)
    h = InputDepHyperparams.from_log(best_psi, p, s2)
    return _build_fit(training, h, priors, prior_mean, diagnostics=diagnostics)


def predict_inputdep(fit, q):
    return fit.predict(q)


def tail_probability_inputdep(fit, q, eps):
    return fit.tail_probability(q, eps)


def log_predictive_density_inputdep(fit, q, delta):
    return fit.log_predictive_density(q, delta)
