"""The ten toy problems: generative models, discrepancies and closed-form references.

Each problem provides

* ``observe(rng)``: observed summaries, drawn once per repetition at the true parameter;
* ``simulate(thetas, observed, rng)``: raw discrepancies for a batch of parameters;
* ``tail(thetas, observed, eps)``: exact ``P(delta <= eps | theta)`` (ABC likelihood);
* ``loglik(thetas, observed)``: exact log-likelihood of the observed data.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats
from scipy.special import ndtr

from ..exceptions import ContractViolation
from ..posterior import PriorBox
from .lotka_volterra import MEASUREMENT_TIMES, lotka_volterra_trajectory

RECIPES = ("analytic-abc", "mc-abc", "analytic-true")

LV_NOISE_SD = 0.5
GAUSS2D_COV = np.array([[1.0, 0.5], [0.5, 1.0]])
GAUSS2D_PREC = np.linalg.inv(GAUSS2D_COV)
GAUSS2D_CHOL = np.linalg.cholesky(GAUSS2D_COV)


@dataclass(frozen=True)
class ObservedDataset:
    """Observed data of one repetition and the summaries the discrepancy uses."""

    data: np.ndarray
    summaries: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class ToyProblem:
    name: str
    label: str
    prior: PriorBox
    true_theta: tuple
    n_obs: int
    discrepancy: str
    reference_recipe: str
    observe_fn: Callable
    simulate_fn: Callable
    tail_fn: Optional[Callable] = None
    loglik_fn: Optional[Callable] = None

    @property
    def dim(self):
        return self.prior.dim

    def observe(self, rng):
        return self.observe_fn(self, rng)

    def simulate(self, thetas, observed, rng):
        th = np.asarray(thetas, dtype=float).reshape(-1, self.dim)
        return self.simulate_fn(self, th, observed, rng)

    def tail(self, thetas, observed, eps):
        if self.tail_fn is None:
            raise ContractViolation(f"{self.name} has no closed-form ABC likelihood")
        th = np.asarray(thetas, dtype=float).reshape(-1, self.dim)
        return np.clip(self.tail_fn(self, th, observed, eps), 0.0, 1.0)

    def loglik(self, thetas, observed):
        th = np.asarray(thetas, dtype=float).reshape(-1, self.dim)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.loglik_fn(self, th, observed)
        return np.where(np.isnan(out), -np.inf, out)


def simulate_discrepancy(problem, observed, theta, rng):
    """Raw discrepancy of one simulation at ``theta``."""
    return float(problem.simulate(np.atleast_1d(theta), observed, rng)[0])


# -- observed data ---------------------------------------------------------


def _observe_draws(draw):
    def observe(problem, rng):
        y = draw(problem, np.asarray(problem.true_theta, float), rng, 1)[0]
        return ObservedDataset(y, _summaries(problem, y))

    return observe


def _summaries(problem, y):
    if problem.name in ("gaussian2",):
        return {"var": float(np.var(y, ddof=1))}
    if problem.name == "gaussian2-2d":
        return {"mean": float(np.mean(y)), "var": float(np.var(y, ddof=1))}
    if problem.name == "uniform":
        return {"max": float(np.max(y))}
    if problem.name in ("gm1", "gm2"):
        return {"y1": float(y[0])}
    if problem.name == "gaussian1-2d":
        return {"mean": np.mean(y, axis=0)}
    return {"mean": float(np.mean(y))}


# -- generative draws: return (m, n_obs[, 2]) samples for m parameters -----


def _draw_gaussian1(problem, th, rng, m):
    return rng.normal(np.broadcast_to(th[..., 0:1], (m, 1)), 1.0, (m, problem.n_obs))


def _draw_bimodal(problem, th, rng, m):
    mu = np.broadcast_to(th[..., 0:1], (m, 1)) ** 2
    return rng.normal(mu, np.sqrt(2.0), (m, problem.n_obs))


def _draw_gaussian2(problem, th, rng, m):
    sd = np.sqrt(np.broadcast_to(th[..., 0:1], (m, 1)))
    return rng.normal(0.0, 1.0, (m, problem.n_obs)) * sd


def _draw_poisson(problem, th, rng, m):
    lam = np.broadcast_to(th[..., 0:1], (m, 1))
    return rng.poisson(np.broadcast_to(lam, (m, problem.n_obs))).astype(float)


def _mixture_draw(w, offsets, variances):
    def draw(problem, th, rng, m):
        mu = np.broadcast_to(th[..., 0:1], (m, 1))
        first = rng.random((m, problem.n_obs)) < w
        z = rng.normal(0.0, 1.0, (m, problem.n_obs))
        loc = np.where(first, mu + offsets[0], mu + offsets[1])
        sd = np.where(first, np.sqrt(variances[0]), np.sqrt(variances[1]))
        return loc + sd * z

    return draw


GM1 = (0.7, (0.0, 5.0), (1.0, 2.0))
GM2 = (0.7, (0.0, 0.0), (3.0, 0.25))
_draw_gm1 = _mixture_draw(*GM1)
_draw_gm2 = _mixture_draw(*GM2)


def _draw_uniform(problem, th, rng, m):
    return rng.random((m, problem.n_obs)) * np.broadcast_to(th[..., 0:1], (m, 1))


def _draw_gaussian1_2d(problem, th, rng, m):
    z = rng.normal(0.0, 1.0, (m, problem.n_obs, 2))
    return np.broadcast_to(th.reshape(-1, 1, 2), (m, 1, 2)) + z @ GAUSS2D_CHOL.T


def _draw_gaussian2_2d(problem, th, rng, m):
    th = np.broadcast_to(th.reshape(-1, 2), (m, 2))
    z = rng.normal(0.0, 1.0, (m, problem.n_obs))
    return th[:, 0:1] + np.sqrt(th[:, 1:2]) * z


def _observe_lv(problem, rng):
    clean = lotka_volterra_trajectory(np.asarray(problem.true_theta, float))
    noisy = clean + rng.normal(0.0, LV_NOISE_SD, clean.shape)
    return ObservedDataset(noisy, {"times": list(MEASUREMENT_TIMES)})


# -- simulators ---------------------------------------------------------------


def _sim_mean(draw):
    def sim(problem, th, obs, rng):
        x = draw(problem, th, rng, th.shape[0])
        return (obs.summaries["mean"] - np.mean(x, axis=1)) ** 2

    return sim


def _sim_gaussian2(problem, th, obs, rng):
    x = _draw_gaussian2(problem, th, rng, th.shape[0])
    return (obs.summaries["var"] - np.var(x, axis=1, ddof=1)) ** 2


def _sim_first(draw):
    def sim(problem, th, obs, rng):
        x = draw(problem, th, rng, th.shape[0])
        return (obs.summaries["y1"] - x[:, 0]) ** 2

    return sim


def _sim_uniform(problem, th, obs, rng):
    x = _draw_uniform(problem, th, rng, th.shape[0])
    return (obs.summaries["max"] - np.max(x, axis=1)) ** 2


def _sim_gaussian1_2d(problem, th, obs, rng):
    x = _draw_gaussian1_2d(problem, th, rng, th.shape[0])
    d = obs.summaries["mean"] - np.mean(x, axis=1)
    return np.einsum("ij,jk,ik->i", d, GAUSS2D_PREC, d)


def _sim_gaussian2_2d(problem, th, obs, rng):
    x = _draw_gaussian2_2d(problem, th, rng, th.shape[0])
    s = obs.summaries
    return (s["mean"] - np.mean(x, axis=1)) ** 2 + (s["var"] - np.var(x, axis=1, ddof=1)) ** 2


def _sim_lv(problem, th, obs, rng):
    pred = lotka_volterra_trajectory(th)
    return np.sum((obs.data[None] - pred) ** 2, axis=(1, 2))


# -- exact ABC likelihoods P(delta <= eps | theta) ----------------------------


def _interval_normal(center, half, mu, sd):
    return ndtr((center + half - mu) / sd) - ndtr((center - half - mu) / sd)


def _tail_gaussian1(problem, th, obs, eps):
    return _interval_normal(obs.summaries["mean"], np.sqrt(eps), th[:, 0], 1 / np.sqrt(problem.n_obs))


def _tail_bimodal(problem, th, obs, eps):
    sd = np.sqrt(2.0 / problem.n_obs)
    return _interval_normal(obs.summaries["mean"], np.sqrt(eps), th[:, 0] ** 2, sd)


def _tail_gaussian2(problem, th, obs, eps):
    k = problem.n_obs - 1
    s2 = obs.summaries["var"]
    r = np.sqrt(eps)
    hi, lo = s2 + r, max(s2 - r, 0.0)
    out = np.empty(th.shape[0])
    pos = th[:, 0] > 0
    t = th[pos, 0]
    out[pos] = stats.chi2.cdf(hi * k / t, k) - stats.chi2.cdf(lo * k / t, k)
    # zero variance: the simulated sample variance is exactly 0
    out[~pos] = float(s2 * s2 <= eps)
    return out


def _tail_poisson(problem, th, obs, eps):
    n = problem.n_obs
    ybar = obs.summaries["mean"]
    smax = int(np.ceil(n * (ybar + np.sqrt(eps)))) + 2
    totals = np.arange(smax + 1)
    # integer sums are exact in floats, so S / n is what the simulator's mean yields
    means = totals / n
    inside = (ybar - means) ** 2 <= eps
    pmf = stats.poisson.pmf(totals[None, :], n * th[:, 0:1])
    return np.sum(pmf * inside[None, :], axis=1)


def _mixture_cdf(x, mu, spec):
    w, offsets, variances = spec
    return w * ndtr((x - mu - offsets[0]) / np.sqrt(variances[0])) + (1 - w) * ndtr(
        (x - mu - offsets[1]) / np.sqrt(variances[1])
    )


def _tail_mixture(spec):
    def tail(problem, th, obs, eps):
        y, r = obs.summaries["y1"], np.sqrt(eps)
        return _mixture_cdf(y + r, th[:, 0], spec) - _mixture_cdf(y - r, th[:, 0], spec)

    return tail


def _tail_uniform(problem, th, obs, eps):
    m, r, n = obs.summaries["max"], np.sqrt(eps), problem.n_obs
    t = th[:, 0]
    out = np.zeros(t.size)
    pos = t > 0
    tp = t[pos]
    hi = np.clip((m + r) / tp, 0.0, 1.0) ** n
    lo = np.clip((m - r) / tp, 0.0, 1.0) ** n
    out[pos] = hi - lo
    out[~pos] = float(m * m <= eps)
    return out


def _tail_gaussian1_2d(problem, th, obs, eps):
    n = problem.n_obs
    d = obs.summaries["mean"] - th
    lam = n * np.einsum("ij,jk,ik->i", d, GAUSS2D_PREC, d)
    out = stats.ncx2.cdf(n * eps, 2, np.maximum(lam, 1e-300))
    small = lam < 1e-12
    out[small] = stats.chi2.cdf(n * eps, 2)
    return out


_GL_X, _GL_W = np.polynomial.legendre.leggauss(96)


def _tail_gaussian2_2d(problem, th, obs, eps):
    """Integrate over the sample variance with ``s = s2_y + sqrt(eps) sin(phi)``.

    The substitution removes the square-root endpoint behaviour of the inner
    normal probability, so Gauss-Legendre converges quickly.
    """
    n = problem.n_obs
    k = n - 1
    ybar, s2y = obs.summaries["mean"], obs.summaries["var"]
    r = np.sqrt(eps)
    phi_lo = np.arcsin(max(-1.0, -s2y / r))
    phi = phi_lo + (np.pi / 2 - phi_lo) * (_GL_X + 1) / 2
    wts = _GL_W * (np.pi / 2 - phi_lo) / 2
    s = s2y + r * np.sin(phi)
    jac = r * np.cos(phi)
    half = r * np.cos(phi)  # sqrt(eps - (s2y - s)^2)
    mu, var = th[:, 0:1], th[:, 1:2]
    dens = stats.chi2.pdf(s[None, :] * k / var, k) * k / var
    inner = _interval_normal(ybar, half[None, :], mu, np.sqrt(var / n))
    return np.sum(dens * inner * (wts * jac)[None, :], axis=1)


def _tail_lv(problem, th, obs, eps):
    return (_sim_lv(problem, th, obs, None) <= eps).astype(float)


# -- exact log-likelihoods of the observed data ------------------------------------


def _ll_normal_mean(mean_fn, var):
    def ll(problem, th, obs):
        y = obs.data
        mu = mean_fn(th)[:, None]
        return np.sum(stats.norm.logpdf(y[None, :], mu, np.sqrt(var)), axis=1)

    return ll


def _ll_gaussian2(problem, th, obs):
    return np.sum(stats.norm.logpdf(obs.data[None, :], 0.0, np.sqrt(th[:, 0:1])), axis=1)


def _ll_poisson(problem, th, obs):
    return np.sum(stats.poisson.logpmf(obs.data[None, :], th[:, 0:1]), axis=1)


def _ll_mixture(spec):
    w, offsets, variances = spec

    def ll(problem, th, obs):
        y = obs.data[0]
        mu = th[:, 0]
        return np.logaddexp(
            np.log(w) + stats.norm.logpdf(y, mu + offsets[0], np.sqrt(variances[0])),
            np.log(1 - w) + stats.norm.logpdf(y, mu + offsets[1], np.sqrt(variances[1])),
        )

    return ll


def _ll_uniform(problem, th, obs):
    t = th[:, 0]
    m = np.max(obs.data)
    return np.where(t >= m, -problem.n_obs * np.log(t), -np.inf)


def _ll_gaussian1_2d(problem, th, obs):
    d = obs.data[None, :, :] - th[:, None, :]
    return -0.5 * np.einsum("mij,jk,mik->m", d, GAUSS2D_PREC, d)


def _ll_gaussian2_2d(problem, th, obs):
    return np.sum(
        stats.norm.logpdf(obs.data[None, :], th[:, 0:1], np.sqrt(th[:, 1:2])), axis=1
    )


def _ll_lv(problem, th, obs):
    return -0.5 * _sim_lv(problem, th, obs, None) / LV_NOISE_SD**2


def _make(name, label, lo, hi, true, n, disc, draw, sim, tail, ll, observe=None):
    return ToyProblem(
        name,
        label,
        PriorBox(lo, hi),
        tuple(np.atleast_1d(true).tolist()),
        n,
        disc,
        "analytic-abc",
        observe or _observe_draws(draw),
        sim,
        tail,
        ll,
    )


PROBLEMS = {
    p.name: p
    for p in [
        _make("gaussian1", "Gaussian 1", [-0.5], [3.0], 1.0, 10, "(mean(y) - mean(x))^2",
              _draw_gaussian1, _sim_mean(_draw_gaussian1), _tail_gaussian1,
              _ll_normal_mean(lambda th: th[:, 0], 1.0)),
        _make("bimodal", "Bimodal", [-2.5], [2.5], 1.0, 5, "(mean(y) - mean(x))^2",
              _draw_bimodal, _sim_mean(_draw_bimodal), _tail_bimodal,
              _ll_normal_mean(lambda th: th[:, 0] ** 2, 2.0)),
        _make("gaussian2", "Gaussian 2", [0.0], [5.0], 1.0, 10, "(var(y) - var(x))^2",
              _draw_gaussian2, _sim_gaussian2, _tail_gaussian2, _ll_gaussian2),
        _make("poisson", "Poisson", [0.0], [5.0], 2.0, 10, "(mean(y) - mean(x))^2",
              _draw_poisson, _sim_mean(_draw_poisson), _tail_poisson, _ll_poisson),
        _make("gm1", "GM 1", [-10.0], [5.0], 1.0, 1, "(y_1 - x_1)^2",
              _draw_gm1, _sim_first(_draw_gm1), _tail_mixture(GM1), _ll_mixture(GM1)),
        _make("gm2", "GM 2", [-6.0], [6.0], 1.0, 1, "(y_1 - x_1)^2",
              _draw_gm2, _sim_first(_draw_gm2), _tail_mixture(GM2), _ll_mixture(GM2)),
        _make("uniform", "Uniform", [0.0], [5.0], 2.0, 5, "(max(y) - max(x))^2",
              _draw_uniform, _sim_uniform, _tail_uniform, _ll_uniform),
        _make("gaussian1-2d", "2D Gaussian 1", [1.5, 1.5], [4.0, 4.0], [2.5, 2.5], 10,
              "(mean(y) - mean(x))' S^-1 (mean(y) - mean(x))",
              _draw_gaussian1_2d, _sim_gaussian1_2d, _tail_gaussian1_2d, _ll_gaussian1_2d),
        _make("gaussian2-2d", "2D Gaussian 2", [2.0, 0.5], [4.5, 5.0], [3.0, 2.0], 25,
              "(mean(y) - mean(x))^2 + (var(y) - var(x))^2",
              _draw_gaussian2_2d, _sim_gaussian2_2d, _tail_gaussian2_2d, _ll_gaussian2_2d),
        _make("lotka-volterra", "Lotka-Volterra", [0.25, 0.5], [1.25, 1.5], [1.0, 1.0], 8,
              "sum_ij (x_j(t_i) - xhat_j(t_i, theta))^2",
              None, _sim_lv, _tail_lv, _ll_lv, observe=_observe_lv),
    ]
}


def get_problem(name):
    try:
        return PROBLEMS[name]
    except KeyError:
        raise ContractViolation(
            f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}"
        ) from None
