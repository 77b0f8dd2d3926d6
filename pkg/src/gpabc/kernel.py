"""Squared-exponential covariance, hyperparameter containers and hyperpriors."""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, stats
from scipy.linalg import lapack
from scipy.special import gammaln

from .exceptions import ConditioningError, ContractViolation

JITTER_START = 1e-10
JITTER_MAX = 1e-4

KINDS = ("standard", "inputdep", "classifier")


@dataclass(frozen=True)
class SEHyperparams:
    """Hyperparameters of a squared-exponential GP.

    ``noise_variance`` is only meaningful for regression; classifiers keep it 0.
    """

    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if not self.signal_variance > 0:
            raise ContractViolation("signal_variance must be > 0")
        if ls.ndim != 1 or np.any(~(ls > 0)):
            raise ContractViolation("lengthscales must be a vector of positive reals")
        if not self.noise_variance >= 0:
            raise ContractViolation("noise_variance must be >= 0")

    @property
    def dim(self):
        return self.lengthscales.size

    def to_log(self, with_noise=True):
        parts = [np.log(self.signal_variance)], np.log(self.lengthscales)
        out = np.concatenate(parts)
        if with_noise:
            out = np.append(out, np.log(self.noise_variance))
        return out

    @classmethod
    def from_log(cls, psi, dim, with_noise=True):
        psi = np.asarray(psi, dtype=float)
        noise = float(np.exp(psi[dim + 1])) if with_noise else 0.0
        return cls(float(np.exp(psi[0])), np.exp(psi[1 : dim + 1]), noise)


@dataclass(frozen=True)
class StudentTPrior:
    """Location-scale Student-t density used as a hyperprior."""

    location: float
    scale: float
    dof: float

    def __post_init__(self):
        if not (self.scale > 0 and self.dof > 0):
            raise ContractViolation("Student-t prior needs scale > 0 and dof > 0")

    def logpdf(self, x):
        nu, s = self.dof, self.scale
        z = (np.asarray(x, dtype=float) - self.location) / s
        return (
            gammaln((nu + 1) / 2)
            - gammaln(nu / 2)
            - 0.5 * np.log(nu * np.pi)
            - np.log(s)
            - (nu + 1) / 2 * np.log1p(z * z / nu)
        )

    def dlogpdf(self, x):
        nu, s = self.dof, self.scale
        diff = np.asarray(x, dtype=float) - self.location
        return -(nu + 1) * diff / (nu * s * s + diff * diff)

    def sample_positive(self, rng):
        """Draw a start value: |t| draw clamped to ``location ± 3 scale`` and kept > 0."""
        x = abs(self.location + self.scale * rng.standard_t(self.dof))
        lo = max(self.location - 3 * self.scale, 1e-2 * self.scale)
        return float(np.clip(x, lo, self.location + 3 * self.scale))


@dataclass(frozen=True)
class HyperPriorSpec:
    """Hyperpriors for one surrogate kind.

    ``magnitude`` is a prior on the signal standard deviation (not variance).
    ``noise_variance`` set to ``None`` means the improper uniform prior on R+.
    The ``noise_*`` fields are only used by the input-dependent GP.
    """

    kind: str
    lengthscale: Sequence[StudentTPrior]
    magnitude: StudentTPrior
    noise_lengthscale: Optional[Sequence[StudentTPrior]] = None
    noise_magnitude: Optional[StudentTPrior] = None
    noise_variance: Optional[StudentTPrior] = None
    discrepancy_var: float = 1.0
    extras: dict = field(default_factory=dict)


def trimmed(x, proportion=0.05):
    """Drop ``proportion`` from each tail (10 % symmetric trimming by default)."""
    x = np.asarray(x, dtype=float).ravel()
    return stats.trimboth(np.sort(x), proportion)


def trimmed_std(x):
    x = np.asarray(x, dtype=float).ravel()
    kept = trimmed(x)
    sd = np.std(kept, ddof=1) if kept.size > 1 else 0.0
    if not sd > 0:
        sd = np.std(x, ddof=1) if x.size > 1 else 0.0
    return float(sd) if sd > 0 else 1.0


def trimmed_mean(x):
    return float(np.mean(trimmed(x)))


def default_hyperpriors(kind, prior_box, discrepancies):
    """Hyperprior recipe for a surrogate kind.

    Parameters
    ----------
    kind : {"standard", "inputdep", "classifier"}
    prior_box : PriorBox or (lower, upper) pair
        Parameter ranges set the lengthscale scales.
    discrepancies : array_like
        Discrepancies on the modelling scale; their trimmed standard deviation
        scales the signal-magnitude prior.
    """
    if kind not in KINDS:
        raise ContractViolation(f"unknown surrogate kind {kind!r}")
    d = np.asarray(discrepancies, dtype=float).ravel()
    if d.size == 0:
        raise ContractViolation("discrepancies must be nonempty")
    lower, upper = _box_bounds(prior_box)
    ranges = upper - lower
    sd = trimmed_std(d)
    var = float(np.var(d)) if d.size > 1 else 1.0
    if kind == "standard":
        return HyperPriorSpec(
            kind,
            [StudentTPrior(0.0, r / 2, 4) for r in ranges],
            StudentTPrior(0.0, sd, 4),
            discrepancy_var=var,
        )
    if kind == "inputdep":
        return HyperPriorSpec(
            kind,
            [StudentTPrior(r / 3, r / 3, 10) for r in ranges],
            StudentTPrior(0.0, sd, 10),
            noise_lengthscale=[StudentTPrior(r / 2, r / 9, 10) for r in ranges],
            noise_magnitude=StudentTPrior(0.0, 1.0, 10),
            discrepancy_var=var,
        )
    return HyperPriorSpec(
        kind,
        [StudentTPrior(0.0, r / 5, 4) for r in ranges],
        StudentTPrior(0.0, 20.0, 4),
        discrepancy_var=var,
    )


def _box_bounds(box):
    if hasattr(box, "lower"):
        return np.asarray(box.lower, float), np.asarray(box.upper, float)
    lo, hi = box
    return np.atleast_1d(np.asarray(lo, float)), np.atleast_1d(np.asarray(hi, float))


def se_covariance(a, b, h):
    """Squared-exponential covariance between two parameter points."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != (h.dim,) or b.shape != (h.dim,):
        raise ContractViolation(
            f"points must have dimension {h.dim}, got {a.shape} and {b.shape}"
        )
    r2 = np.sum(((a - b) / h.lengthscales) ** 2)
    return float(h.signal_variance * np.exp(-0.5 * r2))


def as_points(points, dim=None):
    x = np.asarray(points, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if dim in (None, 1) else x.reshape(1, -1)
    if dim is not None and x.shape[1] != dim:
        raise ContractViolation(f"expected points of dimension {dim}, got {x.shape[1]}")
    return x


def se_cross(x1, x2, signal_variance, lengthscales):
    """Cross-covariance matrix ``k(x1_i, x2_j)`` for row-stacked points."""
    ls = np.asarray(lengthscales, dtype=float)
    a = x1 / ls
    b = x2 / ls
    r2 = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * a @ b.T
    )
    np.maximum(r2, 0.0, out=r2)
    return signal_variance * np.exp(-0.5 * r2)


def covariance_matrix(points, h, jitter=0.0):
    """Training covariance ``K_ij = k(x_i, x_j) + (noise + jitter) 1{i=j}``."""
    x = as_points(points, h.dim)
    if x.shape[0] == 0:
        raise ContractViolation("points must be nonempty")
    K = se_cross(x, x, h.signal_variance, h.lengthscales)
    K[np.diag_indices_from(K)] = h.signal_variance + h.noise_variance + jitter
    return K


def stable_cholesky(K):
    """Lower Cholesky factor with jitter escalation.

    Jitter starts at 1e-10 mean(diag K) and grows tenfold up to 1e-4 mean(diag K).

    Returns
    -------
    L : ndarray
    jitter : float
        The amount added to the diagonal.
    """
    scale = float(np.mean(np.diag(K)))
    if not np.isfinite(scale) or scale <= 0:
        raise ConditioningError("covariance diagonal is not positive and finite")
    jitter = JITTER_START * scale
    idx = np.diag_indices_from(K)
    base = np.diag(K).copy()
    # jitter is added in place and undone afterwards to avoid copying large K
    try:
        while jitter <= JITTER_MAX * scale * (1 + 1e-9):
            K[idx] = base + jitter
            try:
                return linalg.cholesky(K, lower=True, check_finite=False), jitter
            except linalg.LinAlgError:
                jitter *= 10.0
    finally:
        K[idx] = base
    raise ConditioningError(
        f"Cholesky failed with jitter up to {JITTER_MAX:g} x mean diagonal"
    )


def sq_dist_per_dim(x):
    """List of per-dimension squared-difference matrices for gradient work."""
    return [(x[:, i][:, None] - x[:, i][None, :]) ** 2 for i in range(x.shape[1])]


def chol_inverse(L):
    """Inverse of ``L L^T`` from its lower Cholesky factor."""
    inv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise ConditioningError(f"dpotri failed with info={info}")
    return np.tril(inv) + np.tril(inv, -1).T
