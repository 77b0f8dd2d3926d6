"""ABC building blocks: box priors, thresholds, rejection sampling, grid posteriors and metrics."""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.special import ndtr

from .exceptions import ContractViolation, DegeneratePosteriorError, EstimationError
from .io import write_csv

DEFAULT_NODES = {1: 512, 2: 128}
NODES_HIGH_DIM = 32
KL_FLOOR = 1e-12


@dataclass(frozen=True)
class PriorBox:
    """Uniform prior on an axis-aligned box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ContractViolation("lower and upper must be vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ContractViolation("box bounds must be finite")
        if np.any(lo >= hi):
            raise ContractViolation("box needs lower < upper in every dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    @property
    def ranges(self):
        return self.upper - self.lower

    @property
    def volume(self):
        return float(np.prod(self.ranges))

    def contains(self, points):
        x = np.asarray(points, dtype=float).reshape(-1, self.dim)
        return np.all((x >= self.lower) & (x <= self.upper), axis=1)

    def density(self, points):
        return np.where(self.contains(points), 1.0 / self.volume, 0.0)

    def sample(self, rng, size):
        """``size`` uniform draws as a ``(size, p)`` array."""
        return self.lower + rng.random((size, self.dim)) * self.ranges


@dataclass(frozen=True)
class GridSpec:
    """Nodes per dimension; ``None`` picks 512 (1-D), 128 (2-D) or 32 (higher)."""

    nodes: tuple = None

    def counts(self, dim):
        if self.nodes is None:
            return (DEFAULT_NODES.get(dim, NODES_HIGH_DIM),) * dim
        nodes = tuple(int(n) for n in np.atleast_1d(self.nodes))
        if len(nodes) == 1:
            nodes = nodes * dim
        if len(nodes) != dim or min(nodes) < 2:
            raise ContractViolation(f"grid needs >= 2 nodes in each of {dim} dimensions")
        return nodes

    def axes(self, box):
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(box.lower, box.upper, self.counts(box.dim))]


def _trapezoid_weights(axis):
    w = np.empty_like(axis)
    d = np.diff(axis)
    w[0], w[-1] = d[0] / 2, d[-1] / 2
    w[1:-1] = (d[:-1] + d[1:]) / 2
    return w


@dataclass(frozen=True, eq=False)
class PosteriorGrid:
    """Normalized density on a regular grid with trapezoidal cell weights.

    ``density`` and ``cellweight`` have shape ``(n_1, ..., n_p)``.
    """

    axes: tuple
    density: np.ndarray
    cellweight: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_unnormalized(cls, axes, values, meta=None):
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        w = _cell_weights(axes)
        values = np.asarray(values, dtype=float).reshape(w.shape)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ContractViolation("density values must be finite and nonnegative")
        total = float(np.sum(values * w))
        if not total > 0:
            raise DegeneratePosteriorError("unnormalized density is zero on every grid node")
        return cls(axes, values / total, w, dict(meta or {}))

    @property
    def dim(self):
        return len(self.axes)

    @property
    def shape(self):
        return tuple(a.size for a in self.axes)

    def points(self):
        """Grid nodes as a ``(N, p)`` array in C order matching ``density.ravel()``."""
        return grid_points(self.axes)

    def total_mass(self):
        return float(np.sum(self.density * self.cellweight))

    def marginal(self, i):
        """Marginal density along dimension ``i``, integrated with the trapezoid weights."""
        if not 0 <= i < self.dim:
            raise ContractViolation(f"dimension {i} out of range")
        other = tuple(j for j in range(self.dim) if j != i)
        w_other = np.ones(self.shape)
        for j in other:
            shape = [1] * self.dim
            shape[j] = -1
            w_other = w_other * _trapezoid_weights(self.axes[j]).reshape(shape)
        marg = np.sum(self.density * w_other, axis=other) if other else self.density.copy()
        return self.axes[i], marg

    def same_grid(self, other):
        return len(self.axes) == len(other.axes) and all(
            np.array_equal(a, b) for a, b in zip(self.axes, other.axes)
        )

    def to_csv(self, path, metadata=None):
        header = [f"theta_{i + 1}" for i in range(self.dim)] + ["density"]
        rows = np.column_stack([self.points(), self.density.ravel()])
        write_csv(path, header, rows, metadata)

    def marginal_to_csv(self, i, path, metadata=None):
        axis, marg = self.marginal(i)
        write_csv(path, [f"theta_{i + 1}", "density"], np.column_stack([axis, marg]), metadata)


def _cell_weights(axes):
    w = np.ones(tuple(a.size for a in axes))
    for j, a in enumerate(axes):
        shape = [1] * len(axes)
        shape[j] = -1
        w = w * _trapezoid_weights(a).reshape(shape)
    return w


def grid_points(axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def empty_grid(box, grid_spec=None):
    """Uniform grid posterior over ``box`` (also serves as a template)."""
    axes = (grid_spec or GridSpec()).axes(box)
    return PosteriorGrid.from_unnormalized(axes, np.ones(tuple(a.size for a in axes)))


def threshold_from_quantile(deltas, q):
    """Nearest-rank quantile: the ``ceil(q t)``-th smallest of ``t`` values."""
    d = np.sort(np.asarray(deltas, dtype=float).ravel())
    if d.size == 0:
        raise ContractViolation("deltas must be nonempty")
    if not 0 < q < 1:
        raise ContractViolation("q must lie in (0, 1)")
    # small slack so that e.g. 0.05 * 100 is not rounded up to 6
    rank = max(1, math.ceil(q * d.size - 1e-9))
    return float(d[rank - 1])


@dataclass(frozen=True)
class SimulationRecord:
    theta: np.ndarray
    delta_raw: float
    seed_path: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))
        if not self.delta_raw >= 0:
            raise ContractViolation("raw discrepancies must be >= 0")


def rejection_sample(records, eps):
    """Parameters of all records with ``delta_raw <= eps``, in input order."""
    if not np.isfinite(eps):
        raise ContractViolation("eps must be finite")
    return [r.theta for r in records if r.delta_raw <= eps]


def silverman_bandwidth(points, box=None):
    """Per-dimension Silverman bandwidth ``sd_i (4 / ((d + 2) n))^(1 / (d + 4))``.

    With one point (or zero spread) the sd of the uniform prior box is used.
    """
    x = np.asarray(points, dtype=float)
    n, d = x.shape
    sd = np.std(x, axis=0, ddof=1) if n > 1 else np.zeros(d)
    if box is not None:
        sd = np.where(sd > 0, sd, box.ranges / np.sqrt(12.0))
    sd = np.where(sd > 0, sd, 1.0)
    return sd * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))


def kde_posterior(accepted, box, grid_spec=None):
    """Gaussian product-kernel KDE of accepted parameters on the prior-box grid.

    Each kernel is renormalized by its mass inside the box before summation.

    Raises
    ------
    EstimationError
        If nothing was accepted.
    """
    x = np.asarray(accepted, dtype=float)
    if x.size == 0:
        raise EstimationError("no accepted samples; KDE is undefined")
    x = x.reshape(-1, box.dim)
    h = silverman_bandwidth(x, box)
    axes = (grid_spec or GridSpec()).axes(box)
    factors = []
    inside = np.ones(x.shape[0])
    for i, axis in enumerate(axes):
        z = (axis[None, :] - x[:, i : i + 1]) / h[i]
        factors.append(np.exp(-0.5 * z * z) / (h[i] * np.sqrt(2 * np.pi)))
        inside *= ndtr((box.upper[i] - x[:, i]) / h[i]) - ndtr((box.lower[i] - x[:, i]) / h[i])
    factors[0] = factors[0] / inside[:, None]
    letters = "abcdefghijklmnopqrstuvwxyz"[: box.dim]
    spec = ",".join(f"k{c}" for c in letters) + "->" + letters
    values = np.einsum(spec, *factors)
    return PosteriorGrid.from_unnormalized(axes, values, {"method": "kde", "bandwidth": h.tolist()})


def surrogate_posterior(model, prior, eps_transformed, grid_spec=None, chunk=2048):
    """Grid posterior proportional to prior times the modelled tail probability.

    Parameters
    ----------
    model : fitted surrogate or callable
        Anything with ``log_tail_probabilities(points, eps)`` or
        ``tail_probability(points, eps)``, or a callable ``f(points, eps)``
        returning probabilities.
    prior : PriorBox
    eps_transformed : float
        Threshold on the model's discrepancy scale.
    """
    axes = (grid_spec or GridSpec()).axes(prior)
    pts = grid_points(axes)
    logp = np.empty(pts.shape[0])
    for start in range(0, pts.shape[0], chunk):
        q = pts[start : start + chunk]
        if hasattr(model, "log_tail_probabilities"):
            logp[start : start + chunk] = np.asarray(model.log_tail_probabilities(q, eps_transformed)[0])
        else:
            fn = model.tail_probability if hasattr(model, "tail_probability") else model
            with np.errstate(divide="ignore"):
                logp[start : start + chunk] = np.log(np.asarray(fn(q, eps_transformed), dtype=float))
    if np.any(np.isnan(logp)):
        raise DegeneratePosteriorError("tail probabilities contain NaN")
    top = np.max(logp)
    if not np.isfinite(top):
        raise DegeneratePosteriorError("tail probability is zero on every grid node")
    # the uniform prior is constant on the box, so only the likelihood shape matters
    values = np.exp(logp - top)
    return PosteriorGrid.from_unnormalized(axes, values.reshape(tuple(a.size for a in axes)))


def _check_same(a, b):
    if not a.same_grid(b):
        raise ContractViolation("posterior grids differ")


def tv_distance(a, b):
    """Total variation distance ``0.5 sum |a - b| w``, clipped to ``[0, 1]``."""
    _check_same(a, b)
    tv = 0.5 * float(np.sum(np.abs(a.density - b.density) * a.cellweight))
    return min(max(tv, 0.0), 1.0)


def kl_divergence(p_true, p_approx, floor=KL_FLOOR, return_clamped=False):
    """``KL(p_true || p_approx)`` on a shared grid.

    ``p_approx`` is floored at ``floor`` where ``p_true > 0``. With
    ``return_clamped`` the result is ``(kl, clamped)`` where ``clamped``
    reports whether the floor was hit.
    """
    _check_same(p_true, p_approx)
    p = p_true.density
    mask = p > 0
    q = p_approx.density[mask]
    clamped = bool(np.any(q < floor))
    q = np.maximum(q, floor)
    kl = float(np.sum(p[mask] * np.log(p[mask] / q) * p_true.cellweight[mask]))
    kl = max(kl, 0.0)
    return (kl, clamped) if return_clamped else kl
