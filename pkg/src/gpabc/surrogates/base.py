"""Pieces shared by the three surrogate formulations."""

from dataclasses import dataclass
import warnings

import numpy as np
from scipy import optimize

from ..exceptions import ConditioningError, ContractViolation, FitError
from ..transforms import DiscrepancyTransform, as_transform


@dataclass(frozen=True)
class TrainingSet:
    """Discrepancy-parameter pairs, with the discrepancies already transformed."""

    params: np.ndarray
    discrepancies: np.ndarray
    transform_tag: DiscrepancyTransform = DiscrepancyTransform.SE

    def __post_init__(self):
        x = np.asarray(self.params, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        d = np.asarray(self.discrepancies, dtype=float).ravel()
        object.__setattr__(self, "params", x)
        object.__setattr__(self, "discrepancies", d)
        object.__setattr__(self, "transform_tag", as_transform(self.transform_tag))
        if x.shape[0] != d.size:
            raise ContractViolation("params and discrepancies differ in length")
        if d.size < 1:
            raise ContractViolation("training set is empty")
        if not np.all(np.isfinite(d)) or not np.all(np.isfinite(x)):
            raise ContractViolation("training data must be finite")

    @property
    def size(self):
        return self.discrepancies.size

    @property
    def dim(self):
        return self.params.shape[1]

    def subset(self, idx):
        return TrainingSet(self.params[idx], self.discrepancies[idx], self.transform_tag)


def param_ranges(training, box=None):
    if box is not None:
        return np.asarray(box.upper, float) - np.asarray(box.lower, float)
    span = np.ptp(training.params, axis=0)
    return np.where(span > 0, span, 1.0)


class _Tracked:
    """Wraps a negated objective, remembering the best finite evaluation.

    A failed evaluation returns the last finite value plus a penalty with the
    last gradient, so the line search backtracks instead of aborting.
    """

    def __init__(self, fun):
        self.fun = fun
        self.best = (np.inf, None)
        self.last = None
        self.nfev = 0
        self.failures = 0

    def _penalty(self, psi):
        self.failures += 1
        if self.last is None:
            return 1e300, np.zeros_like(psi)
        val, grad = self.last
        return val + 1e2 * (1.0 + abs(val)), grad

    def __call__(self, psi):
        self.nfev += 1
        try:
            val, grad = self.fun(psi)
        except (ConditioningError, np.linalg.LinAlgError, FloatingPointError, FitError):
            return self._penalty(psi)
        if not np.isfinite(val) or not np.all(np.isfinite(grad)):
            return self._penalty(psi)
        self.last = (val, grad)
        if val < self.best[0]:
            self.best = (val, np.array(psi, copy=True))
        return val, grad


def multistart_minimize(fun, starts, bounds, gtol=1e-7, maxiter=500):
    """Run L-BFGS-B from each start and return the best result.

    ``fun`` maps log-hyperparameters to ``(value, gradient)`` of the quantity to
    *minimise*. Ties keep the lowest restart index.

    Returns
    -------
    best_x, best_value, diagnostics
    """
    diagnostics = []
    best_x, best_val = None, np.inf
    for i, x0 in enumerate(starts):
        x0 = np.clip(np.asarray(x0, float), [b[0] for b in bounds], [b[1] for b in bounds])
        tracked = _Tracked(fun)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            try:
                res = optimize.minimize(
                    tracked,
                    x0,
                    jac=True,
                    method="L-BFGS-B",
                    bounds=bounds,
                    options={"maxiter": maxiter, "gtol": gtol, "ftol": 1e-13},
                )
                x, val = res.x, res.fun
                msg = str(res.message)
            except Exception as exc:  # noqa: BLE001 - recorded as diagnostics
                x, val, msg = None, np.inf, f"{type(exc).__name__}: {exc}"
        if tracked.best[0] < val or not np.isfinite(val) or val >= 1e300:
            val, x = tracked.best
        diagnostics.append(
            {
                "restart": i,
                "value": val,
                "nfev": tracked.nfev,
                "failures": tracked.failures,
                "message": msg,
            }
        )
        if x is not None and np.isfinite(val) and val < 1e300 and val < best_val:
            best_x, best_val = np.array(x), float(val)
    if best_x is None:
        raise FitError("all restarts failed numerically", diagnostics)
    return best_x, best_val, diagnostics


def projected_gradient(x, grad, bounds, tol=1e-8):
    """Gradient with components pinned at an active bound zeroed out."""
    g = np.array(grad, dtype=float)
    for i, (lo, hi) in enumerate(bounds):
        if x[i] <= lo + tol and g[i] > 0:
            g[i] = 0.0
        if x[i] >= hi - tol and g[i] < 0:
            g[i] = 0.0
    return g


def is_single_point(q, dim):
    """True for a scalar (1-D problems) or a flat vector of length ``dim`` (p > 1)."""
    nd = np.ndim(q)
    return nd == 0 or (nd == 1 and dim > 1)
