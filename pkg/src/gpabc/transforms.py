"""Monotone transformations of the squared-error discrepancy.

Tags are ``se`` (identity), ``log`` and ``sqrt``. Because every transform is
strictly increasing on its domain, ``1{d <= eps} == 1{g(d) <= g(eps)}`` and a
tail probability computed on the transformed scale with the transported
threshold equals the one on the raw scale.
"""

from enum import Enum

import numpy as np

from .exceptions import TransformDomainError


class DiscrepancyTransform(str, Enum):
    SE = "se"
    LOG = "log"
    SQRT = "sqrt"

    def __str__(self):
        return self.value


TRANSFORMS = tuple(t.value for t in DiscrepancyTransform)


def as_transform(tag):
    """Coerce a tag string (or enum member) into a :class:`DiscrepancyTransform`."""
    try:
        return DiscrepancyTransform(str(tag).lower())
    except ValueError:
        raise TransformDomainError(
            f"unknown transform {tag!r}; expected one of {', '.join(TRANSFORMS)}"
        ) from None


def _check_domain(t, delta):
    delta = np.asarray(delta, dtype=float)
    if t is DiscrepancyTransform.LOG and np.any(~(delta > 0)):
        raise TransformDomainError("log transform needs strictly positive discrepancies")
    if t is DiscrepancyTransform.SQRT and np.any(~(delta >= 0)):
        raise TransformDomainError("sqrt transform needs nonnegative discrepancies")
    return delta


def apply(t, delta):
    """Map raw discrepancies to the modelling scale.

    Works elementwise on scalars or arrays; returns a float for scalar input.
    """
    t = as_transform(t)
    d = _check_domain(t, delta)
    if t is DiscrepancyTransform.SE:
        out = d.copy()
    elif t is DiscrepancyTransform.LOG:
        out = np.log(d)
    else:
        out = np.sqrt(d)
    return float(out) if out.ndim == 0 else out


def inverse(t, value):
    t = as_transform(t)
    v = np.asarray(value, dtype=float)
    if t is DiscrepancyTransform.SE:
        out = v.copy()
    elif t is DiscrepancyTransform.LOG:
        out = np.exp(v)
    else:
        if np.any(v < 0):
            raise TransformDomainError("sqrt inverse needs nonnegative values")
        out = v * v
    return float(out) if out.ndim == 0 else out


def transform_threshold(t, eps):
    """Transport an ABC threshold to the modelling scale (same map as :func:`apply`)."""
    return apply(t, eps)


def log_jacobian(t, delta):
    """``log |g'(delta)|``; added to a transformed-scale log density gives the raw-scale one."""
    t = as_transform(t)
    d = _check_domain(t, delta)
    if t is DiscrepancyTransform.SE:
        out = np.zeros_like(d)
    elif t is DiscrepancyTransform.LOG:
        out = -np.log(d)
    else:
        if np.any(d == 0):
            raise TransformDomainError("sqrt Jacobian is infinite at zero")
        out = -np.log(2.0 * np.sqrt(d))
    return float(out) if out.ndim == 0 else out
