"""Reference posteriors on the evaluation grid."""

import numpy as np

from ..exceptions import ContractViolation
from ..posterior import GridSpec, PosteriorGrid, grid_points
from .problems import RECIPES

MC_DRAWS = {1: 10_000, 2: 1_000}


def mc_tail_probabilities(problem, observed, eps_raw, points, seed=0, draws=None):
    """Per-node Monte-Carlo estimate of ``P(delta <= eps | theta)``.

    Node ``i`` uses its own stream ``default_rng([seed, i])`` so the estimate
    does not depend on evaluation order or parallelism.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, problem.dim)
    n_draws = draws or MC_DRAWS.get(problem.dim, 1_000)
    out = np.empty(pts.shape[0])
    for i, node in enumerate(pts):
        rng = np.random.default_rng([seed, i])
        d = problem.simulate(np.broadcast_to(node, (n_draws, problem.dim)), observed, rng)
        out[i] = np.mean(d <= eps_raw)
    return out


def reference_posterior(problem, observed, eps_raw, grid_spec=None, seed=0, recipe=None, draws=None):
    """Reference density on the problem's grid.

    Parameters
    ----------
    recipe : {"analytic-abc", "mc-abc", "analytic-true"}, optional
        ``analytic-abc`` uses the exact ABC likelihood ``P(delta <= eps | theta)``;
        ``mc-abc`` estimates it per node by simulation; ``analytic-true`` uses
        the exact likelihood of the observed data (``eps`` is then ignored).
        Defaults to the problem's own recipe.
    """
    recipe = recipe or problem.reference_recipe
    if recipe not in RECIPES:
        raise ContractViolation(f"unknown reference recipe {recipe!r}")
    axes = (grid_spec or GridSpec()).axes(problem.prior)
    pts = grid_points(axes)
    shape = tuple(a.size for a in axes)
    if recipe == "analytic-abc":
        values = problem.tail(pts, observed, eps_raw)
    elif recipe == "mc-abc":
        values = mc_tail_probabilities(problem, observed, eps_raw, pts, seed, draws)
    else:
        ll = problem.loglik(pts, observed)
        top = np.max(ll)
        values = np.exp(ll - top) if np.isfinite(top) else np.zeros_like(ll)
    meta = {"recipe": recipe, "problem": problem.name}
    return PosteriorGrid.from_unnormalized(axes, values.reshape(shape), meta)
