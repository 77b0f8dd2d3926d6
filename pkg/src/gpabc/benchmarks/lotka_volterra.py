"""Lotka-Volterra predator-prey ODE integrated with fixed-step RK4."""

import numpy as np

from ..exceptions import ConditioningError

DT = 0.005
T_END = 16.0
MEASUREMENT_TIMES = tuple(2.0 * i for i in range(1, 9))
INITIAL_STATE = (0.5, 1.0)


def _rhs(x1, x2, th1, th2):
    return th1 * x1 - x1 * x2, th2 * x1 * x2 - x2


def lotka_volterra_trajectory(theta, times=MEASUREMENT_TIMES, dt=DT, initial=INITIAL_STATE):
    """States ``(x1, x2)`` at ``times`` for one or many parameter vectors.

    Parameters
    ----------
    theta : array_like, shape (2,) or (m, 2)
        ``(theta_1, theta_2)`` in ``dx1/dt = th1 x1 - x1 x2``, ``dx2/dt = th2 x1 x2 - x2``.
    times : sequence of float
        Measurement times; each must be a multiple of ``dt``.
    initial : pair of float
        State at time 0.

    Returns
    -------
    ndarray, shape (len(times), 2) or (m, len(times), 2)
    """
    th = np.asarray(theta, dtype=float)
    single = th.ndim == 1
    th = th.reshape(-1, 2)
    th1, th2 = th[:, 0], th[:, 1]
    steps = np.rint(np.asarray(times, dtype=float) / dt).astype(int)
    if np.any(np.abs(steps * dt - np.asarray(times)) > 1e-9):
        raise ValueError("measurement times must be multiples of the step size")
    x1 = np.full(th.shape[0], float(initial[0]))
    x2 = np.full(th.shape[0], float(initial[1]))
    out = np.empty((th.shape[0], len(steps), 2))
    want = {s: i for i, s in enumerate(steps)}
    if 0 in want:
        out[:, want[0], 0], out[:, want[0], 1] = x1, x2
    h = dt
    for k in range(1, int(steps.max()) + 1):
        a1, a2 = _rhs(x1, x2, th1, th2)
        b1, b2 = _rhs(x1 + 0.5 * h * a1, x2 + 0.5 * h * a2, th1, th2)
        c1, c2 = _rhs(x1 + 0.5 * h * b1, x2 + 0.5 * h * b2, th1, th2)
        d1, d2 = _rhs(x1 + h * c1, x2 + h * c2, th1, th2)
        x1 = x1 + h / 6.0 * (a1 + 2 * b1 + 2 * c1 + d1)
        x2 = x2 + h / 6.0 * (a2 + 2 * b2 + 2 * c2 + d2)
        if k in want:
            out[:, want[k], 0], out[:, want[k], 1] = x1, x2
    if not np.all(np.isfinite(out)):
        raise ConditioningError("Lotka-Volterra integration produced non-finite states")
    return out[0] if single else out
