"""Empirical probability-flow-ODE stepping and trajectory generation.

dx/dt = -sigma(t) sigma_dot(t) s(x, sigma(t)); integrating from t = T down
to t = eps transports prior samples onto the data distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from signet.errors import DivergenceError, RangeError


@dataclass
class Trajectory:
    """States ordered from t_N down to t_0; indices[k] is the grid index of
    states[k]."""

    indices: list
    states: np.ndarray

    def endpoint(self):
        return self.states[-1]


def _rhs(x, t, src, sched):
    s = src.evaluate_sigma(x, sched.sigma(t))
    if not np.all(np.isfinite(s)):
        raise DivergenceError(f"non-finite score at t={t}")
    return -sched.sigma(t) * sched.sigma_dot(t) * s


def euler_step(x, n_from, src, sched):
    """One first-order step from grid index n_from down to n_from - 1."""
    if not 1 <= n_from <= sched.N:
        raise RangeError(f"euler_step from index {n_from} outside [1, {sched.N}]")
    grid = sched.grid()
    t_hi, t_lo = grid[n_from], grid[n_from - 1]
    x = np.asarray(x, dtype=np.float64)
    d = _rhs(x, t_hi, src, sched)
    if not np.all(np.isfinite(d)):
        raise DivergenceError(f"non-finite PF-ODE update at index {n_from}")
    return x + (t_lo - t_hi) * d


def heun_step(x, n_from, src, sched):
    """Second-order (Heun) step from grid index n_from down to n_from - 1."""
    if not 1 <= n_from <= sched.N:
        raise RangeError(f"heun_step from index {n_from} outside [1, {sched.N}]")
    grid = sched.grid()
    t_hi, t_lo = grid[n_from], grid[n_from - 1]
    x = np.asarray(x, dtype=np.float64)
    h = t_lo - t_hi
    d1 = _rhs(x, t_hi, src, sched)
    xe = x + h * d1
    d2 = _rhs(xe, t_lo, src, sched)
    return x + 0.5 * h * (d1 + d2)


def flow_target(x_noised, n, src, sched):
    """One empirical PF-ODE step to the adjacent lower grid index; the
    consistency target x_{t_s} with s = n - 1."""
    if n < 1:
        raise RangeError("flow_target needs n >= 1")
    return euler_step(x_noised, n, src, sched)


_STEPPERS = {"euler": euler_step, "heun": heun_step}


def solve(x_T, src, sched, solver="euler"):
    """Integrate from index N down to 0, recording every state."""
    stepper = _STEPPERS[solver]
    x = np.asarray(x_T, dtype=np.float64)
    states = np.empty((sched.N + 1,) + x.shape)
    states[0] = x
    for k, n in enumerate(range(sched.N, 0, -1)):
        x = stepper(x, n, src, sched)
        states[k + 1] = x
    return Trajectory(indices=list(range(sched.N, -1, -1)), states=states)


def solve_reference(x_T, times, src, sched, total_substeps=10_000):
    """High-resolution Euler reference solve.

    Integrates from times[-1] down to times[0] with ~total_substeps uniform
    Euler substeps inside each interval, recording the state exactly at each
    requested time. Returns an array aligned with `times` (ascending).
    """
    times = np.asarray(times, dtype=np.float64)
    x = np.asarray(x_T, dtype=np.float64)
    out = np.empty((len(times),) + x.shape)
    out[-1] = x
    per_interval = max(1, int(np.ceil(total_substeps / max(1, len(times) - 1))))
    for k in range(len(times) - 1, 0, -1):
        t_hi, t_lo = times[k], times[k - 1]
        sub = np.linspace(t_hi, t_lo, per_interval + 1)
        for j in range(per_interval):
            d = _rhs(x, sub[j], src, sched)
            x = x + (sub[j + 1] - sub[j]) * d
        out[k - 1] = x
    return out
