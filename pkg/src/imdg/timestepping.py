"""Explicit Runge-Kutta time integration under the cut-cell CFL bound.

The scheme order follows the highest polynomial degree in use: Heun's SSP-RK2
for p <= 1, the Shu-Osher SSP-RK3 for p = 2 and classical RK4 for p >= 3.
States are numpy arrays or lists of arrays (one per AMR level).
"""

import numpy as np

SAFETY = 0.9


class NonFiniteState(Exception):
    """A solution coefficient became NaN/inf (instability tripwire)."""


class CflParams:
    """Per-level CFL constants: Courant constant, merge threshold, degree."""

    def __init__(self, courant=0.833, fbar=0.3, degree=1):
        if not (0.0 < courant < 1.0):
            raise ValueError(f"CFL constant must be in (0, 1), got {courant}")
        if not (0.0 < fbar < 1.0):
            raise ValueError(f"merge threshold must be in (0, 1), got {fbar}")
        self.courant = float(courant)
        self.fbar = float(fbar)
        self.degree = int(degree)


def cfl_timestep(h, params, max_speed):
    """Stable step tau = SAFETY * h * C * fbar / (c * (1 + 2p)) for one level."""
    if max_speed <= 0.0:
        raise ValueError("wave speed must be positive")
    return (SAFETY * h * params.courant * params.fbar
            / (max_speed * (1 + 2 * params.degree)))


def global_timestep(levels):
    """Smallest stable step over (h, params, speed) triples of all levels."""
    return min(cfl_timestep(h, par, c) for h, par, c in levels)


def _combine(arrays, coeffs):
    """Linear combination of state pytrees (arrays or lists of arrays)."""
    if isinstance(arrays[0], (list, tuple)):
        return [_combine([a[i] for a in arrays], coeffs)
                for i in range(len(arrays[0]))]
    out = coeffs[0] * arrays[0]
    for a, c in zip(arrays[1:], coeffs[1:]):
        out = out + c * a
    return out


def _check_finite(state):
    if isinstance(state, (list, tuple)):
        for part in state:
            _check_finite(part)
    elif not np.all(np.isfinite(state)):
        raise NonFiniteState("non-finite solution coefficients after RK step")


def scheme_for_degree(p):
    if p <= 1:
        return "ssprk2"
    if p == 2:
        return "ssprk3"
    return "rk4"


def rk_step(state, t, tau, rhs, scheme="rk4"):
    """One explicit RK step of d(state)/dt = rhs(t, state)."""
    if scheme == "ssprk2":
        k1 = rhs(t, state)
        u1 = _combine([state, k1], [1.0, tau])
        k2 = rhs(t + tau, u1)
        out = _combine([state, u1, k2], [0.5, 0.5, 0.5 * tau])
    elif scheme == "ssprk3":
        k1 = rhs(t, state)
        u1 = _combine([state, k1], [1.0, tau])
        k2 = rhs(t + tau, u1)
        u2 = _combine([state, u1, k2], [0.75, 0.25, 0.25 * tau])
        k3 = rhs(t + 0.5 * tau, u2)
        out = _combine([state, u2, k3], [1.0 / 3.0, 2.0 / 3.0, 2.0 * tau / 3.0])
    elif scheme == "rk4":
        k1 = rhs(t, state)
        k2 = rhs(t + 0.5 * tau, _combine([state, k1], [1.0, 0.5 * tau]))
        k3 = rhs(t + 0.5 * tau, _combine([state, k2], [1.0, 0.5 * tau]))
        k4 = rhs(t + tau, _combine([state, k3], [1.0, tau]))
        out = _combine([state, k1, k2, k3, k4],
                       [1.0, tau / 6.0, tau / 3.0, tau / 3.0, tau / 6.0])
    else:
        raise ValueError(f"unknown RK scheme {scheme!r}")
    _check_finite(out)
    return out
