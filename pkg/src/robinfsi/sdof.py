"""Single-degree-of-freedom spring-mass-damper with the implicit-Robin term.

    m a_{n+1} + (c + m_fs) v_{n+1} + k d_{n+1} = F + m_fs v_n

with BDF1 kinematics. Since m_fs (v_{n+1} - v_n) = m_fs dt a_{n+1}, the extra
term acts like an added mass m_fs*dt, which is why its effect fades as dt -> 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .analysis import TimeSeries
from .errors import InvalidArgument
from .solid import SolidState

# constants of the model problem
REFERENCE_CONSTANTS = dict(m_ss=1.0, c=2.5, k=10.0, f_ext=1.282)


@dataclass(frozen=True)
class SdofParams:
    m_ss: float = 1.0
    c: float = 2.5
    k: float = 10.0
    f_ext: Union[float, Callable[[float], float]] = 1.282
    m_fs: float = 0.0

    def __post_init__(self):
        if not (self.m_ss > 0 and self.k > 0 and self.c >= 0 and self.m_fs >= 0):
            raise InvalidArgument("need m_ss > 0, k > 0, c >= 0, m_fs >= 0")

    def force(self, t):
        return self.f_ext(t) if callable(self.f_ext) else self.f_ext

    @property
    def omega_n(self):
        return math.sqrt(self.k / self.m_ss)

    @property
    def zeta(self):
        return self.c / (2.0 * math.sqrt(self.k * self.m_ss))

    @property
    def omega_d(self):
        return self.omega_n * math.sqrt(1.0 - self.zeta**2)

    @property
    def static_displacement(self):
        return self.force(math.inf) / self.k


def step_sdof(params: SdofParams, d_n, v_n, dt, t_next=None):
    """One BDF1 step; returns (d, v, a) at the new time level."""
    if not dt > 0:
        raise InvalidArgument("time step must be positive")
    m, c, k, mfs = params.m_ss, params.c, params.k, params.m_fs
    F = params.force(t_next)
    # solve for the increment so that equilibrium stays a fixed point
    lhs = m / dt**2 + (c + mfs) / dt + k
    rhs = (F + mfs * v_n) - k * d_n + m * v_n / dt
    inc = rhs / lhs
    d = d_n + inc
    v = inc / dt
    a = (v - v_n) / dt
    return d, v, a


def simulate_sdof(params: SdofParams, dt, t_end, d0=0.0, v0=0.0) -> TimeSeries:
    n = int(round(t_end / dt))
    t = dt * np.arange(n + 1)
    d = np.empty(n + 1)
    d[0], v = d0, v0
    for i in range(n):
        d[i + 1], v, _ = step_sdof(params, d[i], v, dt, t[i + 1])
    return TimeSeries(t, d, label=f"d(m_fs={params.m_fs:g})")


def analytic_reference(params: SdofParams, t):
    """Exact response of m d'' + c d' + k d = F from rest (constant F, m_fs = 0)."""
    if params.c**2 >= 4 * params.m_ss * params.k:
        raise InvalidArgument("analytic reference only covers the underdamped regime")
    if callable(params.f_ext):
        raise InvalidArgument("analytic reference needs a constant force")
    t = np.asarray(t, dtype=float)
    z, wn, wd = params.zeta, params.omega_n, params.omega_d
    env = np.exp(-z * wn * t)
    return params.f_ext / params.k * (1.0 - env * (np.cos(wd * t) + z / math.sqrt(1 - z**2) * np.sin(wd * t)))


class SdofSolid:
    """The SDOF system behind the coupling-driver solid interface.

    The damper c is part of the structure; the implicit-Robin term arrives
    through the ``m_fs`` matrix argument exactly as for the FEM solid.
    """

    n_dofs = 1

    def __init__(self, m_ss=1.0, c=2.5, k=10.0):
        self.m_ss, self.c, self.k = m_ss, c, k

    def initial_state(self):
        return SolidState.zeros(1)

    def solve(self, state_n, f_ext, m_fs, dt):
        mfs = 0.0 if m_fs is None else float(np.asarray(m_fs).ravel()[0])
        d_n, v_n = float(state_n.d[0]), float(state_n.v[0])
        m, c, k = self.m_ss, self.c, self.k
        # m a + (c + mfs) v + k d = f  with v, a from BDF1
        lhs = m / dt**2 + (c + mfs) / dt + k
        inc = (float(np.ravel(f_ext)[0]) - k * d_n + m * v_n / dt) / lhs
        v = inc / dt
        return SolidState(np.array([d_n + inc]), np.array([v]), np.array([(v - v_n) / dt]), state_n.t + dt)

    def interface_at(self, d):
        return PointInterface()

    def divergence_measure(self, state):
        return float(abs(state.d[0]))


class PointInterface:
    """One-point 'interface' for a single scalar DOF with unit weight."""

    n_samples = 1

    def sample(self, nodal):
        return np.asarray(nodal, dtype=float).reshape(1, 1)

    def integrate(self, samples):
        return np.asarray(samples, dtype=float).reshape(1).copy()

    def mass(self, gamma):
        return np.array([[float(gamma)]])
