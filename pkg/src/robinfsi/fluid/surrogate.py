"""Deterministic added-mass stand-in for the flow solve.

The fluid load on the solid at each interface point is
``-(m_a a_s + c_a v_s) + f0(t)`` per unit length and the fluid follows the
solid exactly (v^f = v^s).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import InvalidArgument
from .common import InterfaceExchange


@dataclass(frozen=True)
class SurrogateFluidParams:
    added_mass: float = 0.0  # per unit interface length
    added_damping: float = 0.0
    forcing: Optional[Callable[[float], np.ndarray]] = None  # t -> load per unit length

    def __post_init__(self):
        if self.added_mass < 0 or self.added_damping < 0:
            raise InvalidArgument("added mass and damping must be non-negative")

    def load(self, t):
        if self.forcing is None:
            return 0.0
        return np.asarray(self.forcing(t), dtype=float)


def surrogate_step(params: SurrogateFluidParams, interface, v_s, a_s, t, dt=None) -> InterfaceExchange:
    v_s = np.asarray(v_s, dtype=float)
    a_s = np.asarray(a_s, dtype=float)
    n = getattr(interface, "n_samples", None)
    if v_s.shape != a_s.shape or (n is not None and len(v_s) != n):
        raise InvalidArgument("velocity/acceleration samples do not match the interface layout")
    load = -(params.added_mass * a_s + params.added_damping * v_s) + params.load(t)
    return InterfaceExchange(traction=-load, fluid_velocity=v_s.copy())


class SurrogateFluid:
    def __init__(self, params: SurrogateFluidParams):
        self.params = params

    def initial_state(self):
        return None

    def step(self, state_n, interface_op, v_s, a_s, t, dt):
        return None, surrogate_step(self.params, interface_op, v_s, a_s, t, dt)
