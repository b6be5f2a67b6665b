from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgument


@dataclass(frozen=True)
class FluidProperties:
    density: float = 1.0
    viscosity: float = 0.01  # dynamic
    body_force: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not (self.density > 0 and self.viscosity > 0):
            raise InvalidArgument("fluid density and viscosity must be positive")

    @property
    def kinematic_viscosity(self):
        return self.viscosity / self.density


@dataclass(frozen=True)
class FluidState:
    v: np.ndarray  # (n_nodes, 2)
    p: np.ndarray  # (n_nodes,)
    t: float = 0.0
    picard_iterations: int = 0


@dataclass(frozen=True)
class InterfaceExchange:
    """Fluid data at the interface quadrature points.

    ``traction`` is sigma^f n^f with n^f the fluid outward normal, so the load
    the fluid puts on the solid is ``-traction``.
    """

    traction: np.ndarray  # (n_samples, dim)
    fluid_velocity: np.ndarray  # (n_samples, dim)

    def __post_init__(self):
        if np.shape(self.traction) != np.shape(self.fluid_velocity):
            raise InvalidArgument("traction and velocity samples must share one layout")

    @property
    def solid_load(self):
        return -np.asarray(self.traction)
