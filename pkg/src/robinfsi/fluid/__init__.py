"""Fluid sub-problems: a linear added-mass surrogate and a stabilized
incompressible Navier-Stokes solver on a fixed Cartesian grid.

Both expose ``initial_state()`` and
``step(state_n, interface_op, v_s, a_s, t, dt) -> (state, InterfaceExchange)``
which is all the coupling driver needs.
"""
from .common import FluidProperties, FluidState, InterfaceExchange
from .surrogate import SurrogateFluid, SurrogateFluidParams, surrogate_step
from .navier_stokes import (
    BoundarySpec,
    FluidFraction,
    FluidGrid,
    NavierStokesFluid,
    NitscheBoundary,
    assemble_ns_system,
    fluid_fraction,
    interface_traction,
    ns_step,
    stabilization_tau,
)

__all__ = [
    "BoundarySpec", "FluidFraction", "FluidGrid", "FluidProperties", "FluidState", "InterfaceExchange",
    "NavierStokesFluid", "NitscheBoundary", "SurrogateFluid", "SurrogateFluidParams",
    "assemble_ns_system", "fluid_fraction", "interface_traction", "ns_step", "stabilization_tau", "surrogate_step",
]
