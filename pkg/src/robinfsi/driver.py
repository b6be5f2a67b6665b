"""Iterative partitioned coupling with force predictor and relaxation.

Per time step, starting from the previous relaxed interface force F^s_n:

    for k in 1..k_max:
        solve solid with F^s(k)            (+ M_fs v^s on the left if implicit)
        move the interface to d^s(k)
        solve fluid with v^s(k)
        F*       = int N^T sigma^f n^f + g int N^T (v^s - v^f)   (explicit)
                 = int N^T sigma^f n^f - g int N^T v^f           (implicit)
        F^s(k+1) = -beta F* + (1 - beta) F^s(k)
"""
from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .analysis import TimeSeries
from .errors import DivergenceError, FsiError, InvalidArgument
from .nitsche import CouplingConfig, InterfaceOperator, Treatment
from .solid import SolidState, SolidSystem, solve_solid_step


@dataclass(frozen=True)
class CoupledState:
    solid: SolidState
    fluid: Any
    f_s: np.ndarray  # relaxed interface force on the solid
    t: float = 0.0
    step_index: int = 0


@dataclass
class IterationTrace:
    force_increments: list = field(default_factory=list)
    newton_iterations: list = field(default_factory=list)
    wall_time: float = 0.0
    exchange: Any = None
    interface: Any = None


class FemSolid:
    """SolidSystem plus its wetted interface, in the shape the driver expects."""

    def __init__(self, system: SolidSystem, interface, newton_tol=1e-8, newton_max=25):
        self.system = system
        self.interface = interface
        self.n_dofs = system.n_dofs
        self.newton_tol = newton_tol
        self.newton_max = newton_max

    def initial_state(self):
        return SolidState.zeros(self.n_dofs)

    def solve(self, state_n, f_ext, m_fs, dt):
        return solve_solid_step(self.system, state_n, f_ext, m_fs, dt, self.newton_tol, self.newton_max)

    def interface_at(self, d):
        return InterfaceOperator(self.interface, d, self.n_dofs)

    def divergence_measure(self, state):
        return float(np.max(np.abs(state.d))) if len(state.d) else 0.0


@dataclass
class Systems:
    solid: Any  # FemSolid, SdofSolid, ...
    fluid: Any  # SurrogateFluid, NavierStokesFluid, ...
    probe_dofs: dict = field(default_factory=dict)  # channel name -> solid DOF index


def initial_state(systems: Systems, f_s=None) -> CoupledState:
    n = systems.solid.n_dofs
    f = np.zeros(n) if f_s is None else np.asarray(f_s, dtype=float).copy()
    return CoupledState(systems.solid.initial_state(), systems.fluid.initial_state(), f)


def _step(state_n: CoupledState, config: CouplingConfig, systems: Systems, implicit: bool):
    solid, fluid = systems.solid, systems.fluid
    dt, beta, g = config.dt, config.beta, config.gamma_n1
    t_new = (state_n.step_index + 1) * dt
    trace = IterationTrace()
    t0 = _time.perf_counter()

    F = state_n.f_s
    op = solid.interface_at(state_n.solid.d)
    s_state, f_state = state_n.solid, state_n.fluid
    for k in range(config.k_max):
        m_fs = op.mass(g) if implicit else None
        s_state = solid.solve(state_n.solid, F, m_fs, dt)
        trace.newton_iterations.append(s_state.newton_iterations)
        op = solid.interface_at(s_state.d)
        v_s = op.sample(s_state.v)
        a_s = op.sample(s_state.a)
        f_state, ex = fluid.step(state_n.fluid, op, v_s, a_s, t_new, dt)
        if implicit:
            f_star = op.integrate(ex.traction) - g * op.integrate(ex.fluid_velocity)
        else:
            f_star = op.integrate(ex.traction) + g * op.integrate(v_s - ex.fluid_velocity)
        F_new = -beta * f_star + (1.0 - beta) * F
        inc = float(np.linalg.norm(F_new - F))
        trace.force_increments.append(inc)
        F = F_new
        trace.exchange, trace.interface = ex, op
        if config.early_exit_tol is not None and inc <= config.early_exit_tol * max(1.0, float(np.linalg.norm(F))):
            break

    trace.wall_time = _time.perf_counter() - t0
    measure = solid.divergence_measure(s_state)
    if not np.isfinite(measure) or measure > config.blowup_threshold:
        raise DivergenceError(f"solid displacement {measure:.3e} exceeds {config.blowup_threshold:g}",
                              step=state_n.step_index + 1, time=t_new)
    new = CoupledState(s_state, f_state, F, t_new, state_n.step_index + 1)
    return new, trace


def step_algorithm1(state_n: CoupledState, config: CouplingConfig, systems: Systems):
    """One time step with the solid velocity in the Robin term lagged."""
    if config.treatment is not Treatment.EXPLICIT:
        raise InvalidArgument("step_algorithm1 needs treatment=explicit")
    return _step(state_n, config, systems, implicit=False)


def step_algorithm2(state_n: CoupledState, config: CouplingConfig, systems: Systems):
    """One time step with M_fs v^s moved into the solid operator."""
    if config.treatment is not Treatment.IMPLICIT:
        raise InvalidArgument("step_algorithm2 needs treatment=implicit")
    return _step(state_n, config, systems, implicit=True)


def step(state_n, config, systems):
    if config.treatment is Treatment.EXPLICIT:
        return step_algorithm1(state_n, config, systems)
    return step_algorithm2(state_n, config, systems)


# ---------------------------------------------------------------- recording

def record_probes(state: CoupledState, trace: IterationTrace, systems: Systems):
    d = state.solid.d
    return {name: float(d[i]) for name, i in systems.probe_dofs.items()}


def record_interface_force(state, trace, systems):
    f = state.f_s
    if len(f) == 1:
        return {"f_interface": float(f[0])}
    return {"f_interface_x": float(f[0::2].sum()), "f_interface_y": float(f[1::2].sum())}


def record_residual(state, trace, systems):
    return {"force_increment": trace.force_increments[-1] if trace.force_increments else 0.0}


DEFAULT_RECORDERS = (record_probes, record_interface_force, record_residual)


@dataclass
class Recording:
    """Per-step channels of one simulation, row 0 being the initial state."""

    t: np.ndarray
    channels: dict
    final_state: CoupledState
    traces: list = field(default_factory=list)

    def series(self, name) -> TimeSeries:
        return TimeSeries(self.t, self.channels[name], label=name)

    @property
    def names(self):
        return list(self.channels)


def run_simulation(initial: CoupledState, config: CouplingConfig, systems: Systems, t_end,
                   recorders: Sequence[Callable] = DEFAULT_RECORDERS, keep_traces=False) -> Recording:
    """Fixed-step loop from ``initial`` up to ``t_end``."""
    if t_end < 0:
        raise InvalidArgument("t_end must be non-negative")
    n_steps = int(round(t_end / config.dt))
    blank = IterationTrace()
    rows = [{}]
    for rec in recorders:
        rows[0].update(rec(initial, blank, systems))
    times = [initial.t]
    traces = []
    state = initial
    for _ in range(n_steps):
        try:
            state, trace = step(state, config, systems)
        except DivergenceError:
            raise
        except FsiError as exc:
            exc.args = (f"step {state.step_index + 1} (t={(state.step_index + 1) * config.dt:g}): {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            exc.step = state.step_index + 1
            exc.time = state.t + config.dt
            raise
        row = {}
        for rec in recorders:
            row.update(rec(state, trace, systems))
        rows.append(row)
        times.append(state.t)
        if keep_traces:
            traces.append(trace)
    names = list(rows[0])
    channels = {k: np.array([r.get(k, np.nan) for r in rows]) for k in names}
    return Recording(np.array(times), channels, state, traces)
