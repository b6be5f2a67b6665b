"""Scenario presets, flat dotted-key configuration, and system builders.

A scenario is a preset name plus a flat mapping ``"section.key" -> value``.
Values are resolved in increasing precedence: preset defaults, then a config
file, then command-line ``--set`` overrides. Every key must exist in the
preset and every value is coerced to the type of the preset default.

Config files are INI text::

    [scenario]
    name = thick-beam

    [coupling]
    gamma_n1 = 1000
"""
from __future__ import annotations

import configparser
import difflib
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .driver import DEFAULT_RECORDERS, FemSolid, Systems, initial_state
from .errors import ConfigError, FsiError, UnknownKeyError
from .fluid import BoundarySpec, FluidGrid, NavierStokesFluid, SurrogateFluid, SurrogateFluidParams
from .fluid.common import FluidProperties
from .geometry import build_structured_quad_mesh, extract_interface
from .nitsche import CouplingConfig, Treatment
from .sdof import SdofParams, SdofSolid
from .solid import NeoHookeanMaterial, SolidSystem

_COUPLING = {
    "coupling.gamma_n1": 100.0,
    "coupling.gamma_n2": -1,
    "coupling.beta": 0.1,
    "coupling.k_max": 2,
    "coupling.dt": 0.02,
    "coupling.treatment": "explicit",
    "coupling.early_exit_tol": 0.0,  # 0 disables the early exit
    "run.t_end": 10.0,
    "output.snapshot_every": 0,  # steps between field snapshots, 0 = off
}

_SOLID = {
    "solid.youngs_modulus": 200.0,
    "solid.poisson_ratio": 0.3,
    "solid.density": 1.0,
    "solid.x0": 0.5,  # left edge of the clamped strip
    "solid.width": 0.0853,
    "solid.length": 0.3,
    "solid.nx": 10,
    "solid.ny": 30,
    "solid.newton_tol": 1e-8,
    "solid.newton_max": 25,
}

# inlet u(y, t) = 4 peak y (width - y) / width^2 * (mean + amplitude sin(2 pi frequency t))
_CHANNEL = {
    "fluid.density": 1.0,
    "fluid.viscosity": 0.01,
    "fluid.length": 1.5,
    "fluid.height": 0.6,
    "fluid.top": "wall",
    "fluid.nx": 96,
    "fluid.ny": 48,
    "fluid.inlet_peak": 0.3,
    "fluid.inlet_width": 0.6,
    "fluid.inlet_mean": 1.0,
    "fluid.inlet_amplitude": 0.0,
    "fluid.inlet_frequency": 1.0,
    "fluid.picard_tol": 1e-6,
    "fluid.picard_max": 15,
}

PRESETS: dict[str, dict[str, Any]] = {
    "sdof": {
        **_COUPLING,
        "coupling.gamma_n1": 0.0,
        "coupling.beta": 1.0,
        "coupling.k_max": 1,
        "coupling.treatment": "implicit",
        "run.t_end": 20.0,
        "sdof.m_ss": 1.0,
        "sdof.c": 2.5,
        "sdof.k": 10.0,
        "sdof.f_ext": 1.282,
    },
    "thick-beam": {**_COUPLING, **_SOLID, **_CHANNEL},
    "thick-beam-mini": {**_COUPLING, **_SOLID, **_CHANNEL, "solid.nx": 8, "solid.ny": 24, "fluid.nx": 48, "fluid.ny": 24},
    "thin-valve": {
        **_COUPLING, **_SOLID, **_CHANNEL,
        "coupling.beta": 0.02,
        "coupling.dt": 0.005,
        "run.t_end": 5.0,
        "solid.youngs_modulus": 5e5,
        "solid.poisson_ratio": 0.4,
        "solid.x0": 0.9894,
        "solid.width": 0.0212,
        "solid.length": 0.7,
        "solid.nx": 4,
        "solid.ny": 100,
        "fluid.viscosity": 0.1,
        "fluid.length": 4.0,
        "fluid.height": 0.805,  # symmetry half of a 1.61 wide channel
        "fluid.top": "slip",
        "fluid.nx": 160,
        "fluid.ny": 32,
        "fluid.inlet_peak": 3.240125,  # 5 * 0.805^2
        "fluid.inlet_width": 1.61,
        "fluid.inlet_mean": 1.1,
        "fluid.inlet_amplitude": 1.0,
    },
    "surrogate-probe": {
        **_COUPLING, **_SOLID,
        "coupling.beta": 0.05,
        "coupling.dt": 0.005,
        "run.t_end": 5.0,
        "solid.youngs_modulus": 1e6,
        "solid.x0": 0.0,
        "solid.width": 0.05,
        "solid.length": 1.0,
        "solid.nx": 2,
        "solid.ny": 20,
        "fluid.density": 1.0,
        # added mass per unit wetted length = coefficient * rho_f * solid length
        "surrogate.added_mass_coefficient": math.pi / 8,
        "surrogate.added_damping": 3.0,
        "surrogate.load_scale": 0.01,
        "surrogate.load_mean": 0.0,  # a mean load only adds a slow creep under heavy Robin damping
        "surrogate.load_amplitude": 1.0,
        "surrogate.load_frequency": 1.0,
    },
}

_ALLOWED_STRINGS = {"coupling.treatment": None, "fluid.top": ("wall", "slip")}


def preset_names():
    return sorted(PRESETS)


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __getitem__(self, key):
        return self.params[key]

    @property
    def kind(self):
        return "thick-beam" if self.name == "thick-beam-mini" else self.name

    @property
    def t_end(self):
        return float(self.params["run.t_end"])

    def coupling_config(self, **changes) -> CouplingConfig:
        p = self.params
        tol = p["coupling.early_exit_tol"]
        kw = dict(
            gamma_n1=p["coupling.gamma_n1"], gamma_n2=p["coupling.gamma_n2"], beta=p["coupling.beta"],
            k_max=p["coupling.k_max"], dt=p["coupling.dt"], treatment=p["coupling.treatment"],
            early_exit_tol=tol if tol > 0 else None, blowup_threshold=1e3 * characteristic_length(self),
        )
        kw.update(changes)
        return CouplingConfig(**kw)

    def with_overrides(self, overrides) -> "ScenarioSpec":
        params = dict(self.params)
        for key, raw in _normalize_overrides(overrides):
            key = resolve_key(self.name, key)
            params[key] = _coerce(self.name, key, raw)
        spec = ScenarioSpec(self.name, params)
        validate(spec)
        return spec

    def differences(self, other: "ScenarioSpec"):
        keys = set(self.params) | set(other.params)
        return {k for k in keys if self.params.get(k) != other.params.get(k)}


def _normalize_overrides(overrides):
    if overrides is None:
        return []
    if isinstance(overrides, Mapping):
        return list(overrides.items())
    out = []
    for item in overrides:
        if isinstance(item, str):
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            k, v = item.split("=", 1)
            out.append((k.strip(), v.strip()))
        else:
            out.append(tuple(item))
    return out


def resolve_key(preset, key):
    """Full dotted key for ``key``; a bare name is accepted when unambiguous."""
    schema = PRESETS[preset]
    if key in schema:
        return key
    if "." not in key:
        hits = [k for k in schema if k.split(".", 1)[1] == key]
        if len(hits) == 1:
            return hits[0]
    bare = {k.split(".", 1)[1]: k for k in schema}
    close = difflib.get_close_matches(key, list(schema), n=1, cutoff=0.6)
    if not close:
        close = [bare[c] for c in difflib.get_close_matches(key.rsplit(".", 1)[-1], list(bare), n=1, cutoff=0.6)]
    raise UnknownKeyError(key, close[0] if close else None)


def _coerce(preset, key, raw):
    key = resolve_key(preset, key)
    default = PRESETS[preset][key]
    try:
        if isinstance(default, bool):
            value = raw if isinstance(raw, bool) else str(raw).strip().lower() in ("1", "true", "yes", "on")
        elif isinstance(default, int):
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError
            value = int(raw) if not isinstance(raw, str) else int(raw.strip())
        elif isinstance(default, float):
            value = float(raw)
        else:
            value = str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(default).__name__}") from None
    if key == "coupling.treatment":
        try:
            value = Treatment.parse(value).value
        except FsiError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    allowed = _ALLOWED_STRINGS.get(key)
    if allowed and value not in allowed:
        raise ConfigError(f"{key}: {value!r} is not one of {allowed}")
    return value


def validate(spec: ScenarioSpec):
    """Range checks; raises ConfigError naming the offending setting."""
    p = spec.params
    try:
        spec.coupling_config()
    except FsiError as exc:
        raise ConfigError(f"coupling: {exc}") from None
    if not p["run.t_end"] >= 0:
        raise ConfigError("run.t_end must be non-negative")
    if p["output.snapshot_every"] < 0:
        raise ConfigError("output.snapshot_every must be non-negative")
    positive = [k for k in p if k.split(".")[1] in (
        "nx", "ny", "length", "width", "height", "density", "viscosity", "youngs_modulus", "m_ss", "k",
        "newton_tol", "newton_max", "picard_tol", "picard_max", "inlet_width", "load_frequency",
        "inlet_frequency")]
    for k in positive:
        if not p[k] > 0:
            raise ConfigError(f"{k} must be positive")
    for k in ("sdof.c", "surrogate.added_mass_coefficient", "surrogate.added_damping"):
        if k in p and p[k] < 0:
            raise ConfigError(f"{k} must be non-negative")
    if "solid.poisson_ratio" in p and not -1.0 < p["solid.poisson_ratio"] < 0.5:
        raise ConfigError("solid.poisson_ratio must lie in (-1, 0.5)")
    if "fluid.inlet_width" in p and p["fluid.inlet_width"] < p["fluid.height"] - 1e-12:
        raise ConfigError("fluid.inlet_width must cover the channel height")
    if "fluid.length" in p and "solid.x0" in p:
        if not (0 < p["solid.x0"] and p["solid.x0"] + p["solid.width"] < p["fluid.length"]
                and p["solid.length"] < p["fluid.height"]):
            raise ConfigError("solid strip must lie inside the fluid box")


def load_scenario(source, overrides=None) -> ScenarioSpec:
    """Resolve a preset name, an INI file, or a run manifest into a spec."""
    if isinstance(source, ScenarioSpec):
        return source.with_overrides(overrides)
    text = None
    if isinstance(source, Path) or (isinstance(source, str) and source not in PRESETS):
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"unknown preset or missing file: {source}")
        text = path.read_text()
    if text is None:
        spec = ScenarioSpec(source, dict(PRESETS[source]))
    elif text.lstrip().startswith("{"):
        spec = _from_manifest(text)
    else:
        spec = parse_config(text)
    return spec.with_overrides(overrides)


def _from_manifest(text):
    try:
        data = json.loads(text)
        name, params = data["scenario"], data["parameters"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"malformed manifest: {exc}") from None
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    return ScenarioSpec(name, dict(PRESETS[name])).with_overrides(params)


def parse_config(text: str) -> ScenarioSpec:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if not cp.has_option("scenario", "name"):
        raise ConfigError("config needs [scenario] name = <preset>")
    name = cp.get("scenario", "name").strip()
    if name not in PRESETS:
        close = difflib.get_close_matches(name, preset_names(), n=1)
        raise ConfigError(f"unknown preset {name!r}" + (f"; did you mean {close[0]!r}?" if close else ""))
    overrides = [(f"{sec}.{k}", v) for sec in cp.sections() for k, v in cp.items(sec)
                 if not (sec == "scenario" and k == "name")]
    return ScenarioSpec(name, dict(PRESETS[name])).with_overrides(overrides)


def serialize(spec: ScenarioSpec) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["scenario"] = {"name": spec.name}
    for key in sorted(spec.params):
        sec, k = key.split(".", 1)
        if not cp.has_section(sec):
            cp.add_section(sec)
        v = spec.params[key]
        cp.set(sec, k, repr(v) if isinstance(v, float) else str(v))
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# --------------------------------------------------------------- derived data

def characteristic_length(spec: ScenarioSpec):
    """Length scale of the divergence detector (the strip length, or F/k)."""
    if spec.kind == "sdof":
        return abs(spec["sdof.f_ext"]) / spec["sdof.k"] or 1.0
    return spec["solid.length"]


def inlet_velocity(spec: ScenarioSpec, y, t):
    p = spec.params
    w = p["fluid.inlet_width"]
    y = np.asarray(y, dtype=float)
    shape = 4.0 * p["fluid.inlet_peak"] * y * (w - y) / w**2
    return shape * (p["fluid.inlet_mean"] + p["fluid.inlet_amplitude"] * math.sin(2 * math.pi * p["fluid.inlet_frequency"] * t))


def reynolds_number(spec: ScenarioSpec) -> Fraction:
    """rho * (mean inlet speed) * (strip length) / mu, in exact arithmetic on
    the decimal values of the settings. The parabola's mean is 2/3 of its peak."""
    p = spec.params
    dec = lambda k: Fraction(repr(p[k]))
    mean = Fraction(2, 3) * dec("fluid.inlet_peak") * dec("fluid.inlet_mean")
    return dec("fluid.density") * mean * dec("solid.length") / dec("fluid.viscosity")


def forcing_period(spec: ScenarioSpec):
    """Period of the periodic forcing, or None for steady forcing."""
    p = spec.params
    if spec.kind == "surrogate-probe" and p["surrogate.load_amplitude"] != 0:
        return 1.0 / p["surrogate.load_frequency"]
    if "fluid.inlet_amplitude" in p and p["fluid.inlet_amplitude"] != 0:
        return 1.0 / p["fluid.inlet_frequency"]
    return None


# ------------------------------------------------------------------- building

@dataclass
class BuiltScenario:
    spec: ScenarioSpec
    config: CouplingConfig
    initial: Any
    systems: Systems
    recorders: tuple
    primary_channel: str
    reference_channel: str | None = None  # forcing signal for phase lag
    solid_mesh: Any = None
    fluid_grid: Any = None


def _strip(spec):
    p = spec.params
    mesh = build_structured_quad_mesh(p["solid.nx"], p["solid.ny"], (p["solid.x0"], 0.0),
                                      (p["solid.width"], p["solid.length"]))
    material = NeoHookeanMaterial(p["solid.youngs_modulus"], p["solid.poisson_ratio"], p["solid.density"])
    system = SolidSystem.clamped(mesh, material, ("bottom",))
    interface = extract_interface(mesh, ["right", "top", "left"])
    solid = FemSolid(system, interface, p["solid.newton_tol"], p["solid.newton_max"])
    tip = mesh.nearest_node((p["solid.x0"] + 0.5 * p["solid.width"], p["solid.length"]))
    return mesh, solid, {"ux_A": 2 * tip, "uy_A": 2 * tip + 1}


def _channel_recorder(spec):
    y_probe = 0.5 * spec["fluid.inlet_width"]

    def record_inlet(state, trace, systems):
        return {"inlet_probe": float(inlet_velocity(spec, y_probe, state.t))}
    return record_inlet


def _load_recorder(load: Callable):
    def record_forcing(state, trace, systems):
        return {"forcing": float(load(state.t)[0])}
    return record_forcing


def build(spec: ScenarioSpec, config: CouplingConfig | None = None) -> BuiltScenario:
    """Instantiate solvers, the zero initial state and the recorders."""
    config = config or spec.coupling_config()
    p = spec.params
    kind = spec.kind
    if kind == "sdof":
        F = p["sdof.f_ext"]
        params = SdofParams(p["sdof.m_ss"], p["sdof.c"], p["sdof.k"], F)
        solid = SdofSolid(params.m_ss, params.c, params.k)
        fluid = SurrogateFluid(SurrogateFluidParams(forcing=lambda t: F))
        systems = Systems(solid, fluid, {"d": 0})
        # the first predictor is the load acting on the initial state
        init = initial_state(systems, [F])
        return BuiltScenario(spec, config, init, systems, DEFAULT_RECORDERS, "d")

    mesh, solid, probes = _strip(spec)
    if kind == "surrogate-probe":
        m_a = p["surrogate.added_mass_coefficient"] * p["fluid.density"] * p["solid.length"]
        scale, mean, amp, freq = (p["surrogate.load_scale"], p["surrogate.load_mean"],
                                  p["surrogate.load_amplitude"], p["surrogate.load_frequency"])

        def load(t):
            return np.array([scale * (mean + amp * math.sin(2 * math.pi * freq * t)), 0.0])

        fluid = SurrogateFluid(SurrogateFluidParams(m_a, p["surrogate.added_damping"], load))
        systems = Systems(solid, fluid, probes)
        op = solid.interface_at(None)
        f0 = op.integrate(np.tile(load(0.0), (op.n_samples, 1)))
        init = initial_state(systems, f0)
        return BuiltScenario(spec, config, init, systems, DEFAULT_RECORDERS + (_load_recorder(load),),
                             "ux_A", "forcing", solid_mesh=mesh)

    grid = FluidGrid(p["fluid.nx"], p["fluid.ny"], (0.0, 0.0), (p["fluid.length"], p["fluid.height"]))
    bc = BoundarySpec.channel(lambda y, t: inlet_velocity(spec, y, t), top=p["fluid.top"])
    props = FluidProperties(p["fluid.density"], p["fluid.viscosity"])
    fluid = NavierStokesFluid(grid, props, bc, config.gamma_n1, config.gamma_n2,
                              p["fluid.picard_tol"], p["fluid.picard_max"])
    systems = Systems(solid, fluid, probes)
    init = initial_state(systems)
    ref = "inlet_probe" if forcing_period(spec) else None
    return BuiltScenario(spec, config, init, systems, DEFAULT_RECORDERS + (_channel_recorder(spec),),
                         "ux_A", ref, solid_mesh=mesh, fluid_grid=grid)


def scenario_factory(spec: ScenarioSpec):
    """``cfg -> (initial, systems)`` callable for :func:`analysis.max_stable_beta`."""
    def factory(cfg):
        b = build(spec, cfg)
        return b.initial, b.systems
    return factory
