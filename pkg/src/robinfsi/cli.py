"""Command line: ``robinfsi run | sweep | analyze | presets``.

Exit codes: 0 success, 2 divergence, 3 configuration error, 4 solver error.
"""
from __future__ import annotations

import argparse
import contextlib
import itertools
import json
import math
import random
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import dominant_frequency, phase_lag, settling_time
from .driver import run_simulation
from .errors import (ConfigError, DivergenceError, ElementInversionError, FsiError, InvalidArgument,
                     NotSettledError)
from .output import (RunManifest, format_float, load_series, write_fluid_vtk, write_series_csv,
                     write_solid_vtk)
from .scenarios import PRESETS, ScenarioSpec, build, forcing_period, load_scenario, preset_names, serialize

EXIT_OK, EXIT_DIVERGED, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3, 4


@contextlib.contextmanager
def forbid_rng():
    """Make every stdlib/numpy random entry point raise while active."""
    def refuse(*_, **__):
        raise RuntimeError("random number generation attempted in a seedless run")

    targets = [(np.random, n) for n in ("default_rng", "seed", "rand", "randn", "random", "randint",
                                        "normal", "uniform", "RandomState", "Generator")]
    targets += [(random, n) for n in ("random", "seed", "randint", "uniform", "gauss", "choice", "shuffle")]
    saved = [(mod, n, getattr(mod, n)) for mod, n in targets]
    try:
        for mod, n, _ in saved:
            setattr(mod, n, refuse)
        yield
    finally:
        for mod, n, orig in saved:
            setattr(mod, n, orig)


def _snapshot_recorder(built, out_dir: Path, every: int, written: list):
    snap = out_dir / "snapshots"

    def record_snapshot(state, trace, systems):
        if state.step_index % every == 0:
            snap.mkdir(exist_ok=True)
            tag = f"{state.step_index:06d}"
            if built.solid_mesh is not None:
                p = snap / f"solid_{tag}.vtk"
                write_solid_vtk(p, built.solid_mesh, state.solid)
                written.append(p)
            if built.fluid_grid is not None:
                p = snap / f"fluid_{tag}.vtk"
                write_fluid_vtk(p, built.fluid_grid, state.fluid)
                written.append(p)
        return {}
    return record_snapshot


def run_spec(spec: ScenarioSpec, out_dir, seedless=False) -> RunManifest:
    """Run one scenario into ``out_dir``: series.csv, manifest.json, optional
    snapshots and, on failure, error.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for stale in ("series.csv", "error.json", "manifest.json"):
        (out / stale).unlink(missing_ok=True)
    if (out / "snapshots").is_dir():
        shutil.rmtree(out / "snapshots")
    manifest = RunManifest(spec.name, dict(spec.params), __version__, seedless=seedless)
    guard = forbid_rng() if seedless else contextlib.nullcontext()
    t0 = time.perf_counter()
    rec = None
    snapshots: list = []
    with guard:
        built = build(spec)
        recorders = built.recorders
        every = spec["output.snapshot_every"]
        if every > 0:
            recorders = recorders + (_snapshot_recorder(built, out, every, snapshots),)
        try:
            rec = run_simulation(built.initial, built.config, built.systems, spec.t_end, recorders)
        except FsiError as exc:
            # an unstable coupling iteration folds the solid before it reaches the blow-up bound
            blown = isinstance(exc, (DivergenceError, ElementInversionError))
            manifest.status = "diverged" if blown else "solver-error"
            manifest.error = {"type": type(exc).__name__, "message": str(exc),
                              "step": getattr(exc, "step", None), "time": getattr(exc, "time", None)}
    manifest.wall_time = time.perf_counter() - t0
    if rec is not None:
        csv_path = out / "series.csv"
        write_series_csv(csv_path, rec.t, rec.channels)
        manifest.add_output(out, csv_path)
    else:
        err = out / "error.json"
        err.write_text(json.dumps(manifest.error, indent=2, sort_keys=True) + "\n")
        manifest.add_output(out, err)
    for p in snapshots:
        manifest.add_output(out, p)
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


def summarize(spec: ScenarioSpec, csv_path, primary=None, reference=None):
    """Settling time, phase lag and peak displacement of one run's CSV."""
    built_primary = "d" if spec.kind == "sdof" else "ux_A"
    primary = primary or built_primary
    u = load_series(csv_path, primary)
    row = {"max_displacement": float(np.max(np.abs(u.y)))}
    try:
        row["settling_time"] = settling_time(u)
    except NotSettledError:
        row["settling_time"] = math.nan
    period = forcing_period(spec)
    row["phase_lag"] = math.nan
    if period:
        ref_name = reference or ("forcing" if spec.kind == "surrogate-probe" else "inlet_probe")
        n = int(math.floor(0.5 * (u.t[-1] - u.t[0]) / period + 1e-9))
        if n >= 2:
            start = u.t[-1] - n * period - 1e-9 * period
            ref = load_series(csv_path, ref_name)
            row["phase_lag"] = phase_lag(ref.window(start), u.window(start), period, causal=True)
    return row


def _cell(args):
    spec, out_dir, seedless = args
    manifest = run_spec(spec, out_dir, seedless)
    row = {"status": manifest.status, "diverged": int(manifest.status == "diverged"),
           "settling_time": math.nan, "phase_lag": math.nan, "max_displacement": math.nan}
    if manifest.status == "ok":
        row.update(summarize(spec, Path(out_dir) / "series.csv"))
    return row


def parse_grid(items, spec: ScenarioSpec):
    """``["key=v1,v2", ...]`` -> ordered list of (key, [values])."""
    grid = []
    for item in items:
        if "=" not in item:
            raise ConfigError(f"grid entry {item!r} is not of the form key=v1,v2,...")
        k, vals = item.split("=", 1)
        values = [v.strip() for v in vals.split(",") if v.strip()]
        if not values:
            raise ConfigError(f"grid entry {item!r} has no values")
        grid.append((k.strip(), values))
    if not grid:
        raise ConfigError("sweep needs at least one --grid entry")
    return grid


def sweep_spec(spec: ScenarioSpec, grid, out_dir, workers=1, seedless=False):
    """Run the Cartesian product of ``grid`` and write summary.csv.

    Cells are numbered in row-major grid order; the summary follows that order
    regardless of which worker finishes first. A failing cell is recorded and
    the sweep carries on.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    keys = [k for k, _ in grid]
    combos = list(itertools.product(*[v for _, v in grid]))
    cells = [spec.with_overrides(list(zip(keys, combo))) for combo in combos]  # validates all up front
    jobs = [(c, out / f"cell_{i:03d}", seedless) for i, c in enumerate(cells)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_cell, jobs))
    else:
        rows = [_cell(j) for j in jobs]
    cols = ["cell"] + keys + ["status", "diverged", "settling_time", "phase_lag", "max_displacement"]
    lines = [",".join(cols)]
    for i, (combo, row) in enumerate(zip(combos, rows)):
        vals = [f"cell_{i:03d}"] + [str(c) for c in combo] + [row["status"], str(row["diverged"])]
        vals += [format_float(row[k]) for k in ("settling_time", "phase_lag", "max_displacement")]
        lines.append(",".join(vals))
    (out / "summary.csv").write_text("\n".join(lines) + "\n", newline="\n")
    return rows


# ------------------------------------------------------------------ argparse

def _spec_from_args(args) -> ScenarioSpec:
    if bool(args.preset) == bool(args.config):
        raise ConfigError("give exactly one of --preset or --config")
    return load_scenario(args.preset or args.config, args.set)


def _cmd_run(args):
    spec = _spec_from_args(args)
    m = run_spec(spec, args.out, args.seedless)
    print(f"{spec.name}: {m.status} in {m.wall_time:.2f} s -> {args.out}")
    if m.error:
        print(json.dumps(m.error), file=sys.stderr)
    return {"ok": EXIT_OK, "diverged": EXIT_DIVERGED}.get(m.status, EXIT_SOLVER)


def _cmd_sweep(args):
    spec = _spec_from_args(args)
    grid = parse_grid(args.grid, spec)
    rows = sweep_spec(spec, grid, args.out, args.workers, args.seedless)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} cells, {failed} failed -> {Path(args.out) / 'summary.csv'}")
    return EXIT_OK


def _cmd_analyze(args):
    u = load_series(args.csv, args.channel)
    result = {"channel": args.channel, "max_abs": float(np.max(np.abs(u.y))), "final": float(u.y[-1])}
    try:
        result["settling_time"] = settling_time(u, args.final_value, args.band)
    except NotSettledError:
        result["settling_time"] = None
    try:
        result["dominant_frequency"] = dominant_frequency(u, "final")
    except InvalidArgument:
        result["dominant_frequency"] = None
    if args.reference:
        if not args.period:
            raise ConfigError("--reference needs --period")
        ref = load_series(args.csv, args.reference)
        result["phase_lag"] = phase_lag(ref, u, args.period, causal=args.causal)
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_presets(args):
    if args.name is None:
        for name in preset_names():
            print(name)
        return EXIT_OK
    if args.name not in PRESETS:
        raise ConfigError(f"unknown preset {args.name!r}; have {', '.join(preset_names())}")
    sys.stdout.write(serialize(load_scenario(args.name)))
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="robinfsi", description="Partitioned FSI experiments with Robin coupling.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def scenario_args(p):
        p.add_argument("--preset", help="preset name (see `robinfsi presets`)")
        p.add_argument("--config", help="INI config file or a run manifest.json")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a setting; repeatable; wins over --config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seedless", action="store_true", help="fail if anything draws random numbers")

    p = sub.add_parser("run", help="run one scenario")
    scenario_args(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run a parameter grid")
    scenario_args(p)
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2,...")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("analyze", help="metrics of a series.csv")
    p.add_argument("csv")
    p.add_argument("--channel", default="ux_A")
    p.add_argument("--reference", help="channel the phase lag is measured against")
    p.add_argument("--period", type=float)
    p.add_argument("--causal", action="store_true", help="search lags in [0, period) instead of +-period/2")
    p.add_argument("--band", type=float, default=0.02)
    p.add_argument("--final-value", type=float)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("presets", help="list presets or dump one as a config file")
    p.add_argument("name", nargs="?")
    p.set_defaults(func=_cmd_presets)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidArgument as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FsiError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
