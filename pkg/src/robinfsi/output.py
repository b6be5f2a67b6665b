"""Bit-stable CSV series, run manifests and legacy VTK field snapshots."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .analysis import TimeSeries
from .errors import ConfigError


def format_float(x) -> str:
    return format(float(x), ".17g")


def write_series_csv(path, t, channels: dict):
    """Header ``t,<channel>...``; every value with 17 significant digits."""
    names = list(channels)
    cols = [np.asarray(t, dtype=float)] + [np.asarray(channels[k], dtype=float) for k in names]
    lines = [",".join(["t"] + names)]
    for row in zip(*cols):
        lines.append(",".join(format_float(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def read_series_csv(path) -> tuple[np.ndarray, dict]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "t":
        raise ConfigError(f"{path}: first column must be 't'")
    header, body = rows[0], rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    except ValueError as exc:
        raise ConfigError(f"{path}: malformed row ({exc})") from None
    return data[:, 0], {name: data[:, i] for i, name in enumerate(header) if i > 0}


def load_series(path, channel) -> TimeSeries:
    t, ch = read_series_csv(path)
    if channel not in ch:
        raise ConfigError(f"{path}: no channel {channel!r} (have {', '.join(ch)})")
    return TimeSeries(t, ch[channel], channel)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    scenario: str
    parameters: dict
    code_version: str
    status: str = "ok"  # ok | diverged | solver-error
    wall_time: float = 0.0
    outputs: dict = field(default_factory=dict)  # relative file name -> sha256
    error: dict | None = None
    seedless: bool = False

    def add_output(self, root: Path, path: Path):
        self.outputs[str(Path(path).relative_to(root))] = sha256_file(path)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


# ------------------------------------------------------------ VTK snapshots

def _vtk_floats(a):
    return "\n".join(" ".join(format_float(v) for v in row) for row in np.atleast_2d(a))


def write_fluid_vtk(path, grid, state):
    """Velocity and pressure on the fixed fluid grid (STRUCTURED_POINTS)."""
    nx, ny = grid.nx + 1, grid.ny + 1
    v3 = np.column_stack([state.v, np.zeros(len(state.p))])
    text = [
        "# vtk DataFile Version 3.0", f"fluid t={format_float(state.t)}", "ASCII", "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} 1",
        f"ORIGIN {format_float(grid.origin[0])} {format_float(grid.origin[1])} 0",
        f"SPACING {format_float(grid.h[0])} {format_float(grid.h[1])} 1",
        f"POINT_DATA {nx * ny}", "VECTORS velocity double", _vtk_floats(v3),
        "SCALARS pressure double 1", "LOOKUP_TABLE default", _vtk_floats(state.p[:, None]),
    ]
    Path(path).write_text("\n".join(text) + "\n", newline="\n")


def write_solid_vtk(path, mesh, state):
    """Deformed solid mesh with its displacement field (STRUCTURED_GRID)."""
    nx, ny = mesh.shape[0] + 1, mesh.shape[1] + 1
    d = np.asarray(state.d).reshape(-1, 2)
    x = np.column_stack([mesh.nodes + d, np.zeros(len(d))])
    d3 = np.column_stack([d, np.zeros(len(d))])
    text = [
        "# vtk DataFile Version 3.0", f"solid t={format_float(state.t)}", "ASCII", "DATASET STRUCTURED_GRID",
        f"DIMENSIONS {nx} {ny} 1", f"POINTS {nx * ny} double", _vtk_floats(x),
        f"POINT_DATA {nx * ny}", "VECTORS displacement double", _vtk_floats(d3),
    ]
    Path(path).write_text("\n".join(text) + "\n", newline="\n")
