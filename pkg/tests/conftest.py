import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def unit_segment_interface():
    """A single straight edge of length 1 taken from a 1x1 element."""
    from robinfsi.geometry import build_structured_quad_mesh, extract_interface

    mesh = build_structured_quad_mesh(1, 1)
    return mesh, extract_interface(mesh, "bottom")


@pytest.fixture
def strip():
    """Clamped 2x6 strip with its three wetted sides."""
    from robinfsi.geometry import build_structured_quad_mesh, extract_interface
    from robinfsi.solid import NeoHookeanMaterial, SolidSystem

    mesh = build_structured_quad_mesh(2, 6, (0.0, 0.0), (0.1, 0.6))
    system = SolidSystem.clamped(mesh, NeoHookeanMaterial(1000.0, 0.3, 1.0))
    return system, extract_interface(mesh, ["right", "top", "left"])


def rel_diff(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line; all lines are repeated in the terminal summary."""
    def record(label, ok, detail=""):
        line = f"{label}: {'PASS' if ok else 'FAIL'}" + (f"  ({detail})" if detail else "")
        _VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)

