import csv
import json
import random

import numpy as np
import pytest

from robinfsi.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, EXIT_SOLVER, forbid_rng, main
from robinfsi.output import RunManifest, sha256_file, write_series_csv
from robinfsi.scenarios import load_scenario, parse_config

SHORT_PROBE = ["--preset", "surrogate-probe", "--set", "run.t_end=0.05"]


def test_run_writes_series_and_manifest(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--preset", "sdof", "--out", str(out), "--set", "gamma_n1=10"]) == EXIT_OK
    assert "ok" in capsys.readouterr().out
    m = RunManifest.from_json((out / "manifest.json").read_text())
    assert m.status == "ok" and m.parameters["coupling.gamma_n1"] == 10.0
    assert m.outputs == {"series.csv": sha256_file(out / "series.csv")}
    with open(out / "series.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["t", "d"]
    assert len(rows) == 1 + 1001


def test_rerun_from_manifest_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", *SHORT_PROBE, "--set", "gamma_n1=40", "--out", str(a)]) == EXIT_OK
    assert main(["run", "--config", str(a / "manifest.json"), "--out", str(b)]) == EXIT_OK
    assert (a / "series.csv").read_bytes() == (b / "series.csv").read_bytes()


def test_config_file_run(tmp_path):
    cfg = tmp_path / "c.ini"
    assert main(["presets", "sdof"]) == EXIT_OK
    cfg.write_text("[scenario]\nname = sdof\n[run]\nt_end = 1\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK


def test_exit_code_for_divergence(tmp_path):
    out = tmp_path / "d"
    code = main(["run", "--preset", "surrogate-probe", "--set", "beta=1", "--set", "k_max=20",
                 "--set", "run.t_end=0.1", "--out", str(out)])
    assert code == EXIT_DIVERGED
    err = json.loads((out / "error.json").read_text())
    assert err["step"] == 1 and err["time"] == pytest.approx(0.005)
    assert json.loads((out / "manifest.json").read_text())["status"] == "diverged"
    assert not (out / "series.csv").exists()


def test_exit_code_for_solver_failure(tmp_path):
    code = main(["run", *SHORT_PROBE, "--set", "solid.newton_max=1", "--set", "solid.newton_tol=1e-30",
                 "--out", str(tmp_path / "s")])
    assert code == EXIT_SOLVER


@pytest.mark.parametrize("argv", [
    ["run", "--preset", "sdof", "--set", "coupling.gama_n1=1"],
    ["run", "--preset", "sdof", "--set", "beta=2"],
    ["run", "--preset", "nope"],
    ["run", "--out", "x"],
    ["sweep", "--preset", "sdof"],
    ["sweep", "--preset", "sdof", "--grid", "gamma_n1"],
    ["sweep", "--preset", "sdof", "--grid", "gamma_n1=1", "--workers", "0"],
])
def test_exit_code_for_bad_configuration(tmp_path, argv, capsys):
    if "--out" not in argv:
        argv = argv + ["--out", str(tmp_path / "o")]
    assert main(argv) == EXIT_CONFIG
    assert capsys.readouterr().err


def test_unknown_preset_dump_is_a_config_error(capsys):
    assert main(["presets", "nope"]) == EXIT_CONFIG


def test_unknown_key_message_names_the_suggestion(tmp_path, capsys):
    main(["run", "--preset", "sdof", "--set", "coupling.gama_n1=1", "--out", str(tmp_path)])
    assert "coupling.gamma_n1" in capsys.readouterr().err


def test_stale_error_file_is_removed_by_a_successful_rerun(tmp_path):
    out = tmp_path / "r"
    main(["run", *SHORT_PROBE, "--set", "solid.newton_max=1", "--set", "solid.newton_tol=1e-30", "--out", str(out)])
    assert (out / "error.json").exists()
    assert main(["run", *SHORT_PROBE, "--out", str(out)]) == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "series.csv"]


def test_snapshots_are_listed_in_the_manifest(tmp_path):
    out = tmp_path / "snap"
    assert main(["run", *SHORT_PROBE, "--set", "output.snapshot_every=5", "--out", str(out)]) == EXIT_OK
    m = RunManifest.from_json((out / "manifest.json").read_text())
    snaps = sorted(k for k in m.outputs if k.startswith("snapshots"))
    assert snaps == [f"snapshots/solid_{i:06d}.vtk" for i in (0, 5, 10)]
    assert (out / snaps[0]).read_text().startswith("# vtk DataFile")


def test_sweep_summary_keeps_grid_order_with_workers(tmp_path):
    out1, out2 = tmp_path / "w1", tmp_path / "w2"
    grid = ["--grid", "gamma_n1=0,10,100", "--grid", "treatment=explicit,implicit"]
    assert main(["sweep", "--preset", "sdof", "--set", "run.t_end=5", *grid, "--out", str(out1)]) == EXIT_OK
    assert main(["sweep", "--preset", "sdof", "--set", "run.t_end=5", *grid, "--workers", "2",
                 "--out", str(out2)]) == EXIT_OK
    text = (out1 / "summary.csv").read_text()
    assert text == (out2 / "summary.csv").read_text()
    rows = list(csv.DictReader(text.splitlines()))
    assert [r["cell"] for r in rows] == [f"cell_{i:03d}" for i in range(6)]
    assert [(r["gamma_n1"], r["treatment"]) for r in rows] == [
        ("0", "explicit"), ("0", "implicit"), ("10", "explicit"), ("10", "implicit"),
        ("100", "explicit"), ("100", "implicit")]
    assert all(r["status"] == "ok" and r["diverged"] == "0" for r in rows)
    implicit = [float(r["settling_time"]) for r in rows if r["treatment"] == "implicit"]
    assert implicit == sorted(implicit) and len(set(implicit)) == 3


def test_sweep_records_failing_cells_and_continues(tmp_path):
    out = tmp_path / "sw"
    code = main(["sweep", *SHORT_PROBE, "--set", "k_max=20", "--grid", "beta=0.05,1", "--out", str(out)])
    assert code == EXIT_OK
    rows = list(csv.DictReader((out / "summary.csv").read_text().splitlines()))
    assert [r["status"] for r in rows] == ["ok", "diverged"]
    assert rows[1]["settling_time"] == "nan"


def test_analyze_reports_settling_and_phase_lag(tmp_path, capsys):
    t = np.arange(0, 20.0001, 0.01)
    path = tmp_path / "s.csv"
    write_series_csv(path, t, {"ref": np.sin(2 * np.pi * t), "u": np.sin(2 * np.pi * (t - 0.1))})
    assert main(["analyze", str(path), "--channel", "u", "--reference", "ref", "--period", "1", "--causal"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["phase_lag"] == pytest.approx(0.1, abs=1e-3)
    assert result["dominant_frequency"] == pytest.approx(1.0, rel=0.05)
    assert main(["analyze", str(path), "--channel", "missing"]) == EXIT_CONFIG
    assert main(["analyze", str(path), "--channel", "u", "--reference", "ref"]) == EXIT_CONFIG
    bad = tmp_path / "bad.csv"
    bad.write_text("t,u\n0,abc\n")
    assert main(["analyze", str(bad), "--channel", "u"]) == EXIT_CONFIG


def test_presets_listing_and_dump(capsys):
    assert main(["presets"]) == EXIT_OK
    assert capsys.readouterr().out.split() == ["sdof", "surrogate-probe", "thick-beam", "thick-beam-mini",
                                               "thin-valve"]
    assert main(["presets", "thin-valve"]) == EXIT_OK
    assert parse_config(capsys.readouterr().out) == load_scenario("thin-valve")


def test_seedless_guard_blocks_random_draws():
    with forbid_rng():
        with pytest.raises(RuntimeError):
            np.random.default_rng(0)
        with pytest.raises(RuntimeError):
            random.random()
    np.random.default_rng(0)
    random.random()


def test_seedless_run_succeeds_and_is_recorded(tmp_path):
    out = tmp_path / "sl"
    assert main(["run", *SHORT_PROBE, "--seedless", "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "manifest.json").read_text())["seedless"] is True
