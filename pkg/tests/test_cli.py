"""Command-line front end through click's test runner."""
import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from app.cli import cli, run_sweep
from app.db import results
from app.sim import library


@pytest.fixture
def runner():
    return CliRunner()


def _short_run_args(tmp_path):
    return ["run", "case4_lfc", "--override", "duration=0.3", "--override", "events=[]", "--out", str(tmp_path / "out")]


def test_validate_library_case(runner):
    result = runner.invoke(cli, ["validate", "case4_lfc"])
    assert result.exit_code == 0, result.output
    assert json.loads(result.output.strip().splitlines()[-1])["valid"] is True


def test_validate_bad_scenario_exits_2_with_pointer(runner, tmp_path):
    bad = tmp_path / "bad_scenario.json"
    bad.write_text(json.dumps({
        "name": "bad",
        "events": [{"time": 1.0, "kind": "SwitchOpen", "target": "sw_nowhere"}],
    }))
    result = runner.invoke(cli, ["validate", str(bad)])
    assert result.exit_code == 2
    assert "events[0].target" in result.output


def test_unknown_override_exits_2(runner):
    result = runner.invoke(cli, ["validate", "case4_lfc", "--override", "gains.gamma=3"])
    assert result.exit_code == 2


def test_malformed_override_exits_2(runner):
    result = runner.invoke(cli, ["validate", "case4_lfc", "--override", "gains.alpha"])
    assert result.exit_code == 2


def test_run_writes_artifacts(runner, tmp_path):
    result = runner.invoke(cli, _short_run_args(tmp_path))
    assert result.exit_code == 0, result.output
    out = tmp_path / "out"
    for name in (results.TIMESERIES_FILE, results.SUMMARY_FILE, results.SUMMARY_TABLE_FILE, results.MANIFEST_FILE):
        assert (out / name).is_file()
    frame = pd.read_csv(out / results.TIMESERIES_FILE)
    assert frame.columns[0] == "t_s"
    assert "f_1_Hz" in frame.columns
    manifest = json.loads((out / results.MANIFEST_FILE).read_text())
    assert manifest["scenario"]["duration"] == 0.3
    summary = json.loads((out / results.SUMMARY_FILE).read_text())
    assert summary["windows"][0]["label"] == "steady"


def test_run_uses_output_root_by_default(runner, tmp_path, monkeypatch):
    from app.core.config import get_settings

    monkeypatch.setenv("LFC_OUTPUT_ROOT", str(tmp_path / "root"))
    get_settings.cache_clear()
    result = runner.invoke(cli, ["run", "--scenario", "case4_lfc", "--override", "duration=0.2", "--override", "events=[]"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "root" / "case4_lfc" / results.MANIFEST_FILE).is_file()


def test_divergence_exits_3_with_partial_record(runner, tmp_path):
    scenario = tmp_path / "overload.json"
    scenario.write_text(json.dumps({
        "name": "overload",
        "duration": 0.5,
        "events": [
            {"time": 0.1, "kind": "SwitchOpen", "target": "sw_island"},
            {"time": 0.2, "kind": "LoadChange", "target": "ld_shed", "payload": {"p_kw": 1.0e6}},
        ],
    }))
    out = tmp_path / "out"
    result = runner.invoke(cli, ["run", str(scenario), "--out", str(out)])
    assert result.exit_code == 3
    error = json.loads((out / results.ERROR_FILE).read_text())
    assert error["error"] == "SolverDivergenceError"
    assert error["time"] == pytest.approx(0.2)
    partial = pd.read_csv(out / results.TIMESERIES_FILE)
    assert partial["t_s"].iloc[-1] < 0.2


def test_compare_rejects_different_event_scripts(runner, tmp_path):
    result = runner.invoke(cli, ["compare", "case4_lfc", "reference_350", "--out", str(tmp_path)])
    assert result.exit_code == 2
    assert "events" in result.output


def test_compare_single_case_gives_one_row(runner, tmp_path):
    result = runner.invoke(cli, ["compare", "case1_no_control", "--override", "duration=0.2",
                                 "--override", "events=[]", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    table = (tmp_path / "compare.txt").read_text().splitlines()
    assert len(table) == 2
    assert "undefined" not in table[0]


def test_sweep_rejects_unconnectable_link_counts(runner, tmp_path):
    result = runner.invoke(cli, ["sweep", "--links-min", "7", "--links-max", "9", "--out", str(tmp_path)])
    assert result.exit_code == 2


def test_sweep_rejects_zero_samples(runner, tmp_path):
    result = runner.invoke(cli, ["sweep", "--samples", "0", "--out", str(tmp_path)])
    assert result.exit_code == 2


def test_library_lists_cases(runner):
    result = runner.invoke(cli, ["library", "--list"])
    assert result.exit_code == 0
    for name in library.COMPARISON_CASES:
        assert name in result.output


@pytest.mark.slow
def test_sweep_is_sorted_and_deterministic():
    base = library.get_case("topology_sweep").model_copy(update={"duration": 4.0})
    frame = run_sweep(base, range(8, 10), samples=2, seed=0)
    assert list(zip(frame["links"], frame["seed"])) == [(8, 0), (8, 1), (9, 0), (9, 1)]
    again = run_sweep(base, range(8, 9), samples=1, seed=0)
    np.testing.assert_array_equal(again.iloc[0].to_numpy(dtype=float), frame.iloc[0].to_numpy(dtype=float))
    assert set(frame.columns) == {"links", "seed", "convergence_time_s", "mpsi_steady"}
