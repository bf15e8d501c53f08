import json

import pytest

from flowmigrate.cli import main


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture()
def quick_scenario(tmp_path):
    """A fast file-based scenario for CLI round trips."""
    doc = {
        "name": "cli-quick",
        "dag": "linear",
        "strategy": "CCR",
        "vmsBefore": [{"vmId": "a1", "slotCount": 3}, {"vmId": "a2", "slotCount": 3}],
        "vmsAfter": [{"vmId": "b1", "slotCount": 5}],
        "runDuration": 120,
        "migrationTriggerAt": 30,
        "workerStartupMinMs": 1500,
        "workerStartupMaxMs": 2500,
        "randomSeed": 11,
    }
    path = tmp_path / "quick.json"
    path.write_text(json.dumps(doc))
    return path


class TestRun:
    def test_writes_timeline_and_report(self, quick_scenario, tmp_path, capsys):
        out = tmp_path / "out"
        assert run_cli("run", str(quick_scenario), "--out", str(out)) == 0
        assert (out / "timeline.csv").exists()
        report = json.loads((out / "report.json").read_text())
        assert report["strategy"] == "CCR"
        assert report["replayedCount"] == 0
        assert "wrote" in capsys.readouterr().out

    def test_rerun_same_seed_byte_identical(self, quick_scenario, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        run_cli("run", str(quick_scenario), "--out", str(out1))
        run_cli("run", str(quick_scenario), "--out", str(out2))
        assert (out1 / "timeline.csv").read_bytes() == (out2 / "timeline.csv").read_bytes()

    def test_output_dir_append_only(self, quick_scenario, tmp_path):
        out = tmp_path / "out"
        assert run_cli("run", str(quick_scenario), "--out", str(out)) == 0
        assert run_cli("run", str(quick_scenario), "--out", str(out)) == 2

    def test_missing_scenario_exits_2(self, tmp_path, capsys):
        assert run_cli("run", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")) == 2
        assert "not found" in capsys.readouterr().err

    def test_invalid_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"dag": "linear", "strategy": "XYZ",
                                   "vmsBefore": [], "vmsAfter": []}))
        assert run_cli("run", str(bad), "--out", str(tmp_path / "o")) == 2

    def test_strategy_and_seed_overrides(self, quick_scenario, tmp_path):
        out = tmp_path / "out"
        run_cli("run", str(quick_scenario), "--strategy", "dcr", "--seed", "99",
                "--out", str(out))
        report = json.loads((out / "report.json").read_text())
        assert report["strategy"] == "DCR"
        assert report["seed"] == 99

    def test_ack_timeout_flag_changes_behavior(self, tmp_path):
        doc = {
            "name": "dsm-quick", "dag": "linear", "strategy": "DSM",
            "vmsBefore": [{"vmId": "a1", "slotCount": 3}, {"vmId": "a2", "slotCount": 3}],
            "vmsAfter": [{"vmId": "b1", "slotCount": 5}],
            "runDuration": 150, "migrationTriggerAt": 30,
            "workerStartupMinMs": 6000, "workerStartupMaxMs": 7000,
            "randomSeed": 3,
        }
        path = tmp_path / "dsm.json"
        path.write_text(json.dumps(doc))
        for tag, timeout in (("t5", "5"), ("t30", "30")):
            assert run_cli("run", str(path), "--ack-timeout", timeout,
                           "--out", str(tmp_path / tag)) == 0
        fast = json.loads((tmp_path / "t5" / "report.json").read_text())
        slow = json.loads((tmp_path / "t30" / "report.json").read_text())
        # A shorter timeout replays sooner, restoring output earlier.
        assert fast["restoreDurationMs"] < slow["restoreDurationMs"]

    def test_zero_rebalance_duration_passthrough(self, quick_scenario, tmp_path):
        out = tmp_path / "zero-reb"
        assert run_cli("run", str(quick_scenario), "--rebalance-duration", "0",
                       "--out", str(out)) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["rebalanceDurationMs"] == 0

    def test_bundled_name_resolution(self, tmp_path):
        # The bundled set is addressable by bare name and by scenarios/ path.
        out = tmp_path / "by-path"
        code = run_cli("run", "scenarios/linear_scalein.json", "--strategy", "ccr",
                       "--out", str(out))
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["scenario"] == "linear_scalein"


class TestCompare:
    def test_table_and_assertions(self, quick_scenario, capsys):
        assert run_cli("compare", str(quick_scenario)) == 0
        out = capsys.readouterr().out
        assert "DSM" in out and "DCR" in out and "CCR" in out
        assert out.count("[PASS]") == 4
        assert "restore CCR < DCR < DSM" in out

    def test_compare_writes_per_strategy_outputs(self, quick_scenario, tmp_path):
        out = tmp_path / "cmp"
        assert run_cli("compare", str(quick_scenario), "--out", str(out)) == 0
        for strategy in ("dsm", "dcr", "ccr"):
            assert (out / strategy / "report.json").exists()


class TestScenarios:
    def test_lists_bundled(self, capsys):
        assert run_cli("scenarios") == 0
        out = capsys.readouterr().out.split()
        assert "grid_scalein" in out and len(out) == 11
