from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cellwatch.cli import build_parser, main
from cellwatch.data import load_csv, write_csv
from cellwatch.detector import read_events

from .conftest import make_dataset

SPEC = {"type": "isc", "theta": 0.8, "start_t": 3600, "duration": 3600, "target_cells": [1]}


def snapshot(folder: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(folder.iterdir()) if p.is_file()}


def pipeline(folder: Path) -> None:
    """Run simulate -> train -> inject -> detect -> evaluate inside ``folder``."""
    f = lambda name: str(folder / name)  # noqa: E731
    (folder / "spec.json").write_text(json.dumps(SPEC))
    assert main(["simulate", "--out", f("nom.csv"), "--cells", "4", "--duration", "7200", "--seed", "1"]) == 0
    assert main(["train", "--data", f("nom.csv"), "--out", f("m.json")]) == 0
    assert main(["detect", "--model", f("m.json"), "--data", f("nom.csv"), "--out", f("nominal.jsonl")]) == 0
    assert main(["inject", "--data", f("nom.csv"), "--params", f("nom.params.json"),
                 "--spec", f("spec.json"), "--out", f("bad.csv")]) == 0
    assert main(["detect", "--model", f("m.json"), "--data", f("bad.csv"), "--out", f("bad.jsonl")]) == 0
    assert main(["evaluate", "--events", f("bad.jsonl"), "--truth", f("bad.truth.json"),
                 "--out", f("report.json")]) == 0


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    folder = tmp_path_factory.mktemp("pipeline")
    pipeline(folder)
    return folder


class TestPipeline:
    def test_artifacts_written(self, run_dir):
        names = set(snapshot(run_dir))
        for name in ("nom.csv", "nom.params.json", "m.json", "nominal.jsonl", "nominal.meta.json",
                     "bad.csv", "bad.truth.json", "bad.jsonl", "report.json"):
            assert name in names

    def test_detect_on_training_data_is_quiet(self, run_dir):
        meta = json.loads((run_dir / "nominal.meta.json").read_text())
        assert len(meta["flagged_pct"]) == 4
        assert all(rate <= 5.0 for rate in meta["flagged_pct"].values())

    def test_injected_short_detected(self, run_dir):
        report = json.loads((run_dir / "report.json").read_text())["report"]
        assert report["dt"] is not None and report["dt"] > 0
        assert report["fnr"] < 50.0

    def test_events_cover_every_model_and_sample(self, run_dir):
        events = read_events(run_dir / "bad.jsonl")
        assert len(events) == 4 * 7200

    def test_artifacts_carry_provenance(self, run_dir):
        for name in ("nom.params.json", "nominal.meta.json", "bad.truth.json", "report.json"):
            prov = json.loads((run_dir / name).read_text())["provenance"]
            assert set(prov) >= {"config", "config_hash", "seed", "command"}
        assert "config_hash" in (run_dir / "m.json").read_text()

    def test_rerun_relative_paths_identical(self, tmp_path, monkeypatch):
        out = []
        for sub in ("a", "b"):
            (tmp_path / sub).mkdir()
            monkeypatch.chdir(tmp_path / sub)
            pipeline(Path("."))
            out.append(snapshot(Path(".")))
        assert out[0] == out[1]

    def test_inputs_not_mutated(self, run_dir):
        before = snapshot(run_dir)
        f = lambda name: str(run_dir / name)  # noqa: E731
        assert main(["detect", "--model", f("m.json"), "--data", f("bad.csv"), "--out", f("tmp.jsonl")]) == 0
        assert main(["inject", "--data", f("nom.csv"), "--spec", f("spec.json"), "--out", f("tmp.csv")]) == 0
        after = snapshot(run_dir)
        for name, blob in before.items():
            if not name.startswith("tmp"):
                assert after[name] == blob, name

    def test_inject_without_params_fits_targets(self, run_dir, tmp_path):
        out = tmp_path / "fit.csv"
        assert main(["inject", "--data", str(run_dir / "nom.csv"), "--spec", str(run_dir / "spec.json"),
                     "--out", str(out)]) == 0
        nom, bad = load_csv(run_dir / "nom.csv"), load_csv(out)
        # cell 1 is shorted; the untouched cells keep their measured values
        assert (bad.voltages[:, [0, 2, 3]] == nom.voltages[:, [0, 2, 3]]).all()
        assert bad.voltages[-1, 1] < nom.voltages[-1, 1]

    def test_evaluate_direct_method(self, run_dir, capsys):
        f = lambda name: str(run_dir / name)  # noqa: E731
        assert main(["evaluate", "--events", f("bad.jsonl"), "--truth", f("bad.truth.json"),
                     "--method", "direct"]) == 0
        assert json.loads(capsys.readouterr().out)["method"] == "direct"


class TestSweepCommand:
    def test_small_sweep_writes_table(self, tmp_path):
        out = tmp_path / "table.csv"
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 3}))
        argv = ["sweep", "--anomaly", "isc", "--groups", "1", "--theta", "0.8", "--out", str(out),
                "--config", str(cfg)]
        assert main(argv) == 0
        header = out.read_text().splitlines()[0]
        assert "theta" in header and "dt" in header
        summary = json.loads((tmp_path / "table.json").read_text())
        assert summary["seed"] == 3
        assert "config_hash" in summary


class TestExitCodes:
    def test_insufficient_training_data(self, tmp_path, capsys):
        path = tmp_path / "short.csv"
        write_csv(make_dataset(k=10, n=11), path)
        assert main(["train", "--data", str(path), "--out", str(tmp_path / "m.json")]) == 1
        assert "training samples" in capsys.readouterr().err
        assert not (tmp_path / "m.json").exists()

    def test_unknown_flag(self, capsys):
        assert main(["train", "--bogus"]) == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_command(self):
        assert main(["frobnicate"]) == 1

    def test_missing_file(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path / "m.json")]) == 1

    def test_schema_mismatch(self, run_dir, tmp_path, capsys):
        other = tmp_path / "eleven.csv"
        write_csv(make_dataset(k=50, n=11), other)
        assert main(["detect", "--model", str(run_dir / "m.json"), "--data", str(other),
                     "--out", str(tmp_path / "e.jsonl")]) == 1
        assert "cells" in capsys.readouterr().err

    def test_malformed_csv(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("t,current\n0,1\n")
        assert main(["train", "--data", str(bad), "--out", str(tmp_path / "m.json")]) == 1

    def test_malformed_spec(self, run_dir, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"type": "isc"}))
        assert main(["inject", "--data", str(run_dir / "nom.csv"), "--spec", str(spec),
                     "--out", str(tmp_path / "o.csv")]) == 1

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        assert main(["simulate", "--out", str(tmp_path / "o.csv"), "--duration", "10",
                     "--config", str(cfg)]) == 1

    def test_invalid_threshold(self, run_dir, tmp_path):
        assert main(["train", "--data", str(run_dir / "nom.csv"), "--out", str(tmp_path / "m.json"),
                     "--variance-threshold", "1.5"]) == 1

    def test_runtime_failure_exit_two(self, tmp_path):
        # a constant-current trace cannot identify the target cell
        data = make_dataset(k=200, n=3, current=np.full(200, 10.0))
        path = tmp_path / "flat.csv"
        write_csv(data, path)
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({**SPEC, "start_t": 50, "duration": 100}))
        assert main(["inject", "--data", str(path), "--spec", str(spec), "--out", str(tmp_path / "o.csv")]) == 2


class TestHelp:
    @pytest.mark.parametrize("command", ["simulate", "inject", "train", "detect", "evaluate", "sweep"])
    def test_subcommand_help(self, command, capsys):
        with pytest.raises(SystemExit) as exc:
            main([command, "--help"])
        assert exc.value.code == 0
        assert "usage" in capsys.readouterr().out

    def test_help_lists_defaults(self):
        text = build_parser()._subparsers._group_actions[0].choices["train"].format_help()
        assert "default 0.9" in text and "default 5" in text and "mHz" in text

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "cellwatch.cli", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "simulate" in proc.stdout
