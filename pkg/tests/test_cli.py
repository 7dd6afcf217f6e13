"""Command-line behavior: exit codes, artifacts, and the pipeline end to end.

A micro corpus (one utterance per emotion) and one- or two-step training
runs keep this fast while still driving every command for real.
"""

import json
import os

import numpy as np
import pytest

import padtts.cli as cli
import padtts.data as datamod
import padtts.dsp as dsp
import padtts.style as stylemod


@pytest.fixture(scope="module")
def pad_table_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("tables") / "pad_demo.json"
    rng = np.random.default_rng(3)
    table = rng.uniform(-0.9, 0.9, (3, 7))
    table[:, stylemod.LABELS.index("neutral")] = 0.0
    stylemod.save_pad_table(path, table)
    return str(path)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, pad_table_path):
    """gen-data + all three training stages, shared across the module."""
    root = tmp_path_factory.mktemp("work")
    data_dir = root / "corpus"
    run_dir = root / "run"
    assert cli.main(["gen-data", "--out", str(data_dir), "--pad-table",
                     pad_table_path, "--per-emotion", "1", "--seed", "9"]) == 0
    manifest = str(data_dir / "manifest.jsonl")
    base_args = ["train", "--data", manifest, "--out", str(run_dir),
                 "--seed", "1", "--steps", "2", "--batch-size", "4"]
    assert cli.main(base_args + ["--stage", "base", "--pad-table",
                                 pad_table_path, "--preset", "SUM-4"]) == 0
    assert cli.main(base_args + ["--stage", "tune-w2"]) == 0
    assert cli.main(base_args + ["--stage", "adjust-pad"]) == 0
    return {"root": root, "manifest": manifest, "run": run_dir,
            "table": pad_table_path}


class TestGenData:
    def test_writes_manifest_and_wavs(self, workdir):
        utts = datamod.load_manifest(workdir["manifest"])
        assert len(utts) == 7
        assert all(os.path.exists(u.wav_path) for u in utts)

    def test_missing_table_file_is_config_error(self, tmp_path, capsys):
        rc = cli.main(["gen-data", "--out", str(tmp_path / "x"),
                       "--pad-table", str(tmp_path / "absent.json")])
        assert rc == 2
        assert "configuration error" in capsys.readouterr().err


class TestTrain:
    def test_checkpoints_and_logs_exist(self, workdir):
        run = workdir["run"]
        for stage in ("base", "tune_w2", "adjust_pad"):
            assert (run / f"{stage}.zip").exists()
            log = run / f"train_{stage}.jsonl"
            records = [json.loads(line) for line in open(log)]
            assert len(records) == 2
            assert all(set(r) == {"step", "stage", "loss"} for r in records)

    def test_stage_order_enforced(self, workdir, tmp_path, capsys):
        rc = cli.main(["train", "--stage", "tune-w2", "--data",
                       workdir["manifest"], "--out", str(tmp_path / "fresh")])
        assert rc == 2
        err = capsys.readouterr().err
        assert "base" in err and "tune-w2" in err

    def test_base_without_table_is_config_error(self, workdir, tmp_path, capsys):
        rc = cli.main(["train", "--stage", "base", "--data", workdir["manifest"],
                       "--out", str(tmp_path / "fresh2"), "--steps", "1"])
        assert rc == 2
        assert "--pad-table" in capsys.readouterr().err

    def test_config_file_supplies_step_counts(self, workdir, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(
            {"train": {"steps": {"base": 1, "tune_w2": 1, "adjust_pad": 1},
                       "batch_size": 4}}))
        out = tmp_path / "run"
        rc = cli.main(["train", "--stage", "base", "--data", workdir["manifest"],
                       "--out", str(out), "--pad-table", workdir["table"],
                       "--config", str(cfg_path), "--seed", "0"])
        assert rc == 0
        records = open(out / "train_base.jsonl").read().splitlines()
        assert len(records) == 1

    def test_config_env_var_with_bad_json(self, workdir, tmp_path, capsys,
                                          monkeypatch):
        bad = tmp_path / "broken.json"
        bad.write_text("{nope")
        monkeypatch.setenv("PADTTS_CONFIG", str(bad))
        rc = cli.main(["train", "--stage", "base", "--data", workdir["manifest"],
                       "--out", str(tmp_path / "r"), "--pad-table",
                       workdir["table"], "--steps", "1"])
        assert rc == 2

    def test_unknown_config_section_rejected(self, workdir, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"optimizer": {"lr": 1}}))
        rc = cli.main(["train", "--stage", "base", "--data", workdir["manifest"],
                       "--out", str(tmp_path / "r"), "--pad-table",
                       workdir["table"], "--config", str(cfg_path)])
        assert rc == 2


class TestSynth:
    def test_writes_wav_and_spectrograms(self, workdir, tmp_path):
        rc = cli.main(["synth", "--model", str(workdir["run"] / "base.zip"),
                       "--text", "abc", "--pad", "0.5,0.2,-0.1",
                       "--out", str(tmp_path), "--max-steps", "6"])
        assert rc == 0
        wav = dsp.decode_wav(open(tmp_path / "synth.wav", "rb").read())
        assert wav.sample_rate == dsp.SAMPLE_RATE
        mel, kind = dsp.load_spectrogram(tmp_path / "synth.mel.spec")
        assert kind == "mel"
        assert mel.shape[1] == 80

    def test_zero_pad_equals_no_style_flag(self, workdir, tmp_path):
        model = str(workdir["run"] / "base.zip")
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["synth", "--model", model, "--text", "ab",
                         "--pad", "0,0,0", "--out", str(a), "--max-steps", "5"]) == 0
        assert cli.main(["synth", "--model", model, "--text", "ab",
                         "--out", str(b), "--max-steps", "5"]) == 0
        assert (a / "synth.wav").read_bytes() == (b / "synth.wav").read_bytes()

    def test_pad_and_emotion_together_is_usage_error(self, workdir, tmp_path, capsys):
        rc = cli.main(["synth", "--model", str(workdir["run"] / "base.zip"),
                       "--text", "ab", "--pad", "0,0,0", "--emotion", "happy",
                       "--out", str(tmp_path)])
        assert rc == 1
        assert "mutually exclusive" in capsys.readouterr().err

    def test_out_of_range_pad_is_config_error(self, workdir, tmp_path):
        rc = cli.main(["synth", "--model", str(workdir["run"] / "base.zip"),
                       "--text", "ab", "--pad", "2,0,0", "--out", str(tmp_path)])
        assert rc == 2

    def test_malformed_pad_is_usage_error(self, workdir, tmp_path):
        base = ["synth", "--model", str(workdir["run"] / "base.zip"),
                "--text", "ab", "--out", str(tmp_path)]
        assert cli.main(base + ["--pad", "0,0"]) == 1
        assert cli.main(base + ["--pad", "a,b,c"]) == 1

    def test_missing_checkpoint_is_config_error(self, tmp_path):
        rc = cli.main(["synth", "--model", str(tmp_path / "none.zip"),
                       "--text", "ab", "--out", str(tmp_path)])
        assert rc == 2


class TestEval:
    def test_report_written(self, workdir, tmp_path):
        rc = cli.main(["eval", "--model", f"m={workdir['run'] / 'base.zip'}",
                       "--data", workdir["manifest"], "--out", str(tmp_path),
                       "--modes", "teacher-forced"])
        assert rc == 0
        report = json.load(open(tmp_path / "report.json"))
        assert len(report["rows"]) == 1
        assert report["rows"][0]["mode"] == "teacher_forced"
        assert report["rows"][0]["n"] == 7
        assert (tmp_path / "report.txt").exists()

    def test_empty_manifest_is_config_error(self, tmp_path, workdir, capsys):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        rc = cli.main(["eval", "--model", f"m={workdir['run'] / 'base.zip'}",
                       "--data", str(empty), "--out", str(tmp_path)])
        assert rc == 2

    def test_bad_model_spec_is_usage_error(self, workdir, tmp_path):
        rc = cli.main(["eval", "--model", "just_a_name", "--data",
                       workdir["manifest"], "--out", str(tmp_path)])
        assert rc == 1

    def test_unknown_mode_is_usage_error(self, workdir, tmp_path):
        rc = cli.main(["eval", "--model", f"m={workdir['run'] / 'base.zip'}",
                       "--data", workdir["manifest"], "--out", str(tmp_path),
                       "--modes", "greedy"])
        assert rc == 1


class TestExportPad:
    def test_exports_table_and_report(self, workdir, tmp_path):
        rc = cli.main(["export-pad", "--model",
                       str(workdir["run"] / "adjust_pad.zip"), "--out", str(tmp_path)])
        assert rc == 0
        table = stylemod.load_pad_table(tmp_path / "pad_adjusted.json")
        assert table.shape == (3, 7)
        report = json.load(open(tmp_path / "sign_report.json"))
        assert 0.0 <= report["fraction"] <= 1.0

    def test_wrong_stage_is_config_error(self, workdir, tmp_path, capsys):
        rc = cli.main(["export-pad", "--model", str(workdir["run"] / "base.zip"),
                       "--out", str(tmp_path)])
        assert rc == 2
        assert "stage" in capsys.readouterr().err


class TestUsage:
    def test_no_command(self, capsys):
        assert cli.main([]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_unknown_command(self):
        assert cli.main(["frobnicate"]) == 1

    def test_missing_required_flag(self):
        assert cli.main(["gen-data", "--out", "x"]) == 1
