import json
import os

import numpy as np
import pytest

from lambdaunet import cli, synth, unet

GEN = ["--cases", "5", "--geometry", "4,16,16", "--extent", "1,2", "--radius", "2,4",
       "--seed", "1"]
NET = ["--levels", "2", "--base-channels", "4", "--k", "4", "--segment-slices", "4",
       "--batch-segments", "2", "--lr", "1e-3"]


@pytest.fixture
def data(tmp_path):
    out = tmp_path / "data"
    assert cli.main(["gen", "--out", str(out)] + GEN) == 0
    return out


def manifest(directory):
    return json.loads((directory / cli.RUN_MANIFEST).read_text())


def files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())
            if p.name != cli.RUN_MANIFEST}


def test_gen_writes_cases_and_manifest(data):
    names = sorted(os.listdir(data))
    assert len([n for n in names if n.endswith(".v25d")]) == 5
    assert "dataset.json" in names
    run = manifest(data)
    assert run["command"] == "gen" and run["seed"] == 1 and run["version"]
    assert run["started"] and run["finished"]
    assert len(run["artifacts"]["cases"]) == 5


def test_gen_rerun_identical(data, tmp_path):
    again = tmp_path / "again"
    assert cli.main(["gen", "--out", str(again)] + GEN) == 0
    assert files(again) == files(data)


def test_gen_zero_cases_usage_error(tmp_path, capsys):
    assert cli.main(["gen", "--out", str(tmp_path / "x"), "--cases", "0"]) == cli.EXIT_USAGE
    assert "cases" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(tmp_path):
    assert cli.main(["gen", "--out", str(tmp_path), "--bogus", "1"]) == cli.EXIT_USAGE
    assert cli.main(["gen", "--ou", str(tmp_path)]) == cli.EXIT_USAGE  # no abbreviations


def test_config_file_and_precedence(tmp_path):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"out": str(tmp_path / "d"), "cases": 4, "geometry": "4,16,16",
                               "extent": [1, 2], "seed": 3}))
    assert cli.main(["gen", "--config", str(cfg), "--seed", "9"]) == 0
    run = manifest(tmp_path / "d")
    assert run["seed"] == 9 and run["config"]["cases"] == 4


def test_config_file_unknown_key(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"nope": 1}))
    assert cli.main(["gen", "--out", str(tmp_path), "--config", str(cfg)]) == cli.EXIT_USAGE


def test_train_and_eval(data, tmp_path, capsys):
    out = tmp_path / "run"
    argv = ["train", "--data", str(data), "--out", str(out), "--epochs", "2",
            "--variant", "2d"] + NET
    assert cli.main(argv) == 0
    model = unet.load_model(out / "model")
    assert model.config.variant == "2d"
    assert len((out / "train_log.jsonl").read_text().splitlines()) == 2
    run = manifest(out)
    assert run["config"]["training"]["epochs"] == 2
    assert run["artifacts"]["checkpoint"] == str(out / "model")

    ev = tmp_path / "eval"
    assert cli.main(["eval", "--model", str(out / "model"), "--data", str(data),
                     "--out", str(ev)]) == 0
    table = (ev / "metrics.txt").read_text()
    assert table.splitlines()[0].split() == ["case", "DSC", "Recall", "Prec.", "F1"]
    report = json.loads((ev / "metrics.json").read_text())
    assert 0 <= report["summary"]["dsc"] <= 1 and report["split"] == "test"


def test_train_same_seed_same_bytes(data, tmp_path):
    for name in ("a", "b"):
        argv = ["train", "--data", str(data), "--out", str(tmp_path / name), "--epochs", "1",
                "--dtype", "float64"] + NET
        assert cli.main(argv) == 0
    assert files(tmp_path / "a" / "model") == files(tmp_path / "b" / "model")


def test_train_zero_epochs(data, tmp_path, caplog):
    out = tmp_path / "run"
    assert cli.main(["train", "--data", str(data), "--out", str(out), "--epochs", "0",
                     "--seed", "4"] + NET) == 0
    assert "initial" in caplog.text
    fresh = unet.build(unet.UNetConfig(levels=2, base_channels=4, k=4), seed=4)
    loaded = unet.load_model(out / "model")
    assert all(loaded.params[k].tobytes() == fresh.params[k].tobytes() for k in fresh.params)


def test_train_missing_dataset(tmp_path):
    assert cli.main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o"),
                     "--epochs", "1"]) == cli.EXIT_DATA


def test_train_empty_split(tmp_path):
    params = synth.GenParams(t=4, h=16, w=16, slice_extent=(1, 2))
    train, val, test = synth.make_dataset(5, params)
    synth.save_dataset((train, [], test), params, tmp_path / "d")
    assert cli.main(["train", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "o"),
                     "--epochs", "1"] + NET) == cli.EXIT_DATA


def test_eval_truth_injection_scores_one(data, tmp_path):
    model_dir = tmp_path / "m"
    unet.save_model(unet.build(unet.UNetConfig(levels=2, base_channels=4)), model_dir)
    ev = tmp_path / "ev"
    assert cli.main(["eval", "--model", str(model_dir), "--data", str(data), "--out", str(ev),
                     "--truth-as-prediction"]) == 0
    summary = json.loads((ev / "metrics.json").read_text())["summary"]
    assert summary == {"dsc": 1.0, "recall": 1.0, "precision": 1.0, "f1": 1.0}


def test_eval_missing_checkpoint(data, tmp_path):
    assert cli.main(["eval", "--model", str(tmp_path / "none"), "--data", str(data),
                     "--out", str(tmp_path / "ev")]) == cli.EXIT_DATA


def test_eval_corrupt_case_file(data, tmp_path):
    model_dir = tmp_path / "m"
    unet.save_model(unet.build(unet.UNetConfig(levels=2, base_channels=4)), model_dir)
    victim = sorted(data.glob("*.v25d"))[0]
    victim.write_bytes(victim.read_bytes()[:100])
    assert cli.main(["eval", "--model", str(model_dir), "--data", str(data),
                     "--out", str(tmp_path / "ev")]) == cli.EXIT_DATA


def test_check_suites(tmp_path, capsys):
    assert cli.main(["check", "--suite", "oracle", "--configs", "20",
                     "--out", str(tmp_path / "o")]) == 0
    assert "PASS" in capsys.readouterr().out
    result = json.loads((tmp_path / "o" / "check_oracle.json").read_text())
    assert result["max_deviation"] <= 1e-10
    assert cli.main(["check", "--suite", "locality", "--out", str(tmp_path / "l")]) == 0


def test_check_corrupted_table_fails(tmp_path, capsys):
    code = cli.main(["check", "--suite", "oracle", "--configs", "5", "--corrupt-e",
                     "--out", str(tmp_path)])
    assert code == cli.EXIT_NUMERIC
    assert "FAIL" in capsys.readouterr().out
    assert manifest(tmp_path)["config"]["exit_code"] == cli.EXIT_NUMERIC


def test_ablate_structure(data, tmp_path, capsys):
    out = tmp_path / "abl"
    assert cli.main(["ablate", "--data", str(data), "--out", str(out), "--Tk", "1,3",
                     "--epochs", "1"] + NET) == 0
    text = capsys.readouterr().out
    lines = text.splitlines()
    assert lines[0].split() == ["Tk", "DSC", "Recall/Precision", "F1"]
    assert [line.split()[0] for line in lines[2:4]] == ["1", "3"]
    assert "86.51" in text  # reference footnote for Tk=3
    rows = json.loads((out / "ablation.json").read_text())["rows"]
    for row in rows:
        for key in ("dsc", "recall", "precision", "f1"):
            assert 0 <= row[key] <= 1
    assert (out / "tk3" / "model" / "manifest.json").exists()


def test_ablate_even_kernel(data, tmp_path):
    assert cli.main(["ablate", "--data", str(data), "--out", str(tmp_path),
                     "--Tk", "3,4"]) == cli.EXIT_USAGE


def test_bench(tmp_path, capsys):
    assert cli.main(["bench", "--shapes", "1x2x8x8x4;1x1x4x4x2", "--reps", "1", "--k", "4",
                     "--v", "4", "--out", str(tmp_path)]) == 0
    rows = json.loads((tmp_path / "bench.json").read_text())["rows"]
    assert [r["shape"] for r in rows] == [[1, 2, 8, 8, 4], [1, 1, 4, 4, 2]]
    assert all(r["max_deviation"] <= 1e-10 for r in rows)
    assert "naive s" in capsys.readouterr().out


def test_bench_zero_reps(tmp_path):
    assert cli.main(["bench", "--reps", "0", "--out", str(tmp_path)]) == cli.EXIT_USAGE


def test_bench_bad_shape(tmp_path):
    assert cli.main(["bench", "--shapes", "1x2x3", "--out", str(tmp_path)]) == cli.EXIT_USAGE


def test_version_and_help(capsys):
    assert cli.main(["--version"]) == 0
    assert cli.main(["gen", "--help"]) == 0
    assert "--geometry" in capsys.readouterr().out
