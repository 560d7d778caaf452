import json
from pathlib import Path

import pytest

from calibrec.cli.main import main
from calibrec.cli.run_config import RunConfig, coerce_overrides, resolve_config
from calibrec.exceptions.exceptions import InvalidConfigError, UnknownConfigKeysError

TINY_MODEL = ["--d", "8", "--n", "5", "--heads", "2", "--inner", "8", "--dropout", "0"]


@pytest.fixture
def data_dir(tmp_path):
    raw = tmp_path / "cycle.txt"
    data = tmp_path / "data"
    assert main(["synth", "--pattern", "cycle", "--n-items", "8", "--n-users", "30", "--length", "10", "--output", str(raw)]) == 0
    assert main(["preprocess", "--input", str(raw), "--output-dir", str(data), "--min-count", "1"]) == 0
    return data


@pytest.fixture
def trained(tmp_path, data_dir):
    reports = tmp_path / "reports"
    argv = ["train", "--data-dir", str(data_dir), "--report-dir", str(reports), "--epochs", "1", "--batch-size", "32", *TINY_MODEL]
    assert main(argv) == 0
    (run_dir,) = reports.glob("train-*")
    return run_dir


def diagnostics_argv(command, run_dir, data_dir, *extra):
    return [
        command, "--checkpoint", str(run_dir / "checkpoint.json"), "--data-dir", str(data_dir),
        "--report-dir", str(run_dir.parent), *extra,
    ]


def test_train_writes_its_run_directory(trained):
    names = {path.name for path in trained.iterdir()}

    assert {"checkpoint.json", "checkpoint.bin", "metrics.jsonl", "resolved_config.json", "test.json", "test.csv"} <= names
    report = json.loads((trained / "test.json").read_text())
    assert set(report["recall"]) == {"@10", "@20"}
    assert report["extra"]["best_epoch"] == 1


def test_eval_reports_only_requested_cutoffs(trained, data_dir):
    assert main(diagnostics_argv("eval", trained, data_dir, "--ks", "1,3", "--split", "valid")) == 0

    (run_dir,) = trained.parent.glob("eval-*")
    report = json.loads((run_dir / "valid.json").read_text())
    assert set(report["recall"]) == set(report["ndcg"]) == {"@1", "@3"}
    assert report["count"] == 30


def test_diagnostic_commands(trained, data_dir):
    assert main(diagnostics_argv("erase", trained, data_dir, "--layer", "0")) == 0
    assert main(diagnostics_argv("kendall", trained, data_dir)) == 0
    assert main(diagnostics_argv("slice", trained, data_dir, "--mode", "length", "--edges", "0,5,inf")) == 0

    reports = trained.parent
    (erase_dir,) = reports.glob("erase-*")
    assert {"original.json", "erased.json"} <= {path.name for path in erase_dir.iterdir()}
    (kendall_dir,) = reports.glob("kendall-*")
    assert len(json.loads((kendall_dir / "kendall.json").read_text())["kendall"]) == 2
    (slice_dir,) = reports.glob("slice-*")
    assert set(json.loads((slice_dir / "slice_length.json").read_text())["slices"]) == {"[0, 5)", "[5, inf)"}


def test_eval_reports_size_and_throughput(trained, data_dir):
    assert main(diagnostics_argv("eval", trained, data_dir)) == 0
    assert main(diagnostics_argv("eval", trained, data_dir, "--lite-inference", "true")) == 0

    reports = {}
    for run_dir in trained.parent.glob("eval-*"):
        lite = json.loads((run_dir / "resolved_config.json").read_text())["lite_inference"]
        reports[lite] = json.loads((run_dir / "test.json").read_text())["extra"]

    assert set(reports) == {False, True}
    assert reports[True]["parameters"] == reports[False]["parameters"] > 0
    assert reports[True]["sequences_per_second"] > 0 and reports[False]["sequences_per_second"] > 0


@pytest.mark.parametrize("extra", [["--layer", "5"], ["--head", "2"], ["--layer", "-1"]])
def test_erase_rejects_missing_layers_and_heads(trained, data_dir, capsys, extra):
    assert main(diagnostics_argv("erase", trained, data_dir, *extra)) == 1
    assert extra[0].removeprefix("--") in capsys.readouterr().err


def test_architecture_override_that_breaks_the_checkpoint(trained, data_dir, capsys):
    assert main(diagnostics_argv("eval", trained, data_dir, "--d", "16")) == 1
    assert "shapes differ" in capsys.readouterr().err


def test_synth_names_the_failing_argument(tmp_path, capsys):
    code = main(["synth", "--pattern", "cycle", "--n-items", "0", "--n-users", "3", "--output", str(tmp_path / "x.txt")])

    assert code == 1
    err = capsys.readouterr().err
    assert "n_items" in err and "noise_rate" not in err


def test_preprocess_summary_skips_users_too_short_to_split(tmp_path):
    raw = tmp_path / "log.txt"
    raw.write_text("u1 a 1\nu1 b 2\nu1 c 3\nu2 a 1\nu2 b 2\n")

    assert main(["preprocess", "--input", str(raw), "--output-dir", str(tmp_path / "data"), "--min-count", "1"]) == 0

    summary = json.loads((tmp_path / "data" / "summary.json").read_text())
    assert (summary["users"], summary["interactions"], summary["dropped_users"]) == (1, 3, 1)


def test_descending_edges_are_a_config_error(trained, data_dir):
    assert main(diagnostics_argv("slice", trained, data_dir, "--mode", "popularity", "--edges", "5,0")) == 1


def test_rerunning_a_snapshot_reproduces_the_metrics(trained):
    before = (trained / "metrics.jsonl").read_bytes()

    assert main(["train", "--config", str(trained / "resolved_config.json")]) == 0

    assert (trained / "metrics.jsonl").read_bytes() == before


def test_preprocess_is_deterministic(tmp_path):
    raw = tmp_path / "markov.txt"
    main(["synth", "--pattern", "markov", "--n-items", "12", "--n-users", "40", "--noise-rate", "0.3", "--output", str(raw)])

    for name in ("first", "second"):
        assert main(["preprocess", "--input", str(raw), "--output-dir", str(tmp_path / name), "--min-count", "2"]) == 0

    files = sorted(path.name for path in (tmp_path / "first").iterdir())
    assert files == sorted(path.name for path in (tmp_path / "second").iterdir())
    for name in files:
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()


def test_missing_input_is_a_data_error(tmp_path, capsys):
    code = main(["preprocess", "--input", str(tmp_path / "absent.txt"), "--output-dir", str(tmp_path / "out")])

    assert code == 2
    assert "absent.txt" in capsys.readouterr().err


def test_unknown_flag_prints_usage(capsys):
    with pytest.raises(SystemExit) as error:
        main(["train", "--depth", "3"])

    assert error.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_invalid_values_are_listed_together(tmp_path, capsys):
    code = main(["train", "--d", "5", "--heads", "2", "--dropout", "2", "--report-dir", str(tmp_path)])

    assert code == 1
    err = capsys.readouterr().err
    assert "heads" in err and "dropout" in err


def test_unknown_keys_in_a_config_file(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"d": 8, "depth": 3}))

    assert main(["train", "--config", str(config)]) == 1
    assert "depth" in capsys.readouterr().err


def test_train_needs_a_data_dir(tmp_path):
    assert main(["train", "--report-dir", str(tmp_path)]) == 1


def test_gradcheck_command(tmp_path):
    assert main(["gradcheck", "--report-dir", str(tmp_path), "--layers", "1"]) == 0

    (run_dir,) = tmp_path.glob("gradcheck-*")
    result = json.loads((run_dir / "gradcheck.json").read_text())
    assert max(result["errors"].values()) <= result["tolerance"]


def test_gradcheck_refuses_dropout(tmp_path):
    assert main(["gradcheck", "--report-dir", str(tmp_path), "--dropout", "0.2"]) == 1


def test_report_root_from_the_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CALIBREC_REPORT_ROOT", str(tmp_path))

    assert RunConfig().resolved_report_root() == Path(tmp_path)
    assert RunConfig(report_dir="elsewhere").resolved_report_root() == Path("elsewhere")


def test_run_ids_are_stable():
    config = RunConfig(d=8)

    assert config.run_id("eval", split="test") == RunConfig(d=8).run_id("eval", split="test")
    assert config.run_id("eval", split="test") != config.run_id("eval", split="valid")


def test_overrides_are_coerced_by_field_type():
    values = coerce_overrides(
        {
            "ks": "5,10",
            "patience": "null",
            "precision": "64",
            "spatial_enabled": "false",
            "position_mode": "absolute",
            "learning_rate": "0.01",
            "calibrated_layers": "0,1",
        }
    )

    assert values == {
        "ks": [5, 10],
        "patience": None,
        "precision": 64,
        "spatial_enabled": False,
        "position_mode": "absolute",
        "learning_rate": 0.01,
        "calibrated_layers": [0, 1],
    }


def test_bad_overrides_are_reported_together():
    with pytest.raises(InvalidConfigError) as error:
        coerce_overrides({"precision": "16", "layers": "two", "residual": "maybe"})

    assert set(error.value.keys) == {"precision", "layers", "residual"}


def test_command_line_beats_file_beats_base(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"d": 32, "heads": 4}))

    config = resolve_config(path, {"d": "64"}, base={"d": 16, "layers": 3})

    assert (config.d, config.heads, config.layers) == (64, 4, 3)


def test_unknown_base_keys_are_rejected():
    with pytest.raises(UnknownConfigKeysError):
        resolve_config(None, {}, base={"depth": 2})
