import json

import numpy as np
import pytest

from regrade import runconfig as rc
from regrade.cli import main
from regrade.errors import ConfigError


def write_config(path, seed=5, **extra):
    lines = [f"run.seed = {seed}"]
    lines += [f"{key} = {value}" for key, value in extra.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


# ------------------------------------------------------------- parsing


def test_parse_ignores_comments_and_blanks():
    entries = rc.parse_config_text(
        "# a comment\n\nrun.seed = 3\n  train.epochs =  7 \n"
    )
    assert entries == {"run.seed": "3", "train.epochs": "7"}


def test_parse_collects_all_problems_at_once():
    text = "run.seed = 1\nbogus line\nno.such.key = 2\nalso bad\n"
    with pytest.raises(ConfigError) as err:
        rc.parse_config_text(text)
    problems = err.value.problems
    assert len(problems) == 3
    assert any("line 2" in p for p in problems)
    assert any("unknown key 'no.such.key'" in p for p in problems)
    assert any("line 4" in p for p in problems)


def test_build_collects_cast_and_cross_errors_together():
    entries = {
        "run.seed": "1",
        "train.epochs": "many",  # cast failure
        "encoder.heads": "3",  # 64 % 3 != 0: cross-check failure
        "loop.workers": "0",  # cross-check failure
    }
    with pytest.raises(ConfigError) as err:
        rc.build_config(entries)
    text = "; ".join(err.value.problems)
    assert "train.epochs" in text
    assert "encoder.dim" in text
    assert "loop.workers" in text
    assert len(err.value.problems) == 3


def test_seed_is_mandatory():
    with pytest.raises(ConfigError) as err:
        rc.build_config({})
    assert any("run.seed" in p for p in err.value.problems)


def test_defaults_satisfy_validation_once_seeded():
    cfg = rc.build_config({"run.seed": "9"})
    assert cfg.seed == 9
    assert cfg.optimizer == "adam"
    assert cfg.augment == "basic"
    assert cfg.warmup_epochs < cfg.epochs


def test_overrides_beat_file_values():
    cfg = rc.build_config({"run.seed": "1", "loop.workers": "2"}, {"workers": 4, "seed": None})
    assert cfg.workers == 4
    assert cfg.seed == 1  # None overrides are ignored


def test_bool_words():
    cfg = rc.build_config({"run.seed": "1", "loop.dilate_mask": "no"})
    assert cfg.dilate_mask is False
    with pytest.raises(ConfigError) as err:
        rc.build_config({"run.seed": "1", "loop.dilate_mask": "maybe"})
    assert any("loop.dilate_mask" in p for p in err.value.problems)


def test_config_round_trips_through_text():
    cfg = rc.build_config({"run.seed": "17", "train.epochs": "3", "color.delta_noise": "0.25"})
    text = rc.config_to_text(cfg)
    again = rc.build_config(rc.parse_config_text(text))
    assert again == cfg


def test_every_key_appears_in_serialized_config(tmp_path):
    cfg = rc.build_config({"run.seed": "2"})
    path = rc.write_effective_config(cfg, tmp_path)
    text = path.read_text()
    for key in rc.KEY_SCHEMA:
        assert f"{key} = " in text


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError) as err:
        rc.load_config(tmp_path / "nope.cfg")
    assert "not found" in err.value.problems[0]


# ------------------------------------------------------------------ CLI


def fast_config(tmp_path, **extra):
    # Small but valid everywhere: 64 is the minimum image size.
    settings = {
        "data.image_size": 64,
        "data.per_grade_train": 1,
        "data.per_grade_eval": 1,
        "encoder.dim": 16,
        "encoder.patch_size": 16,
        "encoder.heads": 2,
        "train.epochs": 1,
        "train.warmup_epochs": 0,
        "train.augment": "off",
        "loop.max_iterations": 2,
        "paths.data_dir": tmp_path / "data",
        "paths.checkpoint": tmp_path / "out/checkpoint.bin",
        "paths.run_dir": tmp_path / "out/run",
        "paths.eval_dir": tmp_path / "out/eval",
        "paths.report_dir": tmp_path / "out/report",
    }
    settings.update(extra)
    return write_config(tmp_path / "run.cfg", **settings)


def test_cli_generate_writes_dataset_and_config(tmp_path, capsys):
    cfg = fast_config(tmp_path)
    assert main(["generate", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "5 train + 5 eval" in out
    for split, n in (("train", 5), ("eval", 5)):
        images = list((tmp_path / "data" / split).glob("img_*.png"))
        assert len(images) == n
    assert (tmp_path / "data" / "effective_config.txt").is_file()


def test_cli_generate_twice_is_byte_identical(tmp_path):
    cfg = fast_config(tmp_path)
    for out in ("a", "b"):
        assert main(["generate", "--config", str(cfg), "--output", str(tmp_path / out)]) == 0

    def inventory(root):
        return {
            str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "effective_config.txt"
        }

    blobs_a = inventory(tmp_path / "a")
    blobs_b = inventory(tmp_path / "b")
    assert blobs_a.keys() == blobs_b.keys() and len(blobs_a) > 10
    assert all(blobs_a[name] == blobs_b[name] for name in blobs_a)


def test_cli_full_pipeline_small(tmp_path, capsys):
    cfg = fast_config(tmp_path)
    for command in ("generate", "train", "run", "evaluate", "report"):
        assert main([command, "--config", str(cfg)]) == 0, capsys.readouterr().err
    assert (tmp_path / "out/checkpoint.bin").is_file()
    assert (tmp_path / "out/run/run.json").is_file()
    report = json.loads((tmp_path / "out/eval/report.json").read_text())
    assert report["counts"]["images"] == 5
    assert (tmp_path / "out/report/reduction_curve.png").is_file()
    assert (tmp_path / "out/report/transition_flow.png").is_file()


def test_cli_evaluate_before_run_fails_cleanly(tmp_path, capsys):
    cfg = fast_config(tmp_path)
    assert main(["generate", "--config", str(cfg)]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--config", str(cfg)]) == 1
    record = json.loads(capsys.readouterr().err)
    assert record["error"] == "MissingArtifactError"
    assert "run" in record["message"]


def test_cli_train_before_generate_fails_cleanly(tmp_path, capsys):
    cfg = fast_config(tmp_path)
    assert main(["train", "--config", str(cfg)]) == 1
    record = json.loads(capsys.readouterr().err)
    assert record["error"] == "MissingArtifactError"


def test_cli_bad_config_reports_all_problems(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("train.epochs = soon\nloop.workers = 0\n")
    assert main(["generate", "--config", str(path)]) == 1
    record = json.loads(capsys.readouterr().err)
    assert record["error"] == "ConfigError"
    assert len(record["problems"]) == 3  # cast, workers, missing seed


def test_cli_seed_override_changes_dataset(tmp_path):
    cfg = fast_config(tmp_path)
    main(["generate", "--config", str(cfg), "--seed", "5"])
    first = (tmp_path / "data/train").glob("img_*.png")
    blobs = {p.name: p.read_bytes() for p in first}
    main(["generate", "--config", str(cfg), "--seed", "6"])
    changed = [
        name
        for name, blob in blobs.items()
        if (tmp_path / "data/train" / name).read_bytes() != blob
    ]
    assert changed  # a different seed regenerates different pixels


def test_cli_output_override_relocates_artifacts(tmp_path):
    cfg = fast_config(tmp_path)
    assert main(["generate", "--config", str(cfg), "--output", str(tmp_path / "elsewhere")]) == 0
    assert (tmp_path / "elsewhere" / "train").is_dir()
    assert not (tmp_path / "data").exists()


def test_cli_unknown_command_rejected():
    with pytest.raises(SystemExit):
        main(["polish", "--config", "x"])


def test_cli_effective_config_reproduces_run(tmp_path):
    cfg = fast_config(tmp_path)
    assert main(["generate", "--config", str(cfg)]) == 0
    effective = tmp_path / "data" / "effective_config.txt"
    assert main(["generate", "--config", str(effective), "--output", str(tmp_path / "redo")]) == 0
    original = {p.name: p.read_bytes() for p in (tmp_path / "data/train").iterdir()}
    redone = {p.name: p.read_bytes() for p in (tmp_path / "redo/train").iterdir()}
    assert original == redone
