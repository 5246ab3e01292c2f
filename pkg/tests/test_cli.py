import json

import pytest

import cli
from experiment_config import config_to_dict


def test_parse_command():
    command, level = cli.parse_command(["ablate", "--out", "runs/x", "--set", "beta=0.1", "--set", "gamma=0.3",
                                        "--seeds", "3,4", "--plan", "structures", "--log-level", "DEBUG"])
    assert command.name == "ablate"
    assert command.overrides == ["beta=0.1", "gamma=0.3"]
    assert command.seeds == [3, 4]
    assert command.plan == "structures"
    assert command.data.endswith("data")
    assert level == "DEBUG"


def test_unknown_command_is_rejected():
    with pytest.raises(SystemExit):
        cli.parse_command(["train-everything"])


def test_unknown_override_exits_with_config_status(tmp_path, capsys):
    status = cli.main(["pretrain", "--out", str(tmp_path), "--set", "kernel.kernel_cnt=3"])
    assert status == 2
    assert "kernel.kernel_cnt" in capsys.readouterr().err


def test_invalid_value_exits_with_config_status(tmp_path, capsys):
    status = cli.main(["adapt", "--out", str(tmp_path), "--set", "beta=-1"])
    assert status == 2
    assert "beta" in capsys.readouterr().err


def test_runtime_failure_exits_with_one(tmp_path, capsys):
    status = cli.main(["eval", "--out", str(tmp_path)])
    assert status == 1
    assert "❌ Error" in capsys.readouterr().err


def test_schema_prints_json(capsys):
    assert cli.main(["schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert "kernel" in schema["properties"]


@pytest.fixture
def config_file(tmp_path, small_cfg):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(config_to_dict(small_cfg)))
    return str(path)


def test_pipeline_smoke(tmp_path, config_file, capsys):
    out = tmp_path / "run"
    base = ["--config", config_file, "--out", str(out)]
    for name in ("gen-data", "pretrain", "adapt", "eval", "plot"):
        assert cli.main([name] + base) == 0, capsys.readouterr().err

    assert (out / "data" / "target" / "manifest.json").exists()
    assert (out / "pretrain" / "model.ckpt").exists()
    assert (out / "adapt" / "checkpoints" / "adapted.ckpt").exists()
    with open(out / "eval" / "result.json", encoding="utf-8") as f:
        result = json.load(f)
    assert result["checkpoint"].endswith("adapt/model.ckpt") or result["checkpoint"].endswith("adapt\\model.ckpt")
    assert set(result["scores"]) == {"target", "unseen", "source_val"}
    assert (out / "plots" / "loss_curves.png").exists()
    assert (out / "plots" / "discrepancy.csv").exists()
    assert not (out / "plots" / "sensitivity.png").exists()


@pytest.mark.slow
def test_ablation_command(tmp_path, config_file, capsys):
    out = tmp_path / "run"
    base = ["--config", config_file, "--out", str(out)]
    assert cli.main(["gen-data"] + base) == 0
    assert cli.main(["ablate", "--plan", "loss-variants", "--seeds", "0"] + base) == 0
    printed = capsys.readouterr().out
    assert "MMD" in printed and "KL" in printed
    assert (out / "ablate" / "loss-variants" / "summary.csv").exists()


def _run_pipeline(out, config_file):
    base = ["--config", config_file, "--out", str(out)]
    for name in ("gen-data", "pretrain", "adapt", "eval", "plot"):
        assert cli.main([name] + base) == 0
    return {str(p.relative_to(out)): p for p in sorted(out.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_pipeline_reruns_are_byte_identical(tmp_path, config_file):
    first = _run_pipeline(tmp_path / "first", config_file)
    second = _run_pipeline(tmp_path / "second", config_file)
    assert sorted(first) == sorted(second)
    for name, path in first.items():
        if path.name == "result.json":
            continue
        assert path.read_bytes() == second[name].read_bytes(), name
    scores = [json.loads((run / "eval" / "result.json").read_text())["scores"]
              for run in (tmp_path / "first", tmp_path / "second")]
    assert scores[0] == scores[1]
