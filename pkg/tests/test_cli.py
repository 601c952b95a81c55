import json

import pytest

from m2wllm.cli import main
from m2wllm.config import KEYS, TINY, RunConfig

FAST = dict(TINY, **{"train.epochs": 1, "data.n_samples": 40})


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(RunConfig(FAST).to_toml())
    return str(p)


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for k in KEYS:
        assert k in out
    assert "M2W_THREADS" in out


def test_no_command_exits_1(capsys):
    assert main([]) == 1


def test_evaluate_without_checkpoint(tmp_path, capsys):
    assert main(["evaluate", "--out-dir", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "--checkpoint" in err and len(err.strip().splitlines()) == 1


def test_unknown_config_key_exit_1(tmp_path, capsys):
    assert main(["train", "--set", "nope.key=1", "--out-dir", str(tmp_path)]) == 1
    assert "nope.key" in capsys.readouterr().err


def test_missing_files_exit_2(tmp_path, capsys):
    assert main(["evaluate", "--checkpoint", str(tmp_path / "none.m2w"),
                 "--out-dir", str(tmp_path)]) == 2
    assert main(["train", "--config", str(tmp_path / "none.toml"),
                 "--out-dir", str(tmp_path)]) == 2


def test_corrupt_checkpoint_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.m2w"
    bad.write_bytes(b"M2W1\x01\x00")
    assert main(["predict", "--checkpoint", str(bad), "--out-dir", str(tmp_path)]) == 2


def test_gradcheck_exit_0(capsys):
    assert main(["gradcheck"]) == 0
    assert "passed" in capsys.readouterr().out


def test_train_twice_byte_identical(tmp_path, cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["train", "--config", cfg, "--seed", "7", "--out-dir", str(d)]) == 0
    for name in ("checkpoint.m2w", "train_log.json", "train.stamp.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    stamp = json.loads((a / "train.stamp.json").read_text())
    assert stamp["seed"] == 7 and stamp["fingerprint"] == RunConfig(FAST).fingerprint()


def test_train_evaluate_predict_pipeline(tmp_path, cfg, capsys):
    assert main(["train", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
    ckpt = str(tmp_path / "checkpoint.m2w")
    assert main(["evaluate", "--checkpoint", ckpt, "--out-dir", str(tmp_path)]) == 0
    names = [json.loads(line)["name"] for line in (tmp_path / "report.jsonl").read_text().splitlines()]
    assert names == ["m2wllm", "persistence", "ridge"]
    assert main(["predict", "--checkpoint", ckpt, "--out-dir", str(tmp_path)]) == 0
    lines = (tmp_path / "forecast.csv").read_text().splitlines()
    assert lines[0] == "sample,origin,station,step,timestamp,forecast_mw"
    assert len(lines) == 1 + 8 * 2 * 4
    first = (tmp_path / "report.jsonl").read_bytes()
    assert main(["evaluate", "--checkpoint", ckpt, "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "report.jsonl").read_bytes() == first


def test_generate_data_then_train_on_csv(tmp_path, cfg):
    assert main(["generate-data", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
    csv_path = tmp_path / "dataset.csv"
    assert csv_path.exists()
    out = tmp_path / "run"
    assert main(["train", "--config", cfg, "--dataset", str(csv_path), "--out-dir", str(out)]) == 0
    assert (out / "checkpoint.m2w").exists()


def test_matrix_commands(tmp_path, cfg):
    assert main(["ablate", "--config", cfg, "--n-seeds", "1", "--ablation-list", "nwp",
                 "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "ablation-nwp.csv").exists()
    assert main(["few-shot", "--config", cfg, "--n-seeds", "1", "--fraction-list", "50,100",
                 "--out-dir", str(tmp_path)]) == 0
    assert len((tmp_path / "few-shot.csv").read_text().splitlines()) == 1 + 2 * 2
    assert main(["timing", "--config", cfg, "--n-seeds", "1", "--layers-list", "1",
                 "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "timing_seconds.csv").exists()


def test_bad_ablation_list(tmp_path, cfg):
    assert main(["ablate", "--config", cfg, "--ablation-list", "colour",
                 "--out-dir", str(tmp_path)]) == 1
