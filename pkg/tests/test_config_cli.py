import json

import pytest

from lumiforge import cli
from lumiforge.config import ConfigError, RunConfig, load_config, parse_config


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_defaults_are_valid():
    cfg = parse_config({}, env={})
    assert cfg.dataset.subjects == [0, 1] and len(cfg.dataset.trajectories) == 4
    assert cfg.dit_config().latent_size == 16


def test_unknown_key_reports_path():
    with pytest.raises(ConfigError) as exc:
        parse_config({"light": {"betta": 2.0}}, env={})
    assert exc.value.path == "light.betta"


def test_nested_trajectory_error_path():
    doc = {"dataset": {"trajectories": [{"kind": "linear", "start": [0, 0, 0], "end": [1, 1, 1], "speed": 2}]}}
    with pytest.raises(ConfigError) as exc:
        parse_config(doc, env={})
    assert exc.value.path == "dataset.trajectories[0].speed"


def test_shape_mismatch_rejected():
    with pytest.raises(ConfigError, match="divisible"):
        parse_config({"dataset": {"resolution": 40}}, env={})


def test_empty_sweep_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_config({"sweep": {"light_scales": []}}, env={})
    assert exc.value.path == "sweep.light_scales"


def test_seed_from_environment():
    assert parse_config({"seed": 1}, env={"LUMIFORGE_SEED": "42"}).seed == 42
    with pytest.raises(ConfigError):
        parse_config({}, env={"LUMIFORGE_SEED": "abc"})


def test_config_json_round_trip(tmp_path):
    cfg = parse_config({"seed": 5, "light": {"beta": 1.0}}, env={})
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    assert load_config(p, env={}) == cfg


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.json", env={})
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(tmp_path / "bad.json", env={})


def test_cli_invalid_key_exit_code(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"codec": {"stepz": 3}}))
    assert cli.main(["train-codec", "--config", str(p)]) == cli.EXIT_CONFIG
    err = _err(capsys)
    assert err["error"] == "config" and err["path"] == "codec.stepz"


def test_cli_out_of_range_light_scale(tmp_path, capsys):
    code = cli.main(["sample", "--caption", "x", "--trajectory", "0", "--light-scale", "1.5", "--out", str(tmp_path)])
    assert code == cli.EXIT_CONFIG
    assert _err(capsys)["path"] == "sample.light_scale"


def test_cli_missing_checkpoint(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"work_dir": str(tmp_path / "run")}))
    assert cli.main(["train-backbone", "--config", str(p)]) == cli.EXIT_MISSING
    assert "codec" in _err(capsys)["message"]


def test_cli_missing_video_dir(tmp_path, capsys):
    code = cli.main(["evaluate", "--video", str(tmp_path / "a"), "--reference", str(tmp_path / "b"),
                     "--out", str(tmp_path / "r.json")])
    assert code == cli.EXIT_MISSING


def test_cli_dataset_is_deterministic(tmp_path, capsys):
    docs = []
    for name in ("a", "b"):
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps({"work_dir": str(tmp_path / name), "dataset": {"subjects": [3], "frames_per_video": 2,
                                                                              "resolution": 32}}))
        assert cli.main(["generate-dataset", "--config", str(p)]) == 0
        docs.append((tmp_path / name / "dataset" / "manifest.json").read_bytes())
    assert docs[0] == docs[1]
    assert json.loads(capsys.readouterr().out.splitlines()[-1])["samples"] == 4


def test_run_config_is_frozen():
    cfg = RunConfig()
    with pytest.raises(Exception):
        cfg.seed = 3
