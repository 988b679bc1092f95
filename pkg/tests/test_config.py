import pytest

from mvweak.config import RunConfig, load_run_config
from mvweak.errors import ConfigError
from mvweak.pipeline import check_consistency


def test_defaults_are_consistent():
    check_consistency(RunConfig())


def test_yaml_and_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("seed: 4\ntrain:\n  epochs: 2\nmodel:\n  ptb_op: sum\n")
    cfg = load_run_config(path, {"train.batch_size": 3})
    assert cfg.seed == 4 and cfg.train.epochs == 2 and cfg.train.batch_size == 3 and cfg.model.ptb_op == "sum"


def test_json_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text('{"task": "detection", "downstream": {"num_task_classes": 1}}')
    cfg = load_run_config(path)
    assert cfg.task == "detection"
    check_consistency(cfg)


def test_unknown_keys_named_with_path(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("model:\n  widht: 3\n")
    with pytest.raises(ConfigError, match="model.widht"):
        load_run_config(path)
    with pytest.raises(ConfigError, match="bogus"):
        load_run_config(None, {"bogus": 1})


def test_cross_section_mismatch_named():
    cfg = load_run_config(None, {"grid.rows": 3})
    with pytest.raises(ConfigError, match="model.sl_width"):
        check_consistency(cfg)
    cfg = load_run_config(None, {"task": "detection"})
    with pytest.raises(ConfigError, match="num_task_classes"):
        check_consistency(cfg)


def test_invalid_values():
    with pytest.raises(ConfigError, match="train"):
        load_run_config(None, {"train.lr": -1.0})
    with pytest.raises(ConfigError):
        load_run_config(None, {"task": "tracking"})
