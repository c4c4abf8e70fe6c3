import pytest

from videdit.config import (
    ConfigError,
    RunConfig,
    parse_config,
    serialize_config,
)
from videdit.nnfield import SearchWindow


def test_defaults_carry_stock_hyperparameters():
    cfg = RunConfig.defaults()
    assert cfg["schedule.steps"] == 50
    assert cfg["schedule.band_fraction"] == 0.8
    assert cfg["mask.threshold"] == 0.6
    assert cfg["guidance.scale"] == 12.5
    assert cfg["finetune.frames"] == 16
    assert cfg["finetune.lr"] == 1e-5
    assert cfg["finetune.iterations"] == 400
    assert (cfg["correction.w_prev"], cfg["correction.w_center"], cfg["correction.w_next"]) \
        == (0.1, 0.8, 0.1)
    assert cfg["correction.active_tail"] == 5
    assert cfg["correction.window"] == "corner4"


def test_parse_serialize_parse_is_fixed_point():
    text = "\n".join([
        "seed = 3",
        "schedule.steps = 25",
        "mask.threshold = 0.8",
        "pipeline.preserve_background = false",
        "finetune.lr = 0.001",
    ])
    once = parse_config(text)
    again = parse_config(serialize_config(once))
    assert once.values == again.values
    assert serialize_config(once) == serialize_config(again)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config("definitely.not.a.key = 1\n")


def test_bad_value_type_rejected():
    with pytest.raises(ConfigError, match="bad value"):
        parse_config("schedule.steps = soon\n")
    with pytest.raises(ConfigError, match="bad value"):
        parse_config("guidance.enabled = maybe\n")


def test_malformed_line_rejected():
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        parse_config("schedule.steps 50\n")


def test_overrides_are_typed():
    cfg = RunConfig.defaults().with_overrides({"schedule.steps": "30",
                                               "guidance.enabled": "true"})
    assert cfg["schedule.steps"] == 30
    assert cfg["guidance.enabled"] is True
    with pytest.raises(ConfigError):
        RunConfig.defaults().with_overrides({"nope": "1"})


def test_window_builder():
    cfg = RunConfig.defaults()
    assert cfg.build_window() == SearchWindow.corner4()
    cfg2 = cfg.with_overrides({"correction.window": "radius:2"})
    assert cfg2.build_window() == SearchWindow.radius(2)
    with pytest.raises(ConfigError):
        cfg.with_overrides({"correction.window": "diamond"}).build_window()


def test_schedule_and_correction_builders_compose():
    cfg = RunConfig.defaults().with_overrides({"schedule.steps": "10"})
    sched = cfg.build_schedule()
    assert sched.num_steps == 10
    corr = cfg.build_correction()
    assert corr.block_name == "up2"
    assert corr.weights.w_center == 0.8
    guid = cfg.build_guidance()
    assert guid.scale == 12.5 and not guid.enabled
