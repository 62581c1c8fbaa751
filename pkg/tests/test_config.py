import io

import pytest

from src.bench.config import (
    DEFAULT_SETTINGS,
    SCALING_THRESHOLDS,
    build_model,
    get_setting_description,
    get_setting_keys,
    load_experiment_config,
    model_from_config,
    parse_config_text,
    parse_setting_value,
)
from src.models.data_models import CouplingStrategy, ExperimentConfig
from src.models.feynman_kac import BarriersModel, DiscreteHMM, LinearGaussianModel, StochasticVolatilityModel
from src.utils.errors import ConfigError

GOOD_CONFIG = """# barriers sweep
model.family=barriers
model.params=0.5, 0.2, 0.5
model.T=8,16

sweep.N=3
sweep.strategies=imc,JIC
replicates=2
"""


def test_parse_config_text_records_lines():
    values, lines = parse_config_text(io.StringIO(GOOD_CONFIG))
    assert values["model_family"] == "barriers"
    assert values["model_params"] == [0.5, 0.2, 0.5]
    assert values["T"] == [8, 16]
    assert values["strategies"] == [CouplingStrategy.IMC, CouplingStrategy.JIC]
    assert values["replicates"] == 2
    assert lines["model_family"] == 2
    assert lines["replicates"] == 8


def test_unknown_key_reports_its_line():
    with pytest.raises(ConfigError) as info:
        parse_config_text(io.StringIO("seed=1\nsweep.M=3\n"), path="exp.cfg")
    assert info.value.line == 2
    assert info.value.message.startswith("exp.cfg:2:")
    assert "sweep.M" in info.value.message


def test_bad_value_reports_its_line():
    with pytest.raises(ConfigError) as info:
        parse_config_text(io.StringIO("seed=1\n\nreplicates=many\n"))
    assert info.value.line == 3
    with pytest.raises(ConfigError):
        parse_config_text(io.StringIO("sweep.strategies=IMC,XYZ\n"))
    with pytest.raises(ConfigError):
        parse_config_text(io.StringIO("record_timing=maybe\n"))


def test_unparseable_line():
    with pytest.raises(ConfigError) as info:
        parse_config_text(io.StringIO("seed=1\nthis is not a binding\n"))
    assert info.value.line == 2


def test_validation_failure_points_at_the_file_line(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("seed=3\nreplicates=0\n", encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        load_experiment_config(path)
    assert info.value.line == 2
    assert "replicates" in info.value.message


def test_overrides_win_over_the_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(GOOD_CONFIG, encoding="utf-8")
    config = load_experiment_config(path, overrides={"replicates": 7, "seed": None})
    assert config.replicates == 7
    assert config.seed == 0
    assert config.T == [8, 16]


def test_invalid_override_has_no_line():
    with pytest.raises(ConfigError) as info:
        load_experiment_config(overrides={"N": [0]})
    assert info.value.line is None


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read config"):
        load_experiment_config("/nonexistent/exp.cfg")


def test_documented_defaults_match_the_model():
    values = {setting["field"]: parse_setting_value(setting["field"], setting["default"])
              for setting in DEFAULT_SETTINGS.values()}
    assert ExperimentConfig(**values) == ExperimentConfig()
    assert load_experiment_config() == ExperimentConfig()


def test_setting_help():
    keys = get_setting_keys()
    for key in ("model.family", "model.params", "model.T", "sweep.N", "sweep.strategies", "replicates",
                "seed", "time_budget_secs", "out_dir"):
        assert key in keys
    assert get_setting_description("bogus") == "Unknown key"
    assert SCALING_THRESHOLDS["max_couple_ratio_max"] < SCALING_THRESHOLDS["index_couple_ratio_min"]


def test_build_model_families():
    assert isinstance(build_model("barriers", [], 4), BarriersModel)
    assert isinstance(build_model("lg", [0.5, 1.0, 2.0], 4), LinearGaussianModel)
    assert isinstance(build_model("sv", [], 4), StochasticVolatilityModel)
    assert build_model("discrete", [1.0], 4).has_pairwise
    assert isinstance(build_model("discrete", [], 4), DiscreteHMM)
    assert build_model("uniform", [], 6).horizon == 6


def test_build_model_rejects_bad_input():
    with pytest.raises(ValueError):
        build_model("lg", [0.5, 1.0], 4)
    with pytest.raises(ValueError):
        build_model("ising", [], 4)


def test_sv_observations_follow_the_data_seed():
    a = build_model("sv", [], 20, data_seed=1)
    b = build_model("sv", [], 20, data_seed=1)
    c = build_model("sv", [], 20, data_seed=2)
    assert (a.y == b.y).all()
    assert not (a.y == c.y).all()
    config = ExperimentConfig(model_family="sv", sv_stationary_variance="phi")
    assert model_from_config(config, 5).stationary_variance == "phi"
