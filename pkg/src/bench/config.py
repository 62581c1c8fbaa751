"""
Experiment Configuration

Flat ``key=value`` files (comments with ``#``) parsed with python-dotenv's
parser, which keeps the source line of every binding so errors can point at
it. Values from the file are merged with command-line overrides and validated
as an ExperimentConfig.

DEFAULT_SETTINGS documents every key, its default and the pilot-calibrated
thresholds used by the scaling acceptance checks.
"""
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv.parser import parse_stream
from pydantic import ValidationError

from src.models.data_models import CouplingStrategy, ExperimentConfig, SVParams
from src.models.feynman_kac import (
    FeynmanKacModel,
    barriers_model,
    discrete_demo_model,
    linear_gaussian_model,
    simulate_sv_data,
    sv_model,
    uniform_model,
)
from src.utils.errors import ConfigError
from src.utils.seeding import make_rng

DEFAULT_SETTINGS = {
    "model.family": {
        "field": "model_family",
        "description": "barriers | lg | sv | uniform | discrete",
        "default": "barriers",
    },
    "model.params": {
        "field": "model_params",
        "description": "Comma-separated family parameters (empty = family defaults)",
        "default": "",
    },
    "model.T": {
        "field": "T",
        "description": "Comma-separated time horizons",
        "default": "64",
    },
    "sweep.N": {
        "field": "N",
        "description": "Comma-separated particle counts (reference excluded)",
        "default": "15",
    },
    "sweep.strategies": {
        "field": "strategies",
        "description": "Comma-separated forward couplings: JMC, IMC, IIC, JIC",
        "default": "IMC",
    },
    "replicates": {
        "field": "replicates",
        "description": "Replicates per cell",
        "default": "10",
    },
    "seed": {
        "field": "seed",
        "description": "Root seed; replicate seeds are derived from it",
        "default": "0",
    },
    "iteration_cap": {
        "field": "iteration_cap",
        "description": "Coupled iterations allowed per replicate",
        "default": "10000",
    },
    "time_budget_secs": {
        "field": "time_budget_secs",
        "description": "Wall-clock budget per cell (empty = unlimited)",
        "default": "",
    },
    "out_dir": {
        "field": "out_dir",
        "description": "Directory for CSV, JSON and PGM outputs",
        "default": "out",
    },
    "record_timing": {
        "field": "record_timing",
        "description": "Write wall-clock columns (otherwise 0, so outputs are byte-stable)",
        "default": "false",
    },
    "sv.stationary_variance": {
        "field": "sv_stationary_variance",
        "description": "Initial SV variance: printed = sigma^2/(1-rho^2), phi = sigma^2/(1-phi^2)",
        "default": "printed",
    },
    "data_seed": {
        "field": "data_seed",
        "description": "Seed of the synthetic SV observations",
        "default": "12345",
    },
}

# Scaling checks on the barriers model (a = 0.5, b = 0.5, N = 31), T = 4096 against T = 512
SCALING_THRESHOLDS = {
    "max_couple_ratio_max": 2.0,  # JMC / IMC mean tau ratio stays below
    "index_couple_ratio_min": 4.0,  # IIC mean tau ratio exceeds
}

FAMILY_DEFAULT_PARAMS = {
    "barriers": [0.5, 0.2, 0.5],  # a, w, b
    "lg": [0.9, 1.0, 1.0],  # rho, sigma_x, sigma_y
    "sv": [-9.2, 0.97, -0.67, 0.20],  # mu, phi, rho, sigma
    "uniform": [],
    "discrete": [0.0],  # 1 = pairwise potentials
}


def get_setting_keys():
    """Get list of all configuration keys"""
    return list(DEFAULT_SETTINGS.keys())


def get_setting_description(key):
    """Get description for a specific key"""
    return DEFAULT_SETTINGS.get(key, {}).get("description", "Unknown key")


def _split(value: str):
    return [part.strip() for part in value.split(",") if part.strip()]


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def parse_setting_value(field: str, value: str) -> Any:
    if field == "model_params":
        return [float(v) for v in _split(value)]
    if field in ("T", "N"):
        return [int(v) for v in _split(value)]
    if field == "strategies":
        return [CouplingStrategy(v.upper()) for v in _split(value)]
    if field in ("replicates", "seed", "iteration_cap", "data_seed"):
        return int(value)
    if field == "time_budget_secs":
        return float(value) if value.strip() else None
    if field == "record_timing":
        return _parse_bool(value)
    return value.strip()


def parse_config_text(stream, path: Optional[str] = None):
    """Field values read from a key=value stream, and the line each came from."""
    values: Dict[str, Any] = {}
    lines: Dict[str, int] = {}
    for binding in parse_stream(stream):
        line = binding.original.line
        if binding.error:
            raise ConfigError(f"cannot parse {binding.original.string.strip()!r}", line=line, path=path)
        if binding.key is None:
            continue
        setting = DEFAULT_SETTINGS.get(binding.key)
        if setting is None:
            raise ConfigError(f"unknown key {binding.key!r}", line=line, path=path)
        field = setting["field"]
        try:
            values[field] = parse_setting_value(field, binding.value or "")
        except ValueError as e:
            raise ConfigError(f"bad value for {binding.key}: {e}", line=line, path=path) from e
        lines[field] = line
    return values, lines


def load_experiment_config(path: Optional[Union[str, Path]] = None,
                           overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Build an ExperimentConfig from an optional file and command-line overrides.

    Overrides are keyed by ExperimentConfig field name and win over file
    values. Validation failures of file values are reported with their line.
    """
    values: Dict[str, Any] = {}
    lines: Dict[str, int] = {}
    source = None
    if path is not None:
        source = str(path)
        try:
            with open(path, "r", encoding="utf-8") as f:
                values, lines = parse_config_text(f, path=source)
        except OSError as e:
            raise ConfigError(f"cannot read config: {e.strerror}", path=source) from e

    for field, value in (overrides or {}).items():
        if value is not None:
            values[field] = value
            lines.pop(field, None)

    try:
        return ExperimentConfig(**values)
    except ValidationError as e:
        first = e.errors()[0]
        field = str(first["loc"][0]) if first.get("loc") else None
        raise ConfigError(f"{field}: {first['msg']}", line=lines.get(field), path=source) from e


def family_params(family: str, params) -> list:
    return list(params) if params else list(FAMILY_DEFAULT_PARAMS[family])


def build_model(family: str, params, T: int, stationary_variance: str = "printed",
                data_seed: int = 12345) -> FeynmanKacModel:
    """Construct a built-in model; SV observations are simulated from ``data_seed``."""
    if family not in FAMILY_DEFAULT_PARAMS:
        raise ValueError(f"unknown model family {family!r}")
    p = family_params(family, params)
    expected = len(FAMILY_DEFAULT_PARAMS[family])
    if len(p) != expected:
        raise ValueError(f"{family} takes {expected} parameters, got {len(p)}")

    if family == "barriers":
        return barriers_model(p[0], p[1], p[2], T)
    if family == "lg":
        return linear_gaussian_model(p[0], p[1], p[2], T)
    if family == "sv":
        theta = SVParams(mu=p[0], phi=p[1], rho=p[2], sigma=p[3])
        _, y = simulate_sv_data(theta, T, make_rng(data_seed), stationary_variance)
        return sv_model(theta, y, stationary_variance=stationary_variance)
    if family == "uniform":
        return uniform_model(T)
    return discrete_demo_model(T, pairwise=bool(p[0]))


def model_from_config(config: ExperimentConfig, T: int) -> FeynmanKacModel:
    return build_model(config.model_family, config.model_params, T,
                       stationary_variance=config.sv_stationary_variance, data_seed=config.data_seed)
