"""
Experiment configuration: presets per (problem, scale), a KEY=value file read with
python-dotenv, and command line overrides, applied in that order.
"""

import io
import logging
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from dotenv import dotenv_values

from src.errors import ConfigError
from src.ocp.problem import PROBLEM_IDS
from src.quadrature.beta_box import BetaParameterBox
from src.quadrature.sampling import RULES
from src.rom.online import ONLINE_MODES

logger = logging.getLogger(__name__)

SCALES = ("desk", "paper")


@dataclass(frozen=True)
class BenchmarkConfig:
    problem: str
    scale: str = "desk"
    mesh_h: float = 0.05
    delta: float = 1.0
    alpha: float = 0.01
    param_lower: tuple[float, ...] = (1.0, 0.5)
    param_upper: tuple[float, ...] = (1e5, 1.5)
    beta_a: tuple[float, ...] = (5.0, 5.0)
    beta_b: tuple[float, ...] = (3.0, 3.0)
    n_train: int = 50
    n_max: int = 15
    n_test: int = 20
    n_steps: int = 30
    final_time: float = 3.0
    rules: tuple[str, ...] = RULES
    modes: tuple[str, ...] = tuple(ONLINE_MODES)
    seed: int = 0
    output_dir: str = "results"
    jobs: int = 1

    @property
    def box(self) -> BetaParameterBox:
        return BetaParameterBox(self.param_lower, self.param_upper, self.beta_a, self.beta_b)

    @property
    def is_parabolic(self) -> bool:
        return self.problem.endswith("parabolic")


GRAETZ_BOX = {"param_lower": (1.0, 0.5), "param_upper": (1e5, 1.5), "beta_a": (5.0, 5.0), "beta_b": (3.0, 3.0)}
GRAETZ_PARABOLIC_BOX = {**GRAETZ_BOX, "param_lower": (1.0, 1.0), "param_upper": (1e5, 3.0)}
SQUARE_BOX = {"param_lower": (1.0, 0.9), "param_upper": (4e4, 1.5), "beta_a": (10.0, 10.0), "beta_b": (10.0, 10.0)}

PRESETS = {
    ("graetz-steady", "paper"): {**GRAETZ_BOX, "mesh_h": 0.034, "n_train": 100, "n_max": 20, "n_test": 100},
    ("graetz-steady", "desk"): {**GRAETZ_BOX, "mesh_h": 0.05, "n_train": 50, "n_max": 15, "n_test": 20},
    ("graetz-parabolic", "paper"): {**GRAETZ_PARABOLIC_BOX, "mesh_h": 0.038, "n_train": 100, "n_max": 15,
                                    "n_test": 100, "n_steps": 30, "final_time": 3.0},
    ("graetz-parabolic", "desk"): {**GRAETZ_PARABOLIC_BOX, "mesh_h": 0.1, "n_train": 30, "n_max": 10,
                                   "n_test": 10, "n_steps": 10, "final_time": 3.0},
    ("square-steady", "paper"): {**SQUARE_BOX, "mesh_h": 0.025, "n_train": 100, "n_max": 50, "n_test": 100},
    ("square-steady", "desk"): {**SQUARE_BOX, "mesh_h": 0.05, "n_train": 50, "n_max": 15, "n_test": 20},
    ("square-parabolic", "paper"): {**SQUARE_BOX, "mesh_h": 0.036, "n_train": 100, "n_max": 30,
                                    "n_test": 100, "n_steps": 30, "final_time": 3.0},
    ("square-parabolic", "desk"): {**SQUARE_BOX, "mesh_h": 0.07, "n_train": 30, "n_max": 10,
                                   "n_test": 10, "n_steps": 10, "final_time": 3.0},
}

# File key -> field name.
KEYS = {field.name.upper(): field.name for field in fields(BenchmarkConfig)}
_TUPLE_FLOAT = {"param_lower", "param_upper", "beta_a", "beta_b"}
_TUPLE_STR = {"rules", "modes"}
_INT = {"n_train", "n_max", "n_test", "n_steps", "seed", "jobs"}
_FLOAT = {"mesh_h", "delta", "alpha", "final_time"}


def preset(problem: str, scale: str = "desk") -> BenchmarkConfig:
    if problem not in PROBLEM_IDS:
        raise ConfigError(f"Unknown problem '{problem}', expected one of {', '.join(PROBLEM_IDS)}")
    if scale not in SCALES:
        raise ConfigError(f"Unknown scale '{scale}', expected one of {', '.join(SCALES)}")
    return BenchmarkConfig(problem=problem, scale=scale, **PRESETS[(problem, scale)])


def _convert(name: str, raw: str):
    raw = raw.strip()
    if name in _TUPLE_FLOAT:
        return tuple(float(item) for item in raw.split(",") if item.strip())
    if name in _TUPLE_STR:
        return tuple(item.strip() for item in raw.split(",") if item.strip())
    if name in _INT:
        return int(raw)
    if name in _FLOAT:
        return float(raw)
    return raw


def parse_values(values: dict[str, str | None], problems: list[str]) -> dict:
    parsed = {}
    for key, raw in values.items():
        name = KEYS.get(key.upper())
        if name is None:
            problems.append(f"unknown key {key}")
            continue
        if raw is None:
            problems.append(f"{key} has no value")
            continue
        try:
            parsed[name] = _convert(name, raw)
        except ValueError:
            problems.append(f"{key}={raw!r} is not a valid {name}")
    return parsed


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config: BenchmarkConfig) -> str:
    lines = [f"{field.name.upper()}={_format(getattr(config, field.name))}" for field in fields(config)]
    return "\n".join(lines) + "\n"


def read_config_values(text: str) -> dict:
    """Typed field values of KEY=value text; every malformed record is reported at once."""
    problems: list[str] = []
    parsed = parse_values(dotenv_values(stream=io.StringIO(text)), problems)
    if problems:
        raise ConfigError(problems)
    return parsed


def parse_config(text: str) -> BenchmarkConfig:
    """Parse KEY=value text; missing keys come from the preset of its PROBLEM and SCALE."""
    parsed = read_config_values(text)
    if "problem" not in parsed:
        raise ConfigError("PROBLEM is required")
    base = preset(parsed["problem"], parsed.get("scale", "desk"))
    return validate_config(replace(base, **parsed))


def load_config(path) -> BenchmarkConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file {path} does not exist")
    return parse_config(path.read_text(encoding="utf-8"))


def save_config(config: BenchmarkConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temporary = path.with_name(path.name + ".tmp")
    temporary.write_text(serialize_config(config), encoding="utf-8")
    os.replace(temporary, path)
    return path


def apply_overrides(config: BenchmarkConfig, **overrides) -> BenchmarkConfig:
    """Replace the given (non-None) fields and revalidate."""
    changes = {name: value for name, value in overrides.items() if value is not None}
    unknown = set(changes) - set(KEYS.values())
    if unknown:
        raise ConfigError(f"Unknown configuration fields {sorted(unknown)}")
    return validate_config(replace(config, **changes))


def validate_config(config: BenchmarkConfig) -> BenchmarkConfig:
    """Collect every field-level problem and raise them together."""
    problems = []
    if config.problem not in PROBLEM_IDS:
        problems.append(f"PROBLEM '{config.problem}' unknown, expected one of {', '.join(PROBLEM_IDS)}")
    if config.scale not in SCALES:
        problems.append(f"SCALE '{config.scale}' unknown, expected one of {', '.join(SCALES)}")
    for name in ("mesh_h", "alpha", "final_time"):
        if not getattr(config, name) > 0.0:
            problems.append(f"{name.upper()} must be positive, got {getattr(config, name)}")
    if config.delta < 0.0:
        problems.append(f"DELTA must be non-negative, got {config.delta}")
    for name in ("n_train", "n_max", "n_test", "n_steps", "jobs"):
        if getattr(config, name) < 1:
            problems.append(f"{name.upper()} must be at least 1, got {getattr(config, name)}")
    sizes = {len(config.param_lower), len(config.param_upper), len(config.beta_a), len(config.beta_b)}
    if sizes != {2}:
        problems.append("PARAM_LOWER, PARAM_UPPER, BETA_A and BETA_B need two entries each")
    elif any(b <= a for a, b in zip(config.param_lower, config.param_upper)):
        problems.append(f"PARAM_LOWER {config.param_lower} must be below PARAM_UPPER {config.param_upper}")
    elif any(s <= 0.0 for s in config.beta_a + config.beta_b):
        problems.append("Beta shapes must be positive")
    elif config.param_lower[0] <= 0.0:
        problems.append("mu1 must stay positive (PARAM_LOWER[0] > 0)")
    bad_rules = [rule for rule in config.rules if rule not in RULES]
    if bad_rules or not config.rules:
        problems.append(f"RULES {list(bad_rules) or '[]'} invalid, expected a subset of {', '.join(RULES)}")
    bad_modes = [mode for mode in config.modes if mode not in ONLINE_MODES]
    if bad_modes or not config.modes:
        problems.append(f"MODES {list(bad_modes) or '[]'} invalid, expected a subset of {', '.join(ONLINE_MODES)}")
    if problems:
        raise ConfigError(problems)
    return config


def _ambient(config: BenchmarkConfig) -> BenchmarkConfig:
    env_output = os.getenv("BENCH_OUTPUT_DIR")
    env_jobs = os.getenv("BENCH_JOBS")
    if env_output:
        config = replace(config, output_dir=env_output)
    if env_jobs:
        try:
            config = replace(config, jobs=int(env_jobs))
        except ValueError as e:
            raise ConfigError(f"BENCH_JOBS={env_jobs!r} is not an integer") from e
    return config


def resolve_config(problem: str | None, scale: str | None, path=None, **overrides) -> BenchmarkConfig:
    """
    Preset for (problem, scale), then ``BENCH_OUTPUT_DIR``/``BENCH_JOBS``, then the config file,
    then the command line overrides.
    """
    file_values = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file {path} does not exist")
        file_values = read_config_values(path.read_text(encoding="utf-8"))
        if problem is not None and file_values.get("problem", problem) != problem:
            raise ConfigError(f"--problem {problem} conflicts with PROBLEM={file_values['problem']} in {path}")
    problem = problem or file_values.get("problem")
    if problem is None:
        raise ConfigError("Either --problem or a config file with PROBLEM is required")
    scale = scale or file_values.get("scale", "desk")
    config = _ambient(preset(problem, scale))
    config = replace(config, **{**file_values, "problem": problem, "scale": scale})
    return apply_overrides(config, **overrides)
