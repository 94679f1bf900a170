"""Flat key-value experiment configuration (YAML syntax, one ``key: value`` per line).

Every error names the offending line so a broken config is quick to fix.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .consistency import KINDS, RegressorSpec
from .flow import FlowConfig

DATA_DIR = Path(__file__).parent / "data"
DEFAULT_CONFIG = DATA_DIR / "default.yaml"
METRICS = ("sliced", "assignment", "auto")


class ConfigError(ValueError):
    def __init__(self, message: str, source=None, line: int | None = None):
        where = ""
        if source is not None:
            where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)
        self.line = line


@dataclass
class ExperimentConfig:
    target: str = str(DATA_DIR / "two_atoms.yaml")
    T: int = 64
    T_list: list = field(default_factory=lambda: [16, 32, 64, 128])
    c0: float = 2.0
    c1: float = 4.0
    regressor: str = "exact_oracle"
    k: int = 32
    bandwidth: float | None = None
    training_batch: int = 10_000
    ridge: float = 0.0
    grid_size: int = 65_537
    n_samples: int = 20_000
    assignment_n: int = 512
    metric: str = "sliced"
    n_projections: int = 256
    floor_replicates: int = 4
    substeps: int = 8
    integrator: str = "rk4"
    check_substeps: int = 32
    check_n: int = 10_000
    lipschitz_points: int = 10
    eps_eval_n: int = 1_000
    eps_fraction: float = 0.5
    common_random_numbers: bool = True
    c3: float = 10.0
    c4: float = 10.0
    stack: str | None = None
    seed: int = 0
    out: str = "out"
    workers: int = 1

    def regressor_spec(self) -> RegressorSpec:
        return RegressorSpec(kind=self.regressor, k=self.k, bandwidth=self.bandwidth,
                             training_batch=self.training_batch, ridge=self.ridge, grid_size=self.grid_size)

    def flow_config(self) -> FlowConfig:
        return FlowConfig(self.substeps, self.integrator)

    def stack_path(self) -> Path:
        return Path(self.stack) if self.stack else Path(self.out) / "stack.npz"

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT = {"T", "k", "training_batch", "grid_size", "n_samples", "assignment_n", "n_projections", "floor_replicates",
        "substeps", "check_substeps", "check_n", "lipschitz_points", "eps_eval_n", "seed", "workers"}
_FLOAT = {"c0", "c1", "ridge", "eps_fraction", "c3", "c4"}


def _coerce(key, value):
    if key in _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"{key} must be an integer, got {value!r}")
        return value
    if key in _FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"{key} must be a number, got {value!r}")
        return float(value)
    if key == "bandwidth":
        return None if value is None else float(value)
    if key == "T_list":
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise TypeError("T_list must be a list of integers, e.g. [16, 32, 64]")
        return list(value)
    if key == "common_random_numbers":
        if not isinstance(value, bool):
            raise TypeError("common_random_numbers must be true or false")
        return value
    if value is None:
        return None
    if not isinstance(value, str):
        raise TypeError(f"{key} must be a string, got {value!r}")
    return value


def validate(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    """Return ``(key, problem)`` pairs; empty when the config is usable."""
    problems = []
    if cfg.T < 1:
        problems.append(("T", "T must be >= 1"))
    if any(b <= a for a, b in zip(cfg.T_list, cfg.T_list[1:])):
        problems.append(("T_list", "T_list must be strictly increasing"))
    if any(t < 1 for t in cfg.T_list):
        problems.append(("T_list", "every T must be >= 1"))
    if cfg.regressor not in KINDS:
        problems.append(("regressor", f"regressor must be one of {KINDS}"))
    if cfg.metric not in METRICS:
        problems.append(("metric", f"metric must be one of {METRICS}"))
    if cfg.workers < 1:
        problems.append(("workers", "workers must be >= 1"))
    if cfg.n_samples < 0:
        problems.append(("n_samples", "n_samples must be >= 0"))
    if not (cfg.c3 > 0 and cfg.c4 > 0):
        problems.append(("c3" if cfg.c3 <= 0 else "c4", "c3 and c4 must be positive"))
    if not Path(cfg.target).is_file():
        problems.append(("target", f"target file not found: {cfg.target}"))
    for key, build in (("substeps", cfg.flow_config), ("regressor", cfg.regressor_spec)):
        try:
            build()
        except ValueError as exc:
            problems.append((key, str(exc)))
    return problems


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Parse a config file (the bundled default when ``path`` is None) and apply overrides."""
    path = Path(DEFAULT_CONFIG if path is None else path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(f"parse error: {exc.problem}", path, mark.line + 1 if mark else None) from None
    if data is None:
        data, lines = {}, {}
    elif not isinstance(data, dict):
        raise ConfigError("config must be a flat mapping of key: value lines", path, 1)
    else:
        lines = {k.value: k.start_mark.line + 1 for k, _ in root.value}

    values = {}
    for key, value in data.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}", path, lines.get(key))
        try:
            values[key] = _coerce(key, value)
        except TypeError as exc:
            raise ConfigError(str(exc), path, lines.get(key)) from None
    if "target" in values and values["target"] is not None and not Path(values["target"]).is_absolute():
        values["target"] = str(path.parent / values["target"])
    if values.get("stack") and not Path(values["stack"]).is_absolute():
        values["stack"] = str(path.parent / values["stack"])
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    cfg = ExperimentConfig(**values)
    problems = validate(cfg)
    if problems:
        key, msg = problems[0]
        raise ConfigError(msg, path, lines.get(key))
    return cfg
