"""Service configuration: JSON file plus environment overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional

from ..errors import ParameterError
from ..shapley import DEFAULT_BACKGROUND_CAP, DEFAULT_EVAL_BUDGET

_ENV_OVERRIDES = {
    "SHAPSCAN_DATA_DIR": ("data_dir", str),
    "SHAPSCAN_HOST": ("host", str),
    "SHAPSCAN_PORT": ("port", int),
    "SHAPSCAN_UI_DIR": ("ui_dir", str),
    "SHAPSCAN_EVAL_BUDGET": ("eval_budget", int),
    "SHAPSCAN_BACKGROUND_CAP": ("background_cap", int),
}


@dataclass
class ServiceConfig:
    data_dir: str = "data"
    host: str = "127.0.0.1"
    port: int = 8470
    ui_dir: Optional[str] = None
    eval_budget: int = DEFAULT_EVAL_BUDGET
    background_cap: int = DEFAULT_BACKGROUND_CAP
    detect_threshold: float = 0.5
    detect_min_area: int = 4
    measure_threshold: float = 0.5
    default_gx: int = 4
    default_gy: int = 4
    default_chi: int = 4
    # Explanation target: a predictor spec template; grid-sized kinds get
    # their arity filled in per request.
    model_spec: dict = field(default_factory=lambda: {"kind": "threshold-blob"})
    background: dict = field(default_factory=lambda: {"mode": "blur", "sigma": 2.0})


def load_config(path=None, env: Optional[Mapping[str, str]] = None) -> ServiceConfig:
    """Build a ServiceConfig from an optional JSON file, then apply env overrides."""
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ParameterError(f"config file not found: {p}")
        try:
            loaded = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ParameterError(f"config file is not valid JSON: {exc}") from exc
        known = {f.name for f in fields(ServiceConfig)}
        unknown = set(loaded) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    env = os.environ if env is None else env
    for var, (key, cast) in _ENV_OVERRIDES.items():
        if var in env:
            try:
                values[key] = cast(env[var])
            except ValueError as exc:
                raise ParameterError(f"bad value for {var}: {env[var]!r}") from exc
    return ServiceConfig(**values)
