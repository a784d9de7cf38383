#!/usr/bin/env python3
"""
Run Configuration Manager
Loads the key = value experiment manifest and layers environment and
command-line overrides on top of the built-in defaults
"""

import logging
import os
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from CatMiner.errors import UsageError
from CatMiner.svm import DEFAULT_CACHE_ROWS, DEFAULT_GAMMA_VALUES, DEFAULT_MAX_ITER, DEFAULT_NU_VALUES, DEFAULT_TOL

logger = logging.getLogger(__name__)

ENV_PREFIX = "CATMINER_"


class RunConfig(BaseModel):
    """Effective settings of one pipeline run"""

    model_config = ConfigDict(extra="forbid")

    corpus_paths: List[str] = Field(default_factory=list)
    units_path: Optional[str] = None
    seed: int = 7
    test_fraction: float = Field(0.25, gt=0.0, lt=1.0)
    subfiles: int = Field(10, ge=1)
    folds: int = Field(5, ge=2)
    nu_values: List[float] = Field(default_factory=lambda: list(DEFAULT_NU_VALUES), min_length=1)
    gamma_values: List[float] = Field(default_factory=lambda: list(DEFAULT_GAMMA_VALUES), min_length=1)
    refine_grid: bool = True
    combos: str = "all"
    selection_rule: Literal["max", "sum"] = "max"
    evaluators: int = Field(9, ge=1)
    jobs: int = Field(1, ge=1)
    dedupe: bool = False
    tol: float = Field(DEFAULT_TOL, gt=0.0)
    max_iter: int = Field(DEFAULT_MAX_ITER, ge=1)
    cache_rows: int = Field(DEFAULT_CACHE_ROWS, ge=2)

    @field_validator("corpus_paths", "nu_values", "gamma_values", mode="before")
    @classmethod
    def _split_lists(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()]
        return value


class RunConfigManager:
    """Manages the experiment manifest (key = value lines, '#' comments)"""

    def __init__(self, config_file: Optional[str] = None):
        self.config_file = config_file
        self.file_values: Dict[str, str] = {}
        if config_file:
            self.load_config()

    def load_config(self):
        """Load key = value pairs from the manifest file"""
        values = {}
        try:
            with open(self.config_file, "r", encoding="utf-8") as f:
                lines = f.readlines()
        except OSError as e:
            raise UsageError(f"cannot read config file {self.config_file}: {e}") from e

        for number, raw_line in enumerate(lines, start=1):
            line = raw_line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{self.config_file}:{number}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in RunConfig.model_fields:
                raise UsageError(f"{self.config_file}:{number}: unknown setting '{key}'")
            values[key] = value
        self.file_values = values
        logger.info(f"Loaded {len(values)} settings from {self.config_file}")

    def environment_values(self) -> Dict[str, str]:
        """Settings given as CATMINER_<KEY> environment variables"""
        values = {}
        for key in RunConfig.model_fields:
            value = os.environ.get(f"{ENV_PREFIX}{key.upper()}")
            if value is not None:
                values[key] = value
        return values

    def build(self, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
        """Defaults < config file < environment < command-line flags"""
        merged: Dict[str, Any] = {}
        merged.update(self.file_values)
        merged.update(self.environment_values())
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        try:
            return RunConfig.model_validate(merged)
        except ValidationError as e:
            first = e.errors()[0]
            location = ".".join(str(part) for part in first["loc"])
            raise UsageError(f"invalid setting {location}: {first['msg']}") from e

    @staticmethod
    def render(config: RunConfig) -> str:
        lines = []
        for key, value in config.model_dump().items():
            if isinstance(value, list):
                value = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif value is None:
                continue
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def save_config(self, config: RunConfig, path: str):
        """Write the effective configuration next to a stage's artifacts"""
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.render(config))
        logger.info(f"Saved run configuration to {path}")


run_config_manager = RunConfigManager()
