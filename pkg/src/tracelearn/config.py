"""Detector configuration loaded from YAML and overridden by CLI flags."""

from pathlib import Path
from typing import Any

import yaml
from pydantic import BaseModel, ConfigDict, Field

from .monitor import MonitorMode
from .training import DEFAULT_ABSOLUTE_SLACK, DEFAULT_R2_THRESHOLD, DEFAULT_TOLERANCE_FACTOR


class DetectorConfig(BaseModel):
    """Thresholds, tolerances and monitor settings shared by train, monitor and evaluate."""

    model_config = ConfigDict(extra="forbid")

    r2_threshold: float = Field(default=DEFAULT_R2_THRESHOLD, ge=0, le=1)
    tolerance_factor: float = Field(default=DEFAULT_TOLERANCE_FACTOR, ge=0)
    absolute_slack: float = Field(default=DEFAULT_ABSOLUTE_SLACK, ge=0)
    mode: MonitorMode = MonitorMode.END_OF_RUN
    period: float = Field(default=60.0, gt=0)
    flag_unknown: bool = True
    seed: int = 0
    endpoint: str | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "DetectorConfig":
        """Load configuration from a YAML file."""
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        return cls(**data)

    @classmethod
    def resolve(cls, path: str | Path | None, **overrides: Any) -> "DetectorConfig":
        """File values (or defaults) with every non-None override applied on top."""
        base = cls.from_file(path) if path else cls()
        updates = {key: value for key, value in overrides.items() if value is not None}
        return cls(**{**base.model_dump(), **updates})
