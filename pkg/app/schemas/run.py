"""Run requests and run manifests."""
from enum import Enum
from pathlib import Path
from typing import Any, Optional
import platform

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

import app
from app.schemas.network import NetworkModel, network_hash
from app.schemas.scenario import ControlMode, Scenario


class Subcommand(str, Enum):
    RUN = "run"
    LIBRARY = "library"
    SWEEP = "sweep"
    VALIDATE = "validate"
    COMPARE = "compare"


class RunRequest(BaseModel):
    """What a CLI invocation or an API call asks for, checked before anything runs."""

    model_config = ConfigDict(extra="forbid")

    subcommand: Subcommand = Subcommand.RUN
    scenarios: list[str] = Field(default_factory=list)
    out: Optional[Path] = None
    seed: Optional[int] = None
    mode: Optional[ControlMode] = None
    overrides: dict[str, str] = Field(default_factory=dict)
    workers: int = Field(default=1, ge=1)

    def override_map(self) -> dict[str, str]:
        """Overrides with --mode and --seed folded in as ordinary keys.

        The seed drives the random communication topology, so it is copied there too.
        """
        return override_map(self.overrides, self.mode, self.seed)


def override_map(overrides: dict[str, str], mode: Optional[ControlMode], seed: Optional[int]) -> dict[str, str]:
    out = dict(overrides)
    if mode is not None:
        out["mode"] = mode.value
    if seed is not None:
        out["seed"] = str(seed)
        out["topology.seed"] = str(seed)
    return out


class RunManifest(BaseModel):
    """Everything needed to reproduce a run byte for byte."""

    scenario: dict[str, Any]
    config_hash: str
    network: str
    network_hash: str
    seed: int
    versions: dict[str, str]

    @classmethod
    def build(cls, scenario: Scenario, network: NetworkModel) -> "RunManifest":
        return cls(
            scenario=scenario.model_dump(mode="json"),
            config_hash=scenario.config_hash(),
            network=scenario.network,
            network_hash=network_hash(network),
            seed=scenario.seed,
            versions={
                "package": app.__version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "pandas": pd.__version__,
            },
        )


class RunCreate(BaseModel):
    """Body of ``POST /api/v1/runs``."""

    model_config = ConfigDict(extra="forbid")

    case: Optional[str] = None
    scenario: Optional[Scenario] = None
    mode: Optional[ControlMode] = None
    seed: Optional[int] = None
    overrides: dict[str, str] = Field(default_factory=dict)
    include_timeseries: bool = False
    persist: bool = False
