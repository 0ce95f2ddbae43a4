"""Scenario file schema: control mode, gains, topology, events and step sizes."""
from enum import Enum
from pathlib import Path
from typing import Any, Optional
import hashlib
import json

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.core.errors import ScenarioValidationError, pointer_from_loc


class ControlMode(str, Enum):
    NO_CONTROL = "NoControl"
    UNCOORDINATED = "Uncoordinated"
    GFM_COORDINATED = "GfmCoordinated"
    FULLY_COORDINATED = "FullyCoordinated"


class EventKind(str, Enum):
    SWITCH_OPEN = "SwitchOpen"
    SWITCH_CLOSE = "SwitchClose"
    LOAD_DISCONNECT = "LoadDisconnect"
    LOAD_CHANGE = "LoadChange"
    PMAX_CHANGE = "PmaxChange"
    INVERTER_TRIP = "InverterTrip"
    INVERTER_RECONNECT = "InverterReconnect"
    COMM_LINK_FAIL = "CommLinkFail"
    COMM_LINK_RESTORE = "CommLinkRestore"


class Event(BaseModel):
    """A timed disturbance.

    `target` is a switch name, load id, inverter id, or a link written ``"4-7"``.
    `payload` carries numbers: ``p_max`` for PmaxChange, ``p_kw``/``q_kvar`` for
    LoadChange.
    """

    model_config = ConfigDict(extra="forbid")

    time: float = Field(ge=0)
    kind: EventKind
    target: str
    payload: dict[str, float] = {}

    @model_validator(mode="after")
    def _payload(self) -> "Event":
        if self.kind is EventKind.PMAX_CHANGE and "p_max" not in self.payload:
            raise ValueError("PmaxChange needs payload.p_max")
        if self.kind is EventKind.LOAD_CHANGE and "p_kw" not in self.payload:
            raise ValueError("LoadChange needs payload.p_kw")
        if self.kind in (EventKind.COMM_LINK_FAIL, EventKind.COMM_LINK_RESTORE):
            link_endpoints(self.target)
        return self


def link_endpoints(target: str) -> tuple[str, str]:
    parts = target.split("-")
    if len(parts) != 2 or not all(parts) or parts[0] == parts[1]:
        raise ValueError(f"link target must look like 'a-b', got {target!r}")
    return parts[0], parts[1]


class TopologyKind(str, Enum):
    COMPLETE = "complete"
    EMPTY = "empty"
    EDGES = "edges"
    RANDOM = "random"


class TopologySpec(BaseModel):
    """Communication graph: complete, empty, explicit edges, or random connected."""

    model_config = ConfigDict(extra="forbid")

    kind: TopologyKind = TopologyKind.COMPLETE
    edges: list[tuple[str, str]] = []
    links: Optional[int] = None
    seed: int = 0
    allow_disconnected: bool = False

    @model_validator(mode="after")
    def _shape(self) -> "TopologySpec":
        if self.kind is TopologyKind.RANDOM and self.links is None:
            raise ValueError("random topology needs `links`")
        return self


class GainsSpec(BaseModel):
    """Secondary gains.

    k_p defaults to ``kappa_p * m_p`` per inverter (rad/kW, so ``k_p/m_p`` is a
    time constant in seconds); k_q defaults per kind (seconds, since the var
    consensus works on pu voltages). Explicit per-inverter values override.
    """

    model_config = ConfigDict(extra="forbid")

    kappa_p: float = Field(default=0.06, gt=0)
    k_q_gfl: float = Field(default=0.12, gt=0)
    k_q_gfm: float = Field(default=0.64, gt=0)
    k_p: dict[str, float] = {}
    k_q: dict[str, float] = {}
    alpha: float = Field(default=1.0, ge=0)
    beta: float = Field(default=4.0, ge=0)
    # bound leader P_set to [P_min, P_max]; off means only delivered power saturates
    leader_anti_windup: bool = False

    @model_validator(mode="after")
    def _weights(self) -> "GainsSpec":
        if self.alpha + self.beta <= 0:
            raise ValueError("alpha + beta must be positive")
        for name, table in (("k_p", self.k_p), ("k_q", self.k_q)):
            if any(v <= 0 for v in table.values()):
                raise ValueError(f"{name} entries must be positive")
        return self


class Scenario(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    network: str = "reduced_feeder"
    mode: ControlMode = ControlMode.FULLY_COORDINATED
    gains: GainsSpec = GainsSpec()
    topology: TopologySpec = TopologySpec()
    events: list[Event] = []
    duration: float = Field(default=6.0, gt=0)
    dt: float = Field(default=1e-3, gt=0)
    dt_sec: float = Field(default=1e-2, gt=0)
    decimation: int = Field(default=10, ge=1)
    steady_window: float = Field(default=0.5, gt=0)
    seed: int = 0
    # per-inverter field overrides applied to the network's fleet, e.g. pre-dispatch
    fleet: dict[str, dict[str, float]] = {}
    description: str = ""

    @field_validator("events")
    @classmethod
    def _sorted(cls, events: list[Event]) -> list[Event]:
        # stable: simultaneous events keep their list order
        return sorted(events, key=lambda e: e.time)

    @model_validator(mode="after")
    def _steps(self) -> "Scenario":
        ratio = self.dt_sec / self.dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("dt_sec must be an integer multiple of dt")
        for k, ev in enumerate(self.events):
            if ev.time > self.duration:
                raise ValueError(f"event {k} at t={ev.time} is past the duration")
        return self

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def secondary_every(self) -> int:
        return int(round(self.dt_sec / self.dt))

    def event_times(self) -> list[float]:
        return sorted({e.time for e in self.events})

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def parse_scenario(data: dict[str, Any]) -> Scenario:
    try:
        return Scenario.model_validate(data)
    except ValidationError as e:
        err = e.errors()[0]
        raise ScenarioValidationError(err["msg"], pointer_from_loc(err["loc"])) from e


def load_scenario_file(path: Path) -> Scenario:
    """Load a scenario file, or the scenario embedded in a run manifest."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ScenarioValidationError(str(e), str(path)) from e
    if isinstance(data, dict) and "scenario" in data and "config_hash" in data:
        data = data["scenario"]
    return parse_scenario(data)


def apply_overrides(scenario: Scenario, overrides: dict[str, str]) -> Scenario:
    """Apply dotted ``key=value`` overrides and re-validate against the schema.

    Values are parsed as JSON when possible (numbers, booleans, lists), else kept
    as strings, so ``gains.alpha=2`` and ``mode=Uncoordinated`` both work.
    """
    data = scenario.model_dump(mode="json")
    for key, raw in overrides.items():
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ScenarioValidationError("unknown override key", key)
            node = node[part]
        if not isinstance(node, dict) or (parts[-1] not in node and node is data):
            raise ScenarioValidationError("unknown override key", key)
        node[parts[-1]] = value
    return parse_scenario(data)
