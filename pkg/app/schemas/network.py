"""Network description file schema.

A network file is JSON with the sections `buses`, `switches`, `lines`, `loads`,
`substations` and `inverters`, plus per-unit bases. Impedances are per-unit on
`s_base`/`v_base`; loads and inverter quantities are in kW/kvar.
"""
from enum import Enum
from pathlib import Path
from typing import Optional
import hashlib
import math

from pydantic import BaseModel, Field, ValidationError, model_validator

from app.core.errors import ScenarioValidationError, pointer_from_loc
from app.schemas.inverter import InverterParams

MIN_IMPEDANCE = 1e-6


class Bus(BaseModel):
    id: str
    v_nominal: float = Field(gt=0)


class Switch(BaseModel):
    name: str
    closed: bool = True


class Line(BaseModel):
    id: str
    from_bus: str
    to_bus: str
    r: float = Field(ge=0)
    x: float
    switch: Optional[str] = None

    @model_validator(mode="after")
    def _impedance(self) -> "Line":
        if math.hypot(self.r, self.x) < MIN_IMPEDANCE:
            raise ValueError(f"series impedance below {MIN_IMPEDANCE} pu")
        if self.from_bus == self.to_bus:
            raise ValueError("line endpoints must differ")
        return self

    @property
    def z(self) -> complex:
        return complex(self.r, self.x)


class LoadModel(str, Enum):
    CONSTANT_POWER = "constant_power"
    CONSTANT_IMPEDANCE = "constant_impedance"


class Load(BaseModel):
    id: str
    bus: str
    p_kw: float
    q_kvar: float = 0.0
    model: LoadModel = LoadModel.CONSTANT_POWER
    connectable: bool = True


class Substation(BaseModel):
    """Stiff grid source behind a small impedance; rotates at nominal frequency."""

    id: str
    bus: str
    voltage: float = Field(default=1.0, gt=0)
    angle: float = 0.0
    r: float = Field(default=0.0, ge=0)
    x: float = 1e-3

    @model_validator(mode="after")
    def _impedance(self) -> "Substation":
        if math.hypot(self.r, self.x) < MIN_IMPEDANCE:
            raise ValueError(f"source impedance below {MIN_IMPEDANCE} pu")
        return self


class NetworkModel(BaseModel):
    name: str = "network"
    s_base: float = Field(default=1.0e6, gt=0)
    v_base: float = Field(default=4160.0, gt=0)
    f_nom: float = Field(default=60.0, gt=0)
    buses: list[Bus]
    switches: list[Switch] = []
    lines: list[Line] = []
    loads: list[Load] = []
    substations: list[Substation] = []
    inverters: list[InverterParams] = []

    @model_validator(mode="after")
    def _references(self) -> "NetworkModel":
        bus_ids = [b.id for b in self.buses]
        if len(set(bus_ids)) != len(bus_ids):
            raise ValueError("duplicate bus id")
        known = set(bus_ids)
        switch_names = {s.name for s in self.switches}
        for line in self.lines:
            for end in (line.from_bus, line.to_bus):
                if end not in known:
                    raise ValueError(f"line {line.id} references unknown bus {end}")
            if line.switch is not None and line.switch not in switch_names:
                raise ValueError(f"line {line.id} references unknown switch {line.switch}")
        for item in [*self.loads, *self.substations, *self.inverters]:
            if item.bus not in known:
                raise ValueError(f"{item.id} references unknown bus {item.bus}")
        inv_ids = [i.id for i in self.inverters]
        if len(set(inv_ids)) != len(inv_ids):
            raise ValueError("duplicate inverter id")
        return self

    # --- helpers -----------------------------------------------------------

    @property
    def kw_per_pu(self) -> float:
        return self.s_base / 1e3

    def bus_index(self) -> dict[str, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    def default_switch_states(self) -> dict[str, bool]:
        return {s.name: s.closed for s in self.switches}

    def load(self, load_id: str) -> Load:
        for load in self.loads:
            if load.id == load_id:
                return load
        raise KeyError(load_id)


def load_network(path: Path) -> NetworkModel:
    """Read and validate a network file, turning pydantic errors into pointers."""
    try:
        return NetworkModel.model_validate_json(Path(path).read_text())
    except ValidationError as e:
        err = e.errors()[0]
        raise ScenarioValidationError(err["msg"], "network." + pointer_from_loc(err["loc"])) from e


def save_network(net: NetworkModel, path: Path) -> None:
    Path(path).write_text(net.model_dump_json(indent=2))


def network_hash(net: NetworkModel) -> str:
    return hashlib.sha256(net.model_dump_json().encode()).hexdigest()
