"""Inverter fleet schema (the `inverters` section of a network file)."""
from enum import Enum
import math

from pydantic import BaseModel, Field, model_validator


class InverterKind(str, Enum):
    GFM = "GFM"
    GFL = "GFL"


class InverterParams(BaseModel):
    """Ratings, droop curves, limits and control gains of one inverter.

    Droops are given as percentages of nominal over the unit rating and mapped
    to absolute gains:

        m_p = freq_droop * omega_nom / rating_kw      (rad/s per kW)
        m_q = volt_droop * v_nom / rating_kw          (pu per kvar)

    so "1 % frequency droop" means a full-rating power deviation moves the
    frequency by 1 % of nominal.
    """

    id: str
    kind: InverterKind
    bus: str
    rating_kw: float = Field(gt=0)
    freq_droop: float = Field(default=0.01, gt=0)
    volt_droop: float = Field(default=0.05, gt=0)
    f_nom: float = Field(default=60.0, gt=0)
    v_nom: float = Field(default=1.0, gt=0)

    # setpoints (pre-dispatch); secondary control moves p_set / v_set at runtime
    p_set: float = 0.0
    v_set: float = 1.0
    q_nom: float = 0.0

    p_min: float = 0.0
    p_max: float | None = None
    q_min: float | None = None
    q_max: float | None = None

    # coupling impedance behind which a GFM's internal source sits (pu, system base)
    coupling_r: float = Field(default=0.0, ge=0)
    coupling_x: float = 0.0

    omega_f: float = Field(default=2 * math.pi * 10.0, gt=0)
    kp_v: float = Field(default=0.25, ge=0)
    ki_v: float = Field(default=25.0, ge=0)
    kp_pll: float = Field(default=150.0, ge=0)
    ki_pll: float = Field(default=10000.0, ge=0)
    tau_act: float = Field(default=0.02, gt=0)

    @model_validator(mode="after")
    def _limits(self) -> "InverterParams":
        if self.p_max is None:
            self.p_max = self.rating_kw
        if self.q_max is None:
            self.q_max = 0.5 * self.rating_kw
        if self.q_min is None:
            self.q_min = -self.q_max
        if not self.p_min <= self.p_max <= self.rating_kw:
            raise ValueError("limits must satisfy p_min <= p_max <= rating_kw")
        if self.q_min > self.q_max:
            raise ValueError("q_min must not exceed q_max")
        if self.kind is InverterKind.GFM and math.hypot(self.coupling_r, self.coupling_x) <= 0:
            raise ValueError("grid-forming inverters need a non-zero coupling impedance")
        return self

    @property
    def omega_nom(self) -> float:
        return 2 * math.pi * self.f_nom

    @property
    def m_p(self) -> float:
        return self.freq_droop * self.omega_nom / self.rating_kw

    @property
    def m_q(self) -> float:
        return self.volt_droop * self.v_nom / self.rating_kw

    @property
    def is_gfm(self) -> bool:
        return self.kind is InverterKind.GFM
