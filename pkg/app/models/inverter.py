"""Inverter parameter banks and dynamic state.

A bank holds the parameters of several inverters of one kind as numpy arrays so
the primary controls of a whole fleet advance in one vectorised call; a bank of
size one is a single inverter.
"""
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from app.schemas.inverter import InverterParams

E_MIN = 0.5
E_MAX = 1.5


@dataclass
class InverterBank:
    ids: tuple[str, ...]
    rating: np.ndarray
    m_p: np.ndarray
    m_q: np.ndarray
    freq_droop: np.ndarray
    volt_droop: np.ndarray
    omega_nom: np.ndarray
    v_nom: np.ndarray
    q_nom: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    omega_f: np.ndarray
    kp_v: np.ndarray
    ki_v: np.ndarray
    kp_pll: np.ndarray
    ki_pll: np.ndarray
    tau_act: np.ndarray
    z_coupling: np.ndarray

    @classmethod
    def from_params(cls, params: Sequence[InverterParams]) -> "InverterBank":
        def col(attr: str) -> np.ndarray:
            return np.array([float(getattr(p, attr)) for p in params], dtype=float)

        return cls(
            ids=tuple(p.id for p in params),
            rating=col("rating_kw"),
            m_p=col("m_p"),
            m_q=col("m_q"),
            freq_droop=col("freq_droop"),
            volt_droop=col("volt_droop"),
            omega_nom=col("omega_nom"),
            v_nom=col("v_nom"),
            q_nom=col("q_nom"),
            p_min=col("p_min"),
            p_max=col("p_max"),
            q_min=col("q_min"),
            q_max=col("q_max"),
            omega_f=col("omega_f"),
            kp_v=col("kp_v"),
            ki_v=col("ki_v"),
            kp_pll=col("kp_pll"),
            ki_pll=col("ki_pll"),
            tau_act=col("tau_act"),
            z_coupling=np.array([complex(p.coupling_r, p.coupling_x) for p in params]),
        )

    def __len__(self) -> int:
        return len(self.ids)

    def index(self, inverter_id: str) -> int:
        return self.ids.index(inverter_id)


@dataclass
class GfmState:
    """Grid-forming state: internal source angle/magnitude, PI integrator, filters, setpoints."""

    delta: np.ndarray
    e: np.ndarray
    x_v: np.ndarray
    p_f: np.ndarray
    q_f: np.ndarray
    v_f: np.ndarray
    p_set: np.ndarray
    v_set: np.ndarray

    @classmethod
    def at_setpoint(cls, bank: InverterBank, p_set: np.ndarray, v_set: np.ndarray) -> "GfmState":
        """Zero-error state: filters at the droop setpoints, source at V_set and angle zero."""
        p_set = np.asarray(p_set, dtype=float).copy()
        v_set = np.asarray(v_set, dtype=float).copy()
        return cls(
            delta=np.zeros(len(bank)),
            e=v_set.copy(),
            x_v=v_set.copy(),
            p_f=p_set.copy(),
            q_f=bank.q_nom.copy(),
            v_f=v_set.copy(),
            p_set=p_set,
            v_set=v_set,
        )

    def copy(self) -> "GfmState":
        return replace(self, **{k: v.copy() for k, v in self.__dict__.items()})

    def omega(self, bank: InverterBank) -> np.ndarray:
        """P-f droop reference frequency (rad/s)."""
        return bank.omega_nom - bank.m_p * (self.p_f - self.p_set)

    def source(self) -> np.ndarray:
        return self.e * np.exp(1j * self.delta)


@dataclass
class GflState:
    """Grid-following state: PLL, filtered voltage, actuation-lagged delivered powers."""

    theta_pll: np.ndarray
    x_pll: np.ndarray
    omega: np.ndarray
    v_f: np.ndarray
    p_del: np.ndarray
    q_del: np.ndarray
    p_set: np.ndarray
    v_set: np.ndarray
    p_ref: np.ndarray = field(default=None)
    q_ref: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        if self.p_ref is None:
            self.p_ref = self.p_del.copy()
        if self.q_ref is None:
            self.q_ref = self.q_del.copy()

    @classmethod
    def at_setpoint(cls, bank: InverterBank, p_set: np.ndarray, v_set: np.ndarray) -> "GflState":
        p_set = np.asarray(p_set, dtype=float).copy()
        v_set = np.asarray(v_set, dtype=float).copy()
        return cls(
            theta_pll=np.zeros(len(bank)),
            x_pll=np.zeros(len(bank)),
            omega=bank.omega_nom.copy(),
            v_f=v_set.copy(),
            p_del=np.clip(p_set, bank.p_min, bank.p_max),
            q_del=np.clip(bank.q_nom, bank.q_min, bank.q_max),
            p_set=p_set,
            v_set=v_set,
        )

    def copy(self) -> "GflState":
        return replace(self, **{k: v.copy() for k, v in self.__dict__.items()})
