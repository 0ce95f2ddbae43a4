"""Primary controls of grid-forming and grid-following inverters.

All controller ODEs advance with a fixed-step RK4 while the network quantities
(terminal voltage, measured power) are held at the values of the last network
solve. Every function works on banks, so a single inverter is a bank of one.

Angles are relative to a reference frame rotating at nominal frequency.
"""
from dataclasses import replace
from typing import Callable

import numpy as np

from app.models.inverter import E_MAX, E_MIN, GflState, GfmState, InverterBank

PLL_MIN_VOLTAGE = 0.1


def rk4(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of y' = f(y) (autonomous, inputs frozen)."""
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def lpf_update(y, u, omega_f, dt: float):
    """First-order lag y' = omega_f (u - y) over one step.

    RK4 applied to a linear ODE reduces to the fourth-order Taylor factor below,
    so this matches what the bank integrators do to their filter states.
    """
    a = np.asarray(omega_f) * dt
    factor = a - a**2 / 2.0 + a**3 / 6.0 - a**4 / 24.0
    return y + factor * (u - y)


def _pll_rates(bank: InverterBank, phase: np.ndarray, theta: np.ndarray, x: np.ndarray):
    v_q = np.sin(phase - theta)
    return bank.kp_pll * v_q + x, bank.ki_pll * v_q


def pll_update(bank: InverterBank, state: GflState, v_bus: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance the PLL: returns (theta_pll, x_pll, omega).

    The q-axis voltage of the normalised bus phasor is driven to zero by a PI;
    the frequency estimate is the mean rotation rate of the PLL angle over the
    step. Below 0.1 pu the estimate freezes and the angle keeps rotating at the
    last frequency.
    """
    v_bus = np.asarray(v_bus, dtype=complex)
    phase = np.angle(v_bus)
    locked = np.abs(v_bus) > PLL_MIN_VOLTAGE

    def f(y: np.ndarray) -> np.ndarray:
        d_theta, d_x = _pll_rates(bank, phase, y[0], y[1])
        return np.stack([d_theta, d_x])

    y = rk4(f, np.stack([state.theta_pll, state.x_pll]), dt)
    theta = np.where(locked, y[0], state.theta_pll + (state.omega - bank.omega_nom) * dt)
    x = np.where(locked, y[1], state.x_pll)
    omega = np.where(locked, bank.omega_nom + (theta - state.theta_pll) / dt, state.omega)
    return theta, x, omega


def gfl_references(bank: InverterBank, omega, v_f, p_set, v_set):
    """Freq/watt and volt/var droop references, before saturation."""
    p_ref = p_set + (bank.omega_nom - omega) / bank.m_p
    q_ref = bank.q_nom + (v_set - v_f) / bank.m_q
    return p_ref, q_ref


def gfl_primary_step(
    bank: InverterBank, state: GflState, v_bus: np.ndarray, dt: float, active: np.ndarray | None = None
) -> tuple[GflState, np.ndarray]:
    """Advance grid-following inverters one step.

    Returns the new state and the delivered complex power (kW + j kvar) each
    inverter injects at its terminal. Inactive (disconnected) units keep their
    state and inject nothing.
    """
    v_bus = np.asarray(v_bus, dtype=complex)
    if active is None:
        active = np.ones(len(bank), dtype=bool)
    vmag = np.abs(v_bus)
    phase = np.angle(v_bus)
    locked = vmag > PLL_MIN_VOLTAGE
    frozen_rate = state.omega - bank.omega_nom

    def f(y: np.ndarray) -> np.ndarray:
        theta, x, v_f, p_del, q_del = y
        d_theta, d_x = _pll_rates(bank, phase, theta, x)
        omega = bank.omega_nom + d_theta
        d_theta = np.where(locked, d_theta, frozen_rate)
        d_x = np.where(locked, d_x, 0.0)
        omega = np.where(locked, omega, state.omega)
        p_ref, q_ref = gfl_references(bank, omega, v_f, state.p_set, state.v_set)
        p_cmd = np.clip(p_ref, bank.p_min, bank.p_max)
        q_cmd = np.clip(q_ref, bank.q_min, bank.q_max)
        return np.stack([
            d_theta,
            d_x,
            bank.omega_f * (vmag - v_f),
            (p_cmd - p_del) / bank.tau_act,
            (q_cmd - q_del) / bank.tau_act,
        ])

    y0 = np.stack([state.theta_pll, state.x_pll, state.v_f, state.p_del, state.q_del])
    y = rk4(f, y0, dt)
    y = np.where(active, y, y0)
    theta, x, v_f, p_del, q_del = y
    omega = np.where(locked, bank.omega_nom + (theta - state.theta_pll) / dt, state.omega)
    omega = np.where(active, omega, state.omega)
    p_ref, q_ref = gfl_references(bank, omega, v_f, state.p_set, state.v_set)
    # the lag is a convex combination of clamped commands, so this only trims rounding
    p_del = np.where(active, np.clip(p_del, bank.p_min, bank.p_max), 0.0)
    q_del = np.where(active, np.clip(q_del, bank.q_min, bank.q_max), 0.0)
    new = replace(state, theta_pll=theta, x_pll=x, omega=omega, v_f=v_f,
                  p_del=p_del, q_del=q_del, p_ref=p_ref, q_ref=q_ref)
    return new, p_del + 1j * q_del


def _voltage_pi(bank: InverterBank, x_v, q_f, v_f, v_set):
    v_ref = v_set - bank.m_q * (q_f - bank.q_nom)
    err = v_ref - v_f
    return err, x_v + bank.kp_v * err


def gfm_primary_step(
    bank: InverterBank,
    state: GfmState,
    v_terminal: np.ndarray,
    p_meas: np.ndarray,
    q_meas: np.ndarray,
    dt: float,
    active: np.ndarray | None = None,
) -> tuple[GfmState, np.ndarray]:
    """Advance grid-forming inverters one step.

    P-f droop sets the source frequency from filtered power; Q-V droop sets a
    terminal voltage reference that a PI tracks by moving the internal EMF. The
    PI integrator holds while its output sits on the [0.5, 1.5] pu clamp.
    Returns the new state and the internal source phasors E∠δ (pu).
    """
    if active is None:
        active = np.ones(len(bank), dtype=bool)
    vmag = np.abs(np.asarray(v_terminal, dtype=complex))
    p_meas = np.asarray(p_meas, dtype=float)
    q_meas = np.asarray(q_meas, dtype=float)

    def f(y: np.ndarray) -> np.ndarray:
        delta, x_v, p_f, q_f, v_f = y
        omega_ref = bank.omega_nom - bank.m_p * (p_f - state.p_set)
        err, e_raw = _voltage_pi(bank, x_v, q_f, v_f, state.v_set)
        wound = ((e_raw >= E_MAX) & (err > 0)) | ((e_raw <= E_MIN) & (err < 0))
        return np.stack([
            omega_ref - bank.omega_nom,
            np.where(wound, 0.0, bank.ki_v * err),
            bank.omega_f * (p_meas - p_f),
            bank.omega_f * (q_meas - q_f),
            bank.omega_f * (vmag - v_f),
        ])

    y0 = np.stack([state.delta, state.x_v, state.p_f, state.q_f, state.v_f])
    y = rk4(f, y0, dt)
    y = np.where(active, y, y0)
    delta, x_v, p_f, q_f, v_f = y
    _, e_raw = _voltage_pi(bank, x_v, q_f, v_f, state.v_set)
    e = np.where(active, np.clip(e_raw, E_MIN, E_MAX), state.e)
    new = replace(state, delta=delta, e=e, x_v=x_v, p_f=p_f, q_f=q_f, v_f=v_f)
    return new, new.source()
