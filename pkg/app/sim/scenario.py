"""Event-driven simulation driver.

Each primary step of ``dt``:

1. apply every event due at this time, in list order;
2. re-island when the switch configuration or the set of in-service
   grid-forming units changed (admittances are cached per configuration);
3. solve the network for the current source EMFs and injections;
4. record (every ``decimation`` steps, values at ``t``);
5. advance all primary controls with RK4;
6. every ``dt_sec`` run one secondary (consensus) update.

Islands holding a substation are grid-connected. Their inverters start at an
exact steady state and keep their setpoints frozen; secondary control acts only
on inverters in islands without a stiff source, so it engages on islanding.
"""
from dataclasses import replace
from typing import Optional
import logging

import numpy as np
import pandas as pd

from app.core.errors import ConfigurationError, ScenarioValidationError, SolverDivergenceError
from app.models.comm_graph import CommGraph
from app.models.inverter import E_MAX, E_MIN, GflState, GfmState, InverterBank
from app.models.record import RecordBuffer, TimeSeriesRecord
from app.schemas.inverter import InverterParams
from app.schemas.network import NetworkModel
from app.schemas.scenario import ControlMode, Event, EventKind, Scenario, link_endpoints
from app.sim import consensus, inverters, metrics
from app.sim.library import resolve_network
from app.sim.network import Source, Topology, compile_topology, load_vectors, solve_island, solve_network

logger = logging.getLogger(__name__)

INIT_TOL = 1e-12
INIT_MAX_ITER = 200


def resolve_fleet(network: NetworkModel, overrides: dict[str, dict[str, float]]) -> list[InverterParams]:
    """Network fleet with the scenario's per-inverter field overrides applied and re-validated."""
    known = {inv.id for inv in network.inverters}
    fleet = []
    for inv in network.inverters:
        update = overrides.get(inv.id)
        if not update:
            fleet.append(inv)
            continue
        data = inv.model_dump()
        for key in update:
            if key not in data:
                raise ScenarioValidationError(f"unknown inverter field {key!r}", f"fleet.{inv.id}.{key}")
        data.update(update)
        if "rating_kw" in update and "p_max" not in update:
            data["p_max"] = None
        try:
            fleet.append(InverterParams.model_validate(data))
        except ValueError as e:
            raise ScenarioValidationError(str(e), f"fleet.{inv.id}") from e
    unknown = set(overrides) - known
    if unknown:
        raise ScenarioValidationError("unknown inverter", f"fleet.{sorted(unknown)[0]}")
    return fleet


def validate_events(scenario: Scenario, network: NetworkModel, graph: CommGraph, fleet: list[InverterParams]) -> None:
    """Reject events whose target does not exist before anything runs."""
    switches = {s.name for s in network.switches}
    loads = {ld.id: ld for ld in network.loads}
    by_id = {p.id: p for p in fleet}
    for k, ev in enumerate(scenario.events):
        where = f"events[{k}].target"
        if ev.kind in (EventKind.SWITCH_OPEN, EventKind.SWITCH_CLOSE):
            if ev.target not in switches:
                raise ScenarioValidationError(f"unknown switch {ev.target!r}", where)
        elif ev.kind in (EventKind.LOAD_DISCONNECT, EventKind.LOAD_CHANGE):
            if ev.target not in loads:
                raise ScenarioValidationError(f"unknown load {ev.target!r}", where)
            if ev.kind is EventKind.LOAD_DISCONNECT and not loads[ev.target].connectable:
                raise ScenarioValidationError(f"load {ev.target!r} is not connectable", where)
        elif ev.kind in (EventKind.PMAX_CHANGE, EventKind.INVERTER_TRIP, EventKind.INVERTER_RECONNECT):
            if ev.target not in by_id:
                raise ScenarioValidationError(f"unknown inverter {ev.target!r}", where)
            if ev.kind is EventKind.PMAX_CHANGE:
                p = by_id[ev.target]
                if not p.p_min <= ev.payload["p_max"] <= p.rating_kw:
                    raise ScenarioValidationError("p_max must lie within [p_min, rating_kw]", f"events[{k}].payload.p_max")
        else:
            a, b = link_endpoints(ev.target)
            if a not in by_id or b not in by_id:
                raise ScenarioValidationError(f"unknown inverter in link {ev.target!r}", where)
            if not graph.has_link(a, b):
                raise ScenarioValidationError(f"no communication link {ev.target!r}", where)


def build_graph(scenario: Scenario, fleet: list[InverterParams]) -> CommGraph:
    try:
        return consensus.build_topology(scenario.topology, [p.id for p in fleet])
    except ConfigurationError as e:
        raise ScenarioValidationError(str(e), "topology") from e


def validate_scenario(scenario: Scenario, network: NetworkModel) -> None:
    """Every statically detectable problem, raised before a run starts."""
    fleet = resolve_fleet(network, scenario.fleet)
    graph = build_graph(scenario, fleet)
    try:
        consensus.resolve_gains(scenario.gains, fleet, scenario.dt_sec)
    except ConfigurationError as e:
        raise ScenarioValidationError(str(e), "gains") from e
    validate_events(scenario, network, graph, fleet)


class Simulation:
    """One scenario run over one network. Owns all mutable state of the run."""

    def __init__(self, scenario: Scenario, network: NetworkModel):
        validate_scenario(scenario, network)
        self.scenario = scenario
        self.network = network
        self.fleet = resolve_fleet(network, scenario.fleet)
        self.ids = [p.id for p in self.fleet]
        self.is_gfm = np.array([p.is_gfm for p in self.fleet])
        self.gfm_idx = np.nonzero(self.is_gfm)[0]
        self.gfl_idx = np.nonzero(~self.is_gfm)[0]
        self.gfm_bank = InverterBank.from_params([self.fleet[k] for k in self.gfm_idx])
        self.gfl_bank = InverterBank.from_params([self.fleet[k] for k in self.gfl_idx])

        order = network.bus_index()
        self.inv_bus = np.array([order[p.bus] for p in self.fleet], dtype=int)
        self.sub_sources = [
            Source(bus=order[s.bus], e=s.voltage * np.exp(1j * s.angle), z=complex(s.r, s.x))
            for s in network.substations
        ]

        self.graph = build_graph(scenario, self.fleet)
        self.gains = consensus.resolve_gains(scenario.gains, self.fleet, scenario.dt_sec)

        self.switches = network.default_switch_states()
        self.load_p = np.array([ld.p_kw for ld in network.loads], dtype=float)
        self.load_q = np.array([ld.q_kvar for ld in network.loads], dtype=float)
        self.load_on = np.ones(len(network.loads), dtype=bool)
        self.connected = np.ones(len(self.fleet), dtype=bool)

        self._topologies: dict[tuple, Topology] = {}
        self._topo_key: Optional[tuple] = None
        self.topo = self._topology()
        self.v = np.ones(len(network.buses), dtype=complex)
        self.gfm, self.gfl = self._initial_state()

    # --- topology ------------------------------------------------------------

    def _topology(self) -> Topology:
        down = frozenset(self.ids[k] for k in self.gfm_idx if not self.connected[k])
        key = (tuple(sorted(self.switches.items())), down)
        if key not in self._topologies:
            self._topologies[key] = compile_topology(self.network, self.switches, down)
        topo = self._topologies[key]
        if key != self._topo_key:
            self._topo_key = key
            logger.info(
                "islands: %s",
                "; ".join(f"{isl.index}:{','.join(isl.inverters) or '-'}{' (grid)' if isl.grid_connected else ''}"
                          for isl in topo.islands),
            )
        return topo

    def _island_of(self, topo: Topology) -> np.ndarray:
        return topo.bus_island[self.inv_bus]

    def _energized(self, topo: Topology) -> np.ndarray:
        return np.array([topo.islands[k].energized for k in self._island_of(topo)], dtype=bool)

    def _grid_tied(self, topo: Topology) -> np.ndarray:
        return np.array([topo.islands[k].grid_connected for k in self._island_of(topo)], dtype=bool)

    # --- initialisation --------------------------------------------------------

    def _initial_state(self) -> tuple[GfmState, GflState]:
        p_set = np.array([p.p_set for p in self.fleet])
        v_set = np.array([p.v_set for p in self.fleet])
        gfm = GfmState.at_setpoint(self.gfm_bank, p_set[self.gfm_idx], v_set[self.gfm_idx])
        gfl = GflState.at_setpoint(self.gfl_bank, p_set[self.gfl_idx], v_set[self.gfl_idx])
        for isl, y, members in zip(self.topo.islands, self.topo.admittances, self.topo.members):
            if isl.grid_connected:
                gfm, gfl = self._grid_equilibrium(y, members, gfm, gfl)
        return gfm, gfl

    def _grid_equilibrium(self, y, members, gfm: GfmState, gfl: GflState) -> tuple[GfmState, GflState]:
        """Exact steady state of a grid-tied island: every unit at P_set and on its Q-V droop.

        Fixed point over the droop Q targets with a Newton power flow in which
        the inverters are PQ injections and the substation is the only source.
        Grid-forming EMFs are then back-computed through the coupling impedance.
        """
        kw = self.network.kw_per_pu
        local = {int(g): k for k, g in enumerate(members)}
        sources = [replace(s, bus=local[s.bus]) for s in self.sub_sources if s.bus in local]
        in_isl = np.array([self.inv_bus[k] in local for k in range(len(self.fleet))])
        gi = [j for j, k in enumerate(self.gfm_idx) if in_isl[k]]
        fi = [j for j, k in enumerate(self.gfl_idx) if in_isl[k]]
        gb, fb = self.gfm_bank, self.gfl_bank

        demand, shunts = load_vectors(self.network, self.load_p, self.load_q, self.load_on)
        bus_g = np.array([local[self.inv_bus[self.gfm_idx[j]]] for j in gi], dtype=int)
        bus_f = np.array([local[self.inv_bus[self.gfl_idx[j]]] for j in fi], dtype=int)
        p_g = gfm.p_set[gi]
        p_f = np.clip(gfl.p_set[fi], fb.p_min[fi], fb.p_max[fi])
        q_g = gb.q_nom[gi].copy()
        q_f = np.clip(fb.q_nom[fi], fb.q_min[fi], fb.q_max[fi])
        v = np.ones(len(members), dtype=complex)
        for it in range(INIT_MAX_ITER):
            inj = -demand[members]
            np.add.at(inj, bus_g, (p_g + 1j * q_g) / kw)
            np.add.at(inj, bus_f, (p_f + 1j * q_f) / kw)
            sol = solve_island(y, sources, inj, shunts[members], v0=v, tol=INIT_TOL, max_iter=INIT_MAX_ITER)
            v = sol.v
            q_g_new = gb.q_nom[gi] + (gfm.v_set[gi] - np.abs(v[bus_g])) / gb.m_q[gi]
            q_f_new = np.clip(fb.q_nom[fi] + (gfl.v_set[fi] - np.abs(v[bus_f])) / fb.m_q[fi], fb.q_min[fi], fb.q_max[fi])
            step = max(np.max(np.abs(q_g_new - q_g), initial=0.0), np.max(np.abs(q_f_new - q_f), initial=0.0))
            q_g, q_f = q_g_new, q_f_new
            if step < INIT_TOL * kw:
                break
        else:
            raise SolverDivergenceError(step / kw, INIT_MAX_ITER, 0.0)
        logger.info("grid-connected operating point found after %d droop iterations", it + 1)
        # final solve with the converged targets
        inj = -demand[members]
        np.add.at(inj, bus_g, (p_g + 1j * q_g) / kw)
        np.add.at(inj, bus_f, (p_f + 1j * q_f) / kw)
        v = solve_island(y, sources, inj, shunts[members], v0=v, tol=INIT_TOL, max_iter=INIT_MAX_ITER).v
        self.v[members] = v

        gfm, gfl = gfm.copy(), gfl.copy()
        if gi:
            vt = v[bus_g]
            current = np.conj((p_g + 1j * q_g) / kw / vt)
            e = vt + gb.z_coupling[gi] * current
            if np.any(np.abs(e) < E_MIN) or np.any(np.abs(e) > E_MAX):
                raise ConfigurationError("pre-dispatch needs a grid-forming EMF outside [0.5, 1.5] pu")
            gfm.delta[gi] = np.angle(e)
            gfm.e[gi] = np.abs(e)
            gfm.x_v[gi] = np.abs(e)
            gfm.p_f[gi] = p_g
            gfm.q_f[gi] = q_g
            gfm.v_f[gi] = np.abs(vt)
        if fi:
            vt = v[bus_f]
            gfl.theta_pll[fi] = np.angle(vt)
            gfl.x_pll[fi] = 0.0
            gfl.omega[fi] = fb.omega_nom[fi]
            gfl.v_f[fi] = np.abs(vt)
            gfl.p_del[fi] = p_f
            gfl.q_del[fi] = q_f
            gfl.p_ref[fi] = gfl.p_set[fi]
            gfl.q_ref[fi] = fb.q_nom[fi] + (gfl.v_set[fi] - np.abs(vt)) / fb.m_q[fi]
        return gfm, gfl

    # --- events ----------------------------------------------------------------

    def apply_event(self, ev: Event) -> None:
        logger.info("t=%.3fs %s %s", ev.time, ev.kind.value, ev.target)
        kind = ev.kind
        if kind is EventKind.SWITCH_OPEN:
            self.switches[ev.target] = False
        elif kind is EventKind.SWITCH_CLOSE:
            self.switches[ev.target] = True
        elif kind is EventKind.LOAD_DISCONNECT:
            self.load_on[self._load_index(ev.target)] = False
        elif kind is EventKind.LOAD_CHANGE:
            k = self._load_index(ev.target)
            self.load_p[k] = ev.payload["p_kw"]
            self.load_q[k] = ev.payload.get("q_kvar", self.load_q[k])
        elif kind is EventKind.PMAX_CHANGE:
            bank, j = self._bank_slot(ev.target)
            bank.p_max[j] = ev.payload["p_max"]
        elif kind is EventKind.INVERTER_TRIP:
            self._trip(self.ids.index(ev.target))
        elif kind is EventKind.INVERTER_RECONNECT:
            self._reconnect(self.ids.index(ev.target))
        else:
            self.graph = consensus.apply_comm_event(self.graph, ev)

    def _load_index(self, load_id: str) -> int:
        return [ld.id for ld in self.network.loads].index(load_id)

    def _bank_slot(self, inverter_id: str) -> tuple[InverterBank, int]:
        k = self.ids.index(inverter_id)
        if self.is_gfm[k]:
            return self.gfm_bank, int(np.searchsorted(self.gfm_idx, k))
        return self.gfl_bank, int(np.searchsorted(self.gfl_idx, k))

    def _trip(self, k: int) -> None:
        self.connected[k] = False
        if not self.is_gfm[k]:
            j = int(np.searchsorted(self.gfl_idx, k))
            self.gfl.p_del[j] = 0.0
            self.gfl.q_del[j] = 0.0

    def _reconnect(self, k: int) -> None:
        """Re-enter with reset integrators; P_set and V_set resume from their pre-trip values."""
        if self.connected[k]:
            return
        self.connected[k] = True
        v_bus = self.v[self.inv_bus[k]]
        live = np.isfinite(v_bus) and abs(v_bus) > inverters.PLL_MIN_VOLTAGE
        if self.is_gfm[k]:
            j = int(np.searchsorted(self.gfm_idx, k))
            s, b = self.gfm, self.gfm_bank
            s.delta[j] = np.angle(v_bus) if live else 0.0
            s.v_f[j] = abs(v_bus) if live else s.v_set[j]
            s.p_f[j] = s.p_set[j]
            s.q_f[j] = b.q_nom[j]
            s.e[j] = np.clip(s.v_f[j], E_MIN, E_MAX)
            err = s.v_set[j] - s.v_f[j]
            s.x_v[j] = s.e[j] - b.kp_v[j] * err
        else:
            j = int(np.searchsorted(self.gfl_idx, k))
            s, b = self.gfl, self.gfl_bank
            s.theta_pll[j] = np.angle(v_bus) if live else 0.0
            s.x_pll[j] = 0.0
            s.omega[j] = b.omega_nom[j]
            s.v_f[j] = abs(v_bus) if live else s.v_set[j]
            s.p_del[j] = s.q_del[j] = 0.0
            s.p_ref[j] = s.q_ref[j] = 0.0

    # --- one step --------------------------------------------------------------

    def _solve(self, topo: Topology, t: float):
        kw = self.network.kw_per_pu
        demand, shunts = load_vectors(self.network, self.load_p, self.load_q, self.load_on)
        inj = -demand
        gfl_on = self.connected[self.gfl_idx]
        np.add.at(inj, self.inv_bus[self.gfl_idx][gfl_on], (self.gfl.p_del + 1j * self.gfl.q_del)[gfl_on] / kw)
        e = self.gfm.source()
        gfm_on = np.nonzero(self.connected[self.gfm_idx])[0]
        sources = [Source(bus=int(self.inv_bus[self.gfm_idx[j]]), e=complex(e[j]), z=complex(self.gfm_bank.z_coupling[j]))
                   for j in gfm_on]
        sources += self.sub_sources
        sol = solve_network(topo, sources, inj, shunts, v_prev=self.v, time=t)
        self.v = sol.v
        p_g = np.zeros(len(self.gfm_idx))
        q_g = np.zeros(len(self.gfm_idx))
        p_g[gfm_on] = sol.source_power[: len(gfm_on)].real * kw
        q_g[gfm_on] = sol.source_power[: len(gfm_on)].imag * kw
        return sol, p_g, q_g

    def _force_trips(self, topo: Topology) -> None:
        dead = self.connected & ~self._energized(topo)
        for k in np.nonzero(dead)[0]:
            logger.warning("inverter %s is in a de-energized island, tripping it", self.ids[k])
            self._trip(k)

    def _secondary_active(self, topo: Topology) -> np.ndarray:
        return self.connected & self._energized(topo) & ~self._grid_tied(topo)

    def snapshot(self, topo: Topology) -> consensus.FleetSnapshot:
        n = len(self.fleet)
        gi, fi = self.gfm_idx, self.gfl_idx
        gb, fb = self.gfm_bank, self.gfl_bank

        def merge(gfm_values, gfl_values) -> np.ndarray:
            out = np.empty(n)
            out[gi] = gfm_values
            out[fi] = gfl_values
            return out

        return consensus.FleetSnapshot(
            is_gfm=self.is_gfm,
            m_p=merge(gb.m_p, fb.m_p),
            m_q=merge(gb.m_q, fb.m_q),
            omega_nom=merge(gb.omega_nom, fb.omega_nom),
            v_nom=merge(gb.v_nom, fb.v_nom),
            p_min=merge(gb.p_min, fb.p_min),
            p_max=merge(gb.p_max, fb.p_max),
            p_set=merge(self.gfm.p_set, self.gfl.p_set),
            v_set=merge(self.gfm.v_set, self.gfl.v_set),
            omega=merge(self.gfm.omega(gb), self.gfl.omega),
            q=merge(self.gfm.q_f, self.gfl.q_del),
            v=merge(self.gfm.v_f, self.gfl.v_f),
            active=self._secondary_active(topo),
        )

    def _secondary(self, topo: Topology) -> None:
        mode = self.scenario.mode
        if mode is ControlMode.NO_CONTROL:
            return
        snap = self.snapshot(topo)
        if not snap.active.any():
            return
        p_set = consensus.freq_secondary_step(mode, self.graph, self.gains, snap)
        v_set = consensus.volt_secondary_step(mode, self.graph, self.gains, snap)
        self.gfm = replace(self.gfm, p_set=p_set[self.gfm_idx], v_set=v_set[self.gfm_idx])
        self.gfl = replace(self.gfl, p_set=p_set[self.gfl_idx], v_set=v_set[self.gfl_idx])

    def _primary(self, p_g: np.ndarray, q_g: np.ndarray) -> None:
        dt = self.scenario.dt
        v_inv = np.nan_to_num(self.v[self.inv_bus], nan=0.0)
        gfm_on = self.connected[self.gfm_idx]
        gfl_on = self.connected[self.gfl_idx]
        self.gfm, _ = inverters.gfm_primary_step(
            self.gfm_bank, self.gfm, v_inv[self.gfm_idx], p_g, q_g, dt, active=gfm_on
        )
        self.gfl, _ = inverters.gfl_primary_step(self.gfl_bank, self.gfl, v_inv[self.gfl_idx], dt, active=gfl_on)

    def _sample(self, t: float, topo: Topology, p_g: np.ndarray, q_g: np.ndarray) -> tuple[dict, dict]:
        n = len(self.fleet)
        gi, fi = self.gfm_idx, self.gfl_idx
        on = self.connected
        f = np.empty(n)
        f[gi] = self.gfm.omega(self.gfm_bank) / (2 * np.pi)
        f[fi] = self.gfl.omega / (2 * np.pi)
        f[~on] = np.nan
        p = np.empty(n)
        q = np.empty(n)
        p[gi], q[gi] = p_g, q_g
        p[fi], q[fi] = self.gfl.p_del, self.gfl.q_del
        p[~on] = 0.0
        q[~on] = 0.0
        pset = np.empty(n)
        vset = np.empty(n)
        pset[gi], pset[fi] = self.gfm.p_set, self.gfl.p_set
        vset[gi], vset[fi] = self.gfm.v_set, self.gfl.v_set
        energized = self._energized(topo)
        island = np.where(energized, self._island_of(topo), -1)
        v = np.abs(self.v[self.inv_bus])
        per_inverter = {"f": f, "V": v, "P": p, "Q": q, "Pset": pset, "Vset": vset,
                        "connected": on.astype(float), "island": island.astype(float)}

        s = np.array([x.rating_kw for x in self.fleet])
        mp = np.array([x.freq_droop for x in self.fleet])
        mq = np.array([x.volt_droop for x in self.fleet])
        eta_p, mpsi = metrics.sharing_series(p, s, mp, on)
        eta_q, mqsi = metrics.sharing_series(q, s, mq, on)
        any_on = bool(on.any())
        system = {
            "eta_p_pu": eta_p[0],
            "eta_q_pu": eta_q[0],
            "mpsi_pu": mpsi[0],
            "mqsi_pu": mqsi[0],
            "v_error_pu": float(np.mean(np.abs(v[on] - 1.0))) if any_on else np.nan,
            "f_dev_Hz": float(np.max(np.abs(f[on] - self.network.f_nom))) if any_on else np.nan,
        }
        return per_inverter, system

    def fleet_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "kind": [p.kind.value for p in self.fleet],
                "bus": [p.bus for p in self.fleet],
                "rating_kw": [p.rating_kw for p in self.fleet],
                "freq_droop": [p.freq_droop for p in self.fleet],
                "volt_droop": [p.volt_droop for p in self.fleet],
            },
            index=pd.Index(self.ids, name="id"),
        )

    def run(self) -> TimeSeriesRecord:
        sc = self.scenario
        steps = sc.steps
        every = sc.secondary_every
        buffer = RecordBuffer(self.ids, steps // sc.decimation + 1)
        pending = list(sc.events)
        logger.info("running %s (%s, %d steps)", sc.name, sc.mode.value, steps)
        for k in range(steps + 1):
            t = k * sc.dt
            while pending and pending[0].time <= t + 0.5 * sc.dt:
                self.apply_event(pending.pop(0))
            topo = self._topology()
            self._force_trips(topo)
            topo = self._topology()
            try:
                _, p_g, q_g = self._solve(topo, t)
            except SolverDivergenceError as e:
                e.time = t
                e.partial_record = buffer.to_record(self.fleet_frame(), sc.event_times(), sc.duration)
                logger.error("power flow diverged at t=%.4fs", t)
                raise
            if k % sc.decimation == 0:
                per_inverter, system = self._sample(t, topo, p_g, q_g)
                buffer.append(t, per_inverter, system)
            if k == steps:
                break
            self._primary(p_g, q_g)
            if (k + 1) % every == 0:
                self._secondary(topo)
        logger.info("finished %s", sc.name)
        return buffer.to_record(self.fleet_frame(), sc.event_times(), sc.duration)


def run(scenario: Scenario, network: Optional[NetworkModel] = None) -> TimeSeriesRecord:
    """Run a scenario; the network is resolved by name when not given."""
    if network is None:
        network = resolve_network(scenario.network)
    return Simulation(scenario, network).run()


def run_with_summary(scenario: Scenario, network: Optional[NetworkModel] = None) -> tuple[TimeSeriesRecord, metrics.MetricSummary]:
    record = run(scenario, network)
    summary = metrics.summarize(record, scenario.steady_window, scenario=scenario.name, mode=scenario.mode.value)
    return record, summary
