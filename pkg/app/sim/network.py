"""Electrical network: islanding, nodal admittance and the per-step phasor solve.

Sign conventions
----------------
``Y`` maps bus voltages to currents *leaving* each bus into the lines, so a
single line of impedance ``z`` between buses a and b contributes ``1/z`` to
``Y[a, a]`` and ``Y[b, b]`` and ``-1/z`` to ``Y[a, b]``. Injected power is
positive (generator convention).

Voltage sources (grid-forming inverters and the substation) are stiff EMFs
behind an impedance. They are folded into the solve as Norton equivalents, so
every network bus is a PQ bus and the unknowns are only the bus voltages.
"""
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence
import logging

import networkx as nx
import numpy as np

from app.core.errors import ConfigurationError, SolverDivergenceError
from app.schemas.network import LoadModel, NetworkModel

logger = logging.getLogger(__name__)

TOL_PF = 1e-8
MAX_ITER = 50


@dataclass(frozen=True)
class Island:
    """One electrical island: a connected component of the closed-line graph."""

    index: int
    buses: tuple[str, ...]
    inverters: tuple[str, ...]
    loads: tuple[str, ...]
    substations: tuple[str, ...]
    energized: bool

    @property
    def grid_connected(self) -> bool:
        return bool(self.substations)


@dataclass(frozen=True)
class Source:
    """A stiff EMF ``e`` (pu) behind impedance ``z`` attached to bus ``bus`` (global index)."""

    bus: int
    e: complex
    z: complex


@dataclass
class NetworkSolution:
    """Solved bus voltages plus current and terminal power of every source.

    Buses of de-energized islands hold NaN, never zero.
    """

    v: np.ndarray
    source_current: np.ndarray
    source_power: np.ndarray
    iterations: int = 0
    mismatch: float = 0.0

    @property
    def energized(self) -> np.ndarray:
        return np.isfinite(self.v)


@dataclass
class Topology:
    """Islands and their admittance matrices for one switch configuration."""

    islands: list[Island]
    admittances: list[np.ndarray]
    members: list[np.ndarray] = field(default_factory=list)
    bus_island: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def _closed_lines(net: NetworkModel, switch_states: dict[str, bool]):
    known = {s.name for s in net.switches}
    unknown = set(switch_states) - known
    if unknown:
        raise ConfigurationError(f"unknown switch: {sorted(unknown)[0]}")
    missing = known - set(switch_states)
    if missing:
        raise ConfigurationError(f"no state given for switch: {sorted(missing)[0]}")
    return [ln for ln in net.lines if ln.switch is None or switch_states[ln.switch]]


def detect_islands(
    net: NetworkModel,
    switch_states: dict[str, bool],
    out_of_service: Iterable[str] = (),
) -> list[Island]:
    """Partition the buses by closed-line connectivity.

    Islands are ordered by their first bus in file order. An island is
    energized when it holds an in-service grid-forming inverter or a substation.
    """
    graph = nx.Graph()
    graph.add_nodes_from(b.id for b in net.buses)
    graph.add_edges_from((ln.from_bus, ln.to_bus) for ln in _closed_lines(net, switch_states))

    order = net.bus_index()
    down = set(out_of_service)
    components = sorted(
        (sorted(c, key=order.__getitem__) for c in nx.connected_components(graph)),
        key=lambda c: order[c[0]],
    )
    islands = []
    for k, buses in enumerate(components):
        members = set(buses)
        inverters = [i for i in net.inverters if i.bus in members]
        substations = tuple(s.id for s in net.substations if s.bus in members)
        has_gfm = any(i.is_gfm and i.id not in down for i in inverters)
        islands.append(Island(
            index=k,
            buses=tuple(buses),
            inverters=tuple(i.id for i in inverters),
            loads=tuple(ld.id for ld in net.loads if ld.bus in members),
            substations=substations,
            energized=has_gfm or bool(substations),
        ))
    return islands


def build_admittance(net: NetworkModel, switch_states: dict[str, bool]) -> list[tuple[tuple[str, ...], np.ndarray]]:
    """Nodal admittance of closed lines, one matrix per electrical island.

    Only series branches are stamped, so every row sums to zero.
    """
    topo = compile_topology(net, switch_states)
    return [(isl.buses, y) for isl, y in zip(topo.islands, topo.admittances)]


def compile_topology(
    net: NetworkModel,
    switch_states: dict[str, bool],
    out_of_service: Iterable[str] = (),
) -> Topology:
    islands = detect_islands(net, switch_states, out_of_service)
    order = net.bus_index()
    bus_island = np.zeros(len(net.buses), dtype=int)
    members = []
    for isl in islands:
        idx = np.array([order[b] for b in isl.buses], dtype=int)
        bus_island[idx] = isl.index
        members.append(idx)

    local = {}
    for isl in islands:
        for k, b in enumerate(isl.buses):
            local[b] = k
    admittances = [np.zeros((len(isl.buses), len(isl.buses)), dtype=complex) for isl in islands]
    for ln in _closed_lines(net, switch_states):
        y = admittances[bus_island[order[ln.from_bus]]]
        a, b = local[ln.from_bus], local[ln.to_bus]
        g = 1.0 / ln.z
        y[a, a] += g
        y[b, b] += g
        y[a, b] -= g
        y[b, a] -= g
    return Topology(islands=islands, admittances=admittances, members=members, bus_island=bus_island)


def _jacobian(y: np.ndarray, v: np.ndarray, i_eff: np.ndarray) -> np.ndarray:
    vn = v / np.abs(v)
    ds_dvm = np.diag(v) @ np.conj(y * vn[np.newaxis, :]) + np.diag(np.conj(i_eff) * vn)
    ds_dva = 1j * np.diag(v) @ np.conj(np.diag(i_eff) - y * v[np.newaxis, :])
    return np.block([[ds_dva.real, ds_dvm.real], [ds_dva.imag, ds_dvm.imag]])


def _newton(y, v0, s_spec, i_norton, tol, max_iter):
    v = v0.astype(complex).copy()
    n = len(v)
    mismatch = np.inf
    for it in range(max_iter + 1):
        i_eff = y @ v - i_norton
        f = v * np.conj(i_eff) - s_spec
        mismatch = float(np.max(np.abs(np.concatenate([f.real, f.imag]))))
        if not np.isfinite(mismatch):
            return v, mismatch, it, False
        if mismatch < tol:
            return v, mismatch, it, True
        if it == max_iter:
            break
        try:
            dx = np.linalg.solve(_jacobian(y, v, i_eff), -np.concatenate([f.real, f.imag]))
        except np.linalg.LinAlgError:
            return v, mismatch, it, False
        vm = np.abs(v) + dx[n:]
        va = np.angle(v) + dx[:n]
        v = vm * np.exp(1j * va)
    return v, mismatch, max_iter, False


def solve_island(
    y: np.ndarray,
    sources: Sequence[Source],
    injections: np.ndarray,
    shunts: Optional[np.ndarray] = None,
    v0: Optional[np.ndarray] = None,
    tol: float = TOL_PF,
    max_iter: int = MAX_ITER,
    time: Optional[float] = None,
) -> NetworkSolution:
    """Solve one energized island.

    `sources` use island-local bus indices. `injections` is the constant-power
    net injection per bus (pu, generation minus load); `shunts` holds
    constant-impedance load admittances. Newton starts from `v0` when given and
    falls back to a flat start at the mean source angle.
    """
    n = y.shape[0]
    if not sources:
        raise ConfigurationError("cannot solve an island without a voltage source")
    y_aug = y.astype(complex).copy()
    if shunts is not None:
        y_aug[np.diag_indices(n)] += shunts
    i_norton = np.zeros(n, dtype=complex)
    for src in sources:
        y_aug[src.bus, src.bus] += 1.0 / src.z
        i_norton[src.bus] += src.e / src.z
    s_spec = np.asarray(injections, dtype=complex)

    flat = np.full(n, np.exp(1j * np.mean([np.angle(s.e) for s in sources])), dtype=complex)
    starts = [flat]
    if v0 is not None and np.all(np.isfinite(v0)) and np.all(np.abs(v0) > 0):
        starts.insert(0, np.asarray(v0, dtype=complex))

    total_iter = 0
    for k, start in enumerate(starts):
        v, mismatch, iterations, ok = _newton(y_aug, start, s_spec, i_norton, tol, max_iter)
        total_iter += iterations
        if ok:
            break
        if k + 1 < len(starts):
            logger.warning("warm-started power flow failed (mismatch %.3e), retrying from flat start", mismatch)
    else:
        raise SolverDivergenceError(mismatch, total_iter, time)
    logger.debug("power flow converged in %d iterations", total_iter)

    current = np.array([(s.e - v[s.bus]) / s.z for s in sources], dtype=complex)
    power = np.array([v[s.bus] * np.conj(i) for s, i in zip(sources, current)], dtype=complex)
    return NetworkSolution(v=v, source_current=current, source_power=power,
                           iterations=total_iter, mismatch=mismatch)


def solve_network(
    topo: Topology,
    sources: Sequence[Source],
    injections: np.ndarray,
    shunts: Optional[np.ndarray] = None,
    v_prev: Optional[np.ndarray] = None,
    tol: float = TOL_PF,
    max_iter: int = MAX_ITER,
    time: Optional[float] = None,
) -> NetworkSolution:
    """Solve every island that holds a source; the rest stay NaN.

    All bus and source indices are global (network file order).
    """
    n_bus = len(topo.bus_island)
    v = np.full(n_bus, np.nan + 0j)
    current = np.full(len(sources), np.nan + 0j)
    power = np.full(len(sources), np.nan + 0j)
    injections = np.asarray(injections, dtype=complex)
    iterations, mismatch = 0, 0.0

    for isl, y, idx in zip(topo.islands, topo.admittances, topo.members):
        local = {int(g): k for k, g in enumerate(idx)}
        picked = [(k, s) for k, s in enumerate(sources) if int(s.bus) in local]
        if not picked:
            continue
        sol = solve_island(
            y,
            [Source(bus=local[int(s.bus)], e=s.e, z=s.z) for _, s in picked],
            injections[idx],
            None if shunts is None else np.asarray(shunts)[idx],
            None if v_prev is None else np.asarray(v_prev)[idx],
            tol=tol,
            max_iter=max_iter,
            time=time,
        )
        v[idx] = sol.v
        for (k, _), i, s in zip(picked, sol.source_current, sol.source_power):
            current[k] = i
            power[k] = s
        iterations = max(iterations, sol.iterations)
        mismatch = max(mismatch, sol.mismatch)
    return NetworkSolution(v=v, source_current=current, source_power=power,
                           iterations=iterations, mismatch=mismatch)


def load_vectors(net: NetworkModel, p_kw: np.ndarray, q_kvar: np.ndarray, connected: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-bus constant-power demand and constant-impedance shunts (pu) for the current load state."""
    order = net.bus_index()
    demand = np.zeros(len(net.buses), dtype=complex)
    shunts = np.zeros(len(net.buses), dtype=complex)
    for k, load in enumerate(net.loads):
        if not connected[k]:
            continue
        s = complex(p_kw[k], q_kvar[k]) / net.kw_per_pu
        if load.model is LoadModel.CONSTANT_IMPEDANCE:
            shunts[order[load.bus]] += np.conj(s)
        else:
            demand[order[load.bus]] += s
    return demand, shunts


def line_losses(y: np.ndarray, v: np.ndarray) -> complex:
    """Complex power absorbed by the series branches of one island (pu)."""
    return complex(np.sum(v * np.conj(y @ v)))
