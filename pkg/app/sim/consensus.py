"""Secondary control: leader-follower consensus on droop setpoints.

Real power
    Followers (GFL):  -k_p_i dP_set_i/dt = sum_j c_ij (m_p_i P_set_i - m_p_j P_set_j)
    Leaders (GFM):    -k_p_i dP_set_i/dt = (omega_i - omega_nom) + same sum

Reactive power / voltage
    Followers (GFL):  -k_q_i dV_set_i/dt = sum_j c_ij (m_q_i Q_i - m_q_j Q_j)
    Leaders (GFM):    -k_q_i dV_set_i/dt = alpha (V_i - V_nom) + beta * same sum

The real-power sum runs on *setpoints* while the var sum runs on *delivered*
Q. Both laws are integrated with forward Euler every ``dt_sec``.

Units: m_p P is in rad/s and m_q Q in pu. k_p defaults to ``kappa_p * m_p``
with kappa_p in seconds, so m_p P_set relaxes with time constant kappa_p; k_q
is in seconds.

The four comparison strategies are the same law over different link masks:
FullyCoordinated uses every link, GfmCoordinated keeps only leader-leader
links, Uncoordinated uses none, and NoControl skips the secondary layer.
"""
from dataclasses import dataclass
from typing import Optional, Sequence
import itertools
import logging

import networkx as nx
import numpy as np

from app.core.errors import ConfigurationError
from app.models.comm_graph import CommGraph
from app.schemas.inverter import InverterParams
from app.schemas.scenario import ControlMode, Event, EventKind, GainsSpec, TopologyKind, TopologySpec, link_endpoints

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SecondaryGains:
    k_p: np.ndarray
    k_q: np.ndarray
    alpha: float
    beta: float
    dt_sec: float
    leader_anti_windup: bool = False

    def __post_init__(self) -> None:
        if np.any(self.k_p <= 0) or np.any(self.k_q <= 0):
            raise ConfigurationError("secondary gains k_p and k_q must be positive")
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ConfigurationError("alpha, beta must be non-negative with a positive sum")
        if self.dt_sec <= 0:
            raise ConfigurationError("dt_sec must be positive")


def resolve_gains(spec: GainsSpec, fleet: Sequence[InverterParams], dt_sec: float) -> SecondaryGains:
    """Per-inverter gains from the scenario section; explicit entries win."""
    ids = {p.id for p in fleet}
    for name, table in (("k_p", spec.k_p), ("k_q", spec.k_q)):
        unknown = set(table) - ids
        if unknown:
            raise ConfigurationError(f"gains.{name} names unknown inverter {sorted(unknown)[0]}")
    k_p = np.array([spec.k_p.get(p.id, spec.kappa_p * p.m_p) for p in fleet], dtype=float)
    k_q = np.array(
        [spec.k_q.get(p.id, spec.k_q_gfm if p.is_gfm else spec.k_q_gfl) for p in fleet], dtype=float
    )
    return SecondaryGains(
        k_p=k_p, k_q=k_q, alpha=spec.alpha, beta=spec.beta, dt_sec=dt_sec,
        leader_anti_windup=spec.leader_anti_windup,
    )


@dataclass
class FleetSnapshot:
    """What the secondary layer reads from the fleet, in fleet order.

    ``omega`` matters for leaders only. ``q`` is the filtered Q of leaders and
    the delivered Q of followers; ``v`` is the filtered terminal voltage.
    ``active`` marks inverters that are connected and sit in an island with no
    stiff grid source.
    """

    is_gfm: np.ndarray
    m_p: np.ndarray
    m_q: np.ndarray
    omega_nom: np.ndarray
    v_nom: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    p_set: np.ndarray
    v_set: np.ndarray
    omega: np.ndarray
    q: np.ndarray
    v: np.ndarray
    active: np.ndarray

    def __len__(self) -> int:
        return len(self.is_gfm)


def mode_mask(mode: ControlMode, is_gfm: np.ndarray) -> np.ndarray:
    """Links each strategy is allowed to use."""
    n = len(is_gfm)
    if mode is ControlMode.FULLY_COORDINATED:
        return np.ones((n, n), dtype=bool)
    if mode is ControlMode.GFM_COORDINATED:
        return is_gfm[:, np.newaxis] & is_gfm[np.newaxis, :]
    return np.zeros((n, n), dtype=bool)


def _consensus_sum(graph: CommGraph, mode: ControlMode, snap: FleetSnapshot, y: np.ndarray) -> np.ndarray:
    if graph.n != len(snap):
        raise ConfigurationError(f"communication graph has {graph.n} nodes, fleet has {len(snap)}")
    c = graph.masked(mode_mask(mode, snap.is_gfm)).effective(snap.active)
    # sum_j c_ij (y_i - y_j)
    return c.sum(axis=1) * y - c @ y


def freq_secondary_step(
    mode: ControlMode, graph: CommGraph, gains: SecondaryGains, snap: FleetSnapshot, dt_sec: Optional[float] = None
) -> np.ndarray:
    """One Euler step of the real-power consensus; returns the new P_set (kW).

    P_set itself is unbounded; only delivered power saturates. With
    ``gains.leader_anti_windup`` leader setpoints are held in [P_min, P_max].
    """
    if mode is ControlMode.NO_CONTROL:
        return snap.p_set.copy()
    dt_sec = gains.dt_sec if dt_sec is None else dt_sec
    drive = _consensus_sum(graph, mode, snap, snap.m_p * snap.p_set)
    drive = drive + np.where(snap.is_gfm, snap.omega - snap.omega_nom, 0.0)
    p_set = snap.p_set - dt_sec * drive / gains.k_p
    if gains.leader_anti_windup:
        p_set = np.where(snap.is_gfm, np.clip(p_set, snap.p_min, snap.p_max), p_set)
    return np.where(snap.active, p_set, snap.p_set)


def volt_secondary_step(
    mode: ControlMode, graph: CommGraph, gains: SecondaryGains, snap: FleetSnapshot, dt_sec: Optional[float] = None
) -> np.ndarray:
    """One Euler step of the var-sharing / voltage consensus; returns the new V_set (pu)."""
    if mode is ControlMode.NO_CONTROL:
        return snap.v_set.copy()
    dt_sec = gains.dt_sec if dt_sec is None else dt_sec
    share = _consensus_sum(graph, mode, snap, snap.m_q * snap.q)
    drive = np.where(snap.is_gfm, gains.alpha * (snap.v - snap.v_nom) + gains.beta * share, share)
    v_set = snap.v_set - dt_sec * drive / gains.k_q
    return np.where(snap.active, v_set, snap.v_set)


def freq_residual(graph: CommGraph, snap: FleetSnapshot, mode: ControlMode = ControlMode.FULLY_COORDINATED) -> np.ndarray:
    """Right-hand side of the real-power law; zero at a secondary equilibrium."""
    drive = _consensus_sum(graph, mode, snap, snap.m_p * snap.p_set)
    drive = drive + np.where(snap.is_gfm, snap.omega - snap.omega_nom, 0.0)
    return np.where(snap.active, drive, 0.0)


def volt_residual(
    graph: CommGraph, gains: SecondaryGains, snap: FleetSnapshot, mode: ControlMode = ControlMode.FULLY_COORDINATED
) -> np.ndarray:
    share = _consensus_sum(graph, mode, snap, snap.m_q * snap.q)
    drive = np.where(snap.is_gfm, gains.alpha * (snap.v - snap.v_nom) + gains.beta * share, share)
    return np.where(snap.active, drive, 0.0)


def is_connected(graph: CommGraph, connected: Optional[np.ndarray] = None) -> bool:
    """True when the effective graph over the connected inverters is one component."""
    g = graph.to_networkx(connected)
    if g.number_of_nodes() == 0:
        return False
    return nx.is_connected(g)


def communication_components(graph: CommGraph, connected: Optional[np.ndarray] = None) -> list[list[str]]:
    g = graph.to_networkx(connected)
    order = {k: i for i, k in enumerate(graph.ids)}
    comps = [sorted(c, key=order.__getitem__) for c in nx.connected_components(g)]
    return sorted(comps, key=lambda c: order[c[0]])


def random_connected_topology(ids: Sequence[str] | int, links: int, seed: int) -> CommGraph:
    """Random connected graph with exactly `links` edges.

    A uniform random spanning tree (decoded from a random Pruefer sequence)
    guarantees connectivity; the remaining edges are drawn uniformly from the
    non-tree pairs. The same seed always yields the same graph.
    """
    if isinstance(ids, int):
        ids = [str(k + 1) for k in range(ids)]
    ids = tuple(ids)
    n = len(ids)
    lo, hi = n - 1, n * (n - 1) // 2
    if not lo <= links <= hi:
        raise ConfigurationError(f"{links} links cannot form a connected graph on {n} nodes (need {lo}..{hi})")
    rng = np.random.default_rng(seed)
    if n == 1:
        return CommGraph.empty(ids)
    tree = nx.from_prufer_sequence(rng.integers(0, n, size=n - 2).tolist()) if n > 2 else nx.path_graph(2)
    chosen = {tuple(sorted(e)) for e in tree.edges()}
    spare = [pair for pair in itertools.combinations(range(n), 2) if pair not in chosen]
    extra = rng.choice(len(spare), size=links - len(chosen), replace=False) if links > len(chosen) else []
    chosen.update(spare[k] for k in sorted(extra))
    return CommGraph.from_edges(ids, ((ids[i], ids[j]) for i, j in sorted(chosen)))


def build_topology(spec: TopologySpec, ids: Sequence[str]) -> CommGraph:
    """Materialise the scenario's topology section over the fleet ids."""
    if spec.kind is TopologyKind.COMPLETE:
        graph = CommGraph.complete(ids)
    elif spec.kind is TopologyKind.EMPTY:
        graph = CommGraph.empty(ids)
    elif spec.kind is TopologyKind.EDGES:
        graph = CommGraph.from_edges(ids, spec.edges)
    else:
        graph = random_connected_topology(ids, spec.links, spec.seed)
    if spec.kind is TopologyKind.EDGES and not spec.allow_disconnected and graph.n > 1 and not is_connected(graph):
        raise ConfigurationError("communication graph is not connected (set allow_disconnected to force it)")
    return graph


def apply_comm_event(graph: CommGraph, event: Event) -> CommGraph:
    """Fail or restore one link; unknown links are a configuration error."""
    a, b = link_endpoints(event.target)
    if event.kind is EventKind.COMM_LINK_FAIL:
        enabled = False
    elif event.kind is EventKind.COMM_LINK_RESTORE:
        enabled = True
    else:
        raise ConfigurationError(f"{event.kind.value} is not a communication event")
    logger.info("link %s-%s %s", a, b, "restored" if enabled else "failed")
    return graph.with_link_enabled(a, b, enabled)
