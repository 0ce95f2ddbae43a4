"""Ready-made scenarios for the shipped reduced feeder, and name resolution.

All library cases run on ``reduced_feeder``: three microgrids, each with one
grid-forming leader at its hub and two grid-following units, tied to the
substation through ``sw_island``.
"""
from itertools import product
from pathlib import Path
from typing import Optional
import logging

from app.core.config import get_settings
from app.core.errors import ScenarioValidationError
from app.schemas.network import NetworkModel, load_network
from app.schemas.scenario import (
    ControlMode,
    Event,
    EventKind,
    GainsSpec,
    Scenario,
    TopologyKind,
    TopologySpec,
    load_scenario_file,
)

logger = logging.getLogger(__name__)

CLUSTERS = (("1", "2", "3"), ("4", "5", "6"), ("7", "8", "9"))
LEADERS = ("1", "4", "7")
INTERMITTENT = ("2", "5", "8")
INTERMITTENCY_LEVELS = (275, 250, 225, 200)

# leader voltage term fast enough to settle inside the event windows of this feeder
FEEDER_GAINS = GainsSpec(alpha=8.0)
# leaders without follower help saturate after islanding; P_set is held at their limits
HEADROOM_GAINS = FEEDER_GAINS.model_copy(update={"leader_anti_windup": True})


def resolve_network(ref: str) -> NetworkModel:
    """Load a network by file path or by name from the search path."""
    path = Path(ref)
    if path.suffix == ".json" and path.is_file():
        return load_network(path)
    for folder in get_settings().network_search_path():
        candidate = folder / f"{ref}.json"
        if candidate.is_file():
            return load_network(candidate)
    raise ScenarioValidationError(f"network {ref!r} not found", "network")


def _islanding(time: float = 1.0) -> Event:
    return Event(time=time, kind=EventKind.SWITCH_OPEN, target="sw_island")


def _load_loss(time: float = 4.0) -> Event:
    return Event(time=time, kind=EventKind.SWITCH_OPEN, target="sw_load_shed")


def _intra_cluster_edges() -> list[tuple[str, str]]:
    edges = []
    for cluster in CLUSTERS:
        edges += [(a, b) for k, a in enumerate(cluster) for b in cluster[k + 1:]]
    return edges


def _inter_cluster_links() -> list[str]:
    links = []
    for k, first in enumerate(CLUSTERS):
        for second in CLUSTERS[k + 1:]:
            links += [f"{a}-{b}" for a, b in product(first, second)]
    return links


def _comparison_cases() -> dict[str, Scenario]:
    events = [_islanding(), _load_loss()]
    cases = {
        "case1_no_control": (ControlMode.NO_CONTROL, TopologySpec(), FEEDER_GAINS, "primary droop only"),
        "case2_uncoordinated": (
            ControlMode.UNCOORDINATED,
            TopologySpec(kind=TopologyKind.EMPTY),
            HEADROOM_GAINS,
            "local restoration at the grid-forming units, no communication",
        ),
        "case3_gfm_coordinated": (
            ControlMode.GFM_COORDINATED,
            TopologySpec(),
            HEADROOM_GAINS,
            "consensus among grid-forming units only",
        ),
        "case4_lfc": (
            ControlMode.FULLY_COORDINATED,
            TopologySpec(),
            FEEDER_GAINS,
            "leader-follower consensus over all units",
        ),
    }
    return {
        name: Scenario(name=name, mode=mode, topology=topo, gains=gains, events=events, duration=6.0,
                       description=f"islanding at t=1, 35% load loss at t=4; {text}")
        for name, (mode, topo, gains, text) in cases.items()
    }


def _intermittency_cases() -> dict[str, Scenario]:
    out = {
        "reference_350": Scenario(
            name="reference_350",
            gains=FEEDER_GAINS,
            events=[_islanding()],
            duration=6.0,
            description="islanding at t=1 with every unit fully dispatchable",
        )
    }
    for level in INTERMITTENCY_LEVELS:
        name = f"intermittency_{level}"
        events = [_islanding()] + [
            Event(time=2.5, kind=EventKind.PMAX_CHANGE, target=inv, payload={"p_max": float(level)})
            for inv in INTERMITTENT
        ]
        out[name] = Scenario(
            name=name,
            gains=FEEDER_GAINS,
            events=events,
            duration=6.0,
            description=f"islanding at t=1, P_max of GFL 2/5/8 drops 350 -> {level} kW at t=2.5",
        )
    return out


def _communication_cases() -> dict[str, Scenario]:
    reduced = _intra_cluster_edges() + [("1", "4"), ("4", "7"), ("7", "1")]
    return {
        "reduced_comm": Scenario(
            name="reduced_comm",
            gains=FEEDER_GAINS,
            topology=TopologySpec(kind=TopologyKind.EDGES, edges=reduced),
            events=[_islanding()],
            duration=5.0,
            description="clusters talk only through their leaders 1, 4 and 7",
        ),
        "link_failure_4_7": Scenario(
            name="link_failure_4_7",
            gains=FEEDER_GAINS,
            topology=TopologySpec(kind=TopologyKind.EDGES, edges=reduced),
            events=[Event(time=0.5, kind=EventKind.COMM_LINK_FAIL, target="4-7"), _islanding()],
            duration=5.0,
            description="leader link 4-7 of the reduced graph failed before islanding",
        ),
        "topology_sweep": Scenario(
            name="topology_sweep",
            gains=FEEDER_GAINS,
            topology=TopologySpec(kind=TopologyKind.RANDOM, links=8, seed=0),
            events=[_islanding()],
            duration=8.0,
            description="base case for the links-vs-convergence sweep (links 8..36)",
        ),
    }


def _operation_cases() -> dict[str, Scenario]:
    split_events = [_islanding()]
    split_events += [Event(time=4.0, kind=EventKind.SWITCH_OPEN, target=sw) for sw in ("sw_1_2", "sw_2_3")]
    split_events += [Event(time=4.0, kind=EventKind.COMM_LINK_FAIL, target=link) for link in _inter_cluster_links()]
    return {
        "plug_n_play": Scenario(
            name="plug_n_play",
            gains=FEEDER_GAINS,
            events=[
                _islanding(),
                Event(time=2.0, kind=EventKind.INVERTER_TRIP, target="2"),
                Event(time=3.0, kind=EventKind.INVERTER_RECONNECT, target="2"),
            ],
            duration=5.0,
            steady_window=0.2,
            description="GFL 2 trips at t=2 and reconnects at t=3",
        ),
        "mg_split": Scenario(
            name="mg_split",
            gains=FEEDER_GAINS,
            events=split_events,
            duration=12.0,
            description="islanding at t=1, microgrids split at t=4 and consensus continues per microgrid",
        ),
    }


def case_library() -> dict[str, Scenario]:
    cases: dict[str, Scenario] = {}
    for group in (_comparison_cases, _intermittency_cases, _communication_cases, _operation_cases):
        cases.update(group())
    return cases


COMPARISON_CASES = ("case1_no_control", "case2_uncoordinated", "case3_gfm_coordinated", "case4_lfc")


def get_case(name: str) -> Scenario:
    cases = case_library()
    if name not in cases:
        raise ScenarioValidationError(f"unknown library case {name!r}", "scenario")
    return cases[name]


def resolve_scenario(ref: str, base: Optional[Path] = None) -> Scenario:
    """A library case name, a scenario file, or a run manifest."""
    path = Path(ref) if base is None else base / ref
    if path.is_file():
        logger.info("loading scenario file %s", path)
        return load_scenario_file(path)
    return get_case(ref)
