"""Scenario schema, validation and the event-driven simulation loop."""
import json
import math

import numpy as np
import pandas as pd
import pytest

from app.core.errors import ScenarioValidationError, SolverDivergenceError
from app.models.record import column_name, record_columns
from app.schemas.inverter import InverterKind, InverterParams
from app.schemas.network import Bus, Line, Load, NetworkModel, Substation, Switch
from app.schemas.run import RunManifest
from app.schemas.scenario import (
    ControlMode,
    Event,
    EventKind,
    GainsSpec,
    Scenario,
    TopologyKind,
    TopologySpec,
    apply_overrides,
    load_scenario_file,
    parse_scenario,
)
from app.sim.consensus import freq_residual, volt_residual
from app.sim.scenario import Simulation, resolve_fleet, validate_scenario
from tests.oracles import droop_equilibrium

OMEGA_NOM = 2 * math.pi * 60.0


def _make_network(load_kw: float = 400.0) -> NetworkModel:
    """Substation - switch - GFM hub - GFL bus with a load."""
    return NetworkModel(
        name="tiny",
        buses=[Bus(id=b, v_nominal=4160.0) for b in ("s", "a", "b")],
        switches=[Switch(name="sw")],
        lines=[
            Line(id="l_sa", from_bus="s", to_bus="a", r=0.003, x=0.002, switch="sw"),
            Line(id="l_ab", from_bus="a", to_bus="b", r=0.002, x=0.0015),
        ],
        loads=[Load(id="ld", bus="b", p_kw=load_kw, q_kvar=0.3 * load_kw)],
        substations=[Substation(id="grid", bus="s")],
        inverters=[
            InverterParams(id="1", kind=InverterKind.GFM, bus="a", rating_kw=600.0, p_set=300.0,
                           coupling_r=0.01, coupling_x=0.1667),
            InverterParams(id="2", kind=InverterKind.GFL, bus="b", rating_kw=350.0, p_set=50.0),
        ],
    )


def _islanding(mode=ControlMode.NO_CONTROL, duration=1.5, events=None, **kw) -> Scenario:
    events = events if events is not None else [Event(time=0.2, kind=EventKind.SWITCH_OPEN, target="sw")]
    return Scenario(name="tiny_islanding", network="tiny", mode=mode, events=events, duration=duration, **kw)


def _last(record, quantity, inverter_id):
    return float(record.frame[column_name(quantity, inverter_id)].iloc[-1])


def test_undisturbed_grid_connected_run_stays_at_equilibrium(feeder):
    scenario = Scenario(name="steady", mode=ControlMode.FULLY_COORDINATED, duration=0.5)
    record = Simulation(scenario, feeder).run()
    p = record.matrix("P")
    expected = np.array([inv.p_set for inv in feeder.inverters])
    np.testing.assert_allclose(p, np.broadcast_to(expected, p.shape), atol=1e-3)
    np.testing.assert_allclose(record.matrix("f"), 60.0, atol=1e-6)
    np.testing.assert_allclose(record.matrix("Pset"), np.broadcast_to(expected, p.shape))


def test_record_layout_and_sample_count():
    net = _make_network()
    scenario = _islanding(duration=0.5)
    record = Simulation(scenario, net).run()
    assert list(record.frame.columns) == record_columns(["1", "2"])
    assert len(record) == scenario.steps // scenario.decimation + 1
    assert record.t[-1] == pytest.approx(0.5)
    assert record.event_times == [0.2]


def test_islanded_droop_settles_on_the_droop_line():
    net = _make_network()
    record = Simulation(_islanding(), net).run()
    p_total = _last(record, "P", "1") + _last(record, "P", "2")
    omega, _ = droop_equilibrium([fleet.m_p for fleet in net.inverters], [300.0, 50.0], OMEGA_NOM, p_total)
    assert _last(record, "f", "1") == pytest.approx(omega / (2 * math.pi), abs=2e-3)
    assert _last(record, "f", "1") < 60.0
    # after islanding the inverters carry the whole load
    assert p_total > 400.0


def test_lossless_bus_droop_matches_bisection():
    net = NetworkModel(
        name="lossless",
        buses=[Bus(id=b, v_nominal=4160.0) for b in ("s", "a")],
        switches=[Switch(name="sw")],
        lines=[Line(id="l_sa", from_bus="s", to_bus="a", r=0.0, x=0.002, switch="sw")],
        loads=[Load(id="ld", bus="a", p_kw=400.0, q_kvar=100.0)],
        substations=[Substation(id="grid", bus="s")],
        inverters=[
            InverterParams(id="1", kind=InverterKind.GFM, bus="a", rating_kw=600.0, p_set=300.0,
                           coupling_r=0.0, coupling_x=0.1667),
            InverterParams(id="2", kind=InverterKind.GFL, bus="a", rating_kw=350.0, p_set=50.0),
        ],
    )
    record = Simulation(_islanding(duration=3.0), net).run()
    omega, p = droop_equilibrium([inv.m_p for inv in net.inverters], [300.0, 50.0], OMEGA_NOM, 400.0)
    for k, inv_id in enumerate(("1", "2")):
        assert abs(2 * math.pi * _last(record, "f", inv_id) - omega) < 1e-6
        assert _last(record, "P", inv_id) == pytest.approx(p[k], rel=1e-6)


def test_secondary_residuals_vanish_on_the_tiny_island():
    net = _make_network()
    scenario = _islanding(ControlMode.FULLY_COORDINATED, duration=4.0, gains=GainsSpec(alpha=8.0))
    sim = Simulation(scenario, net)
    sim.run()
    snap = sim.snapshot(sim._topology())
    assert np.max(np.abs(freq_residual(sim.graph, snap))) < 1e-6
    assert np.max(np.abs(volt_residual(sim.graph, sim.gains, snap))) < 1e-6


def test_fully_coordinated_without_links_is_uncoordinated():
    net = _make_network()
    empty = _islanding(ControlMode.FULLY_COORDINATED, duration=1.0,
                       topology=TopologySpec(kind=TopologyKind.EMPTY))
    local = _islanding(ControlMode.UNCOORDINATED, duration=1.0)
    pd.testing.assert_frame_equal(Simulation(empty, net).run().frame, Simulation(local, net).run().frame)


def test_fully_coordinated_restores_frequency_and_sharing():
    net = _make_network()
    record = Simulation(_islanding(ControlMode.FULLY_COORDINATED, duration=3.0), net).run()
    assert abs(_last(record, "f", "1") - 60.0) < 1e-3
    assert abs(_last(record, "f", "2") - 60.0) < 1e-3
    assert record.frame["mpsi_pu"].iloc[-1] < 1e-2


def test_no_control_never_moves_setpoints():
    net = _make_network()
    record = Simulation(_islanding(), net).run()
    np.testing.assert_array_equal(record.matrix("Pset")[-1], [300.0, 50.0])
    np.testing.assert_array_equal(record.matrix("Vset")[-1], [1.0, 1.0])


def test_runs_are_deterministic():
    net = _make_network()
    scenario = _islanding(ControlMode.FULLY_COORDINATED, duration=0.6)
    first = Simulation(scenario, net).run()
    second = Simulation(scenario, net).run()
    pd.testing.assert_frame_equal(first.frame, second.frame)


def test_tripped_inverter_is_recorded_as_disconnected():
    net = _make_network()
    events = [
        Event(time=0.1, kind=EventKind.INVERTER_TRIP, target="2"),
        Event(time=0.3, kind=EventKind.INVERTER_RECONNECT, target="2"),
    ]
    record = Simulation(_islanding(events=events, duration=0.5), net).run()
    mid = record.frame[(record.t > 0.15) & (record.t < 0.25)]
    assert (mid[column_name("connected", "2")] == 0).all()
    assert (mid[column_name("P", "2")] == 0).all()
    assert mid[column_name("f", "2")].isna().all()
    assert _last(record, "connected", "2") == 1


def test_island_without_grid_former_trips_its_followers():
    net = _make_network()
    events = [
        Event(time=0.1, kind=EventKind.SWITCH_OPEN, target="sw"),
        Event(time=0.2, kind=EventKind.INVERTER_TRIP, target="1"),
    ]
    record = Simulation(_islanding(events=events, duration=0.4), net).run()
    assert _last(record, "connected", "1") == 0
    assert _last(record, "connected", "2") == 0
    assert _last(record, "island", "2") == -1
    assert math.isnan(_last(record, "V", "2"))


def test_divergence_reports_time_and_partial_record():
    net = _make_network()
    events = [
        Event(time=0.2, kind=EventKind.SWITCH_OPEN, target="sw"),
        Event(time=0.3, kind=EventKind.LOAD_CHANGE, target="ld", payload={"p_kw": 1.0e6}),
    ]
    with pytest.raises(SolverDivergenceError) as exc:
        Simulation(_islanding(events=events, duration=0.5), net).run()
    assert exc.value.time == pytest.approx(0.3)
    partial = exc.value.partial_record
    assert len(partial) > 0
    assert partial.t[-1] < 0.3


def test_pmax_change_caps_delivered_power():
    net = _make_network(load_kw=700.0)
    events = [
        Event(time=0.1, kind=EventKind.SWITCH_OPEN, target="sw"),
        Event(time=0.5, kind=EventKind.PMAX_CHANGE, target="2", payload={"p_max": 120.0}),
    ]
    record = Simulation(_islanding(ControlMode.FULLY_COORDINATED, events=events, duration=1.5), net).run()
    late = record.frame[record.t > 0.6]
    assert (late[column_name("P", "2")] <= 120.0 + 1e-9).all()


@pytest.mark.parametrize(
    "event, pointer",
    [
        (Event(time=0.1, kind=EventKind.SWITCH_OPEN, target="sw_nope"), "events[0].target"),
        (Event(time=0.1, kind=EventKind.INVERTER_TRIP, target="9"), "events[0].target"),
        (Event(time=0.1, kind=EventKind.LOAD_DISCONNECT, target="ld_nope"), "events[0].target"),
        (Event(time=0.1, kind=EventKind.PMAX_CHANGE, target="2", payload={"p_max": 900.0}), "events[0].payload.p_max"),
        (Event(time=0.1, kind=EventKind.COMM_LINK_FAIL, target="1-9"), "events[0].target"),
    ],
)
def test_bad_event_targets_are_rejected_with_pointer(event, pointer):
    with pytest.raises(ScenarioValidationError) as exc:
        validate_scenario(_islanding(events=[event]), _make_network())
    assert exc.value.pointer == pointer
    assert exc.value.exit_code == 2


def test_fleet_overrides_are_validated():
    net = _make_network()
    fleet = resolve_fleet(net, {"2": {"p_set": 80.0}})
    assert fleet[1].p_set == 80.0
    with pytest.raises(ScenarioValidationError) as exc:
        resolve_fleet(net, {"2": {"colour": 1.0}})
    assert exc.value.pointer == "fleet.2.colour"
    with pytest.raises(ScenarioValidationError):
        resolve_fleet(net, {"7": {"p_set": 1.0}})


def test_parse_scenario_points_at_bad_field():
    with pytest.raises(ScenarioValidationError) as exc:
        parse_scenario({"name": "x", "dt": -1.0})
    assert exc.value.pointer == "dt"
    with pytest.raises(ScenarioValidationError):
        parse_scenario({"name": "x", "dt": 1e-3, "dt_sec": 2.5e-3})
    with pytest.raises(ScenarioValidationError) as exc:
        parse_scenario({"name": "x", "events": [{"time": 0.1, "kind": "Explode", "target": "sw"}]})
    assert exc.value.pointer.startswith("events[0]")


def test_events_are_sorted_stably_by_time():
    scenario = Scenario(name="x", events=[
        Event(time=2.0, kind=EventKind.SWITCH_OPEN, target="b"),
        Event(time=1.0, kind=EventKind.SWITCH_OPEN, target="a"),
        Event(time=2.0, kind=EventKind.SWITCH_CLOSE, target="c"),
    ])
    assert [e.target for e in scenario.events] == ["a", "b", "c"]
    assert scenario.event_times() == [1.0, 2.0]


def test_overrides_are_type_checked():
    base = _islanding()
    changed = apply_overrides(base, {"mode": "Uncoordinated", "gains.alpha": "2", "seed": "5"})
    assert changed.mode is ControlMode.UNCOORDINATED
    assert changed.gains.alpha == 2.0
    assert changed.seed == 5
    assert changed.config_hash() != base.config_hash()
    with pytest.raises(ScenarioValidationError):
        apply_overrides(base, {"gains.gamma": "1"})
    with pytest.raises(ScenarioValidationError):
        apply_overrides(base, {"mode": "Chaotic"})


def test_manifest_is_accepted_as_scenario(tmp_path):
    net = _make_network()
    scenario = _islanding()
    manifest = RunManifest.build(scenario, net)
    path = tmp_path / "manifest.json"
    path.write_text(manifest.model_dump_json())
    loaded = load_scenario_file(path)
    assert loaded == scenario
    assert loaded.config_hash() == manifest.config_hash
    assert json.loads(path.read_text())["seed"] == scenario.seed
