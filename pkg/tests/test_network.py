"""Tests for islanding, admittance assembly and the phasor network solve."""
import json

import numpy as np
import pytest

from app.core.errors import ConfigurationError, ScenarioValidationError, SolverDivergenceError
from app.schemas.network import (
    Bus,
    Line,
    Load,
    LoadModel,
    NetworkModel,
    Switch,
    load_network,
    network_hash,
    save_network,
)
from app.sim.network import (
    Source,
    build_admittance,
    compile_topology,
    detect_islands,
    line_losses,
    load_vectors,
    solve_island,
    solve_network,
)
from tests.oracles import gauss_seidel


def _make_chain(n: int, z: complex = 0.01 + 0.02j, switched: bool = False) -> NetworkModel:
    buses = [Bus(id=f"b{k}", v_nominal=4160.0) for k in range(n)]
    lines = [
        Line(id=f"l{k}", from_bus=f"b{k}", to_bus=f"b{k + 1}", r=z.real, x=z.imag,
             switch="sw" if switched and k == 0 else None)
        for k in range(n - 1)
    ]
    switches = [Switch(name="sw")] if switched else []
    return NetworkModel(buses=buses, lines=lines, switches=switches)


def _open(net, *names):
    states = net.default_switch_states()
    for name in names:
        states[name] = False
    return states


def test_admittance_rows_sum_to_zero(feeder):
    for buses, y in build_admittance(feeder, feeder.default_switch_states()):
        assert y.shape == (len(buses), len(buses))
        np.testing.assert_allclose(y.sum(axis=1), 0, atol=1e-9)
        np.testing.assert_allclose(y, y.T)


def test_chain_admittance_entries():
    z = 0.01 + 0.02j
    (buses, y), = build_admittance(_make_chain(3, z=z), {})
    assert buses == ("b0", "b1", "b2")
    g = 1 / z
    expected = np.array([[g, -g, 0], [-g, 2 * g, -g], [0, -g, g]])
    np.testing.assert_allclose(y, expected, rtol=1e-12)
    np.testing.assert_allclose(y.sum(axis=1), 0, atol=1e-9)


def test_closed_feeder_is_one_grid_connected_island(feeder):
    islands = detect_islands(feeder, feeder.default_switch_states())
    assert len(islands) == 1
    assert islands[0].grid_connected
    assert islands[0].energized
    assert len(islands[0].inverters) == 9


def test_islanding_switch_separates_substation(feeder):
    islands = detect_islands(feeder, _open(feeder, "sw_island"))
    assert [isl.buses[0] for isl in islands] == ["sub", "mg1_hub"]
    assert islands[0].grid_connected and not islands[0].inverters
    assert not islands[1].grid_connected
    assert islands[1].energized


def test_microgrid_split_gives_islands_in_bus_order(feeder):
    islands = detect_islands(feeder, _open(feeder, "sw_island", "sw_1_2", "sw_2_3"))
    assert [isl.inverters for isl in islands] == [(), ("1", "2", "3"), ("4", "5", "6"), ("7", "8", "9")]
    assert "b_shed" in islands[2].buses


def test_island_without_grid_forming_unit_is_deenergized(feeder):
    islands = detect_islands(feeder, _open(feeder, "sw_island", "sw_1_2"), out_of_service=["1"])
    mg1 = next(isl for isl in islands if "mg1_hub" in isl.buses)
    assert not mg1.energized


def test_unknown_switch_is_rejected(feeder):
    states = feeder.default_switch_states()
    states["sw_missing"] = True
    with pytest.raises(ConfigurationError):
        compile_topology(feeder, states)


def test_missing_switch_state_is_rejected(feeder):
    states = feeder.default_switch_states()
    del states["sw_1_2"]
    with pytest.raises(ConfigurationError):
        detect_islands(feeder, states)


def test_constant_impedance_divider_matches_closed_form():
    net = _make_chain(2, z=0.01 + 0.01j)
    topo = compile_topology(net, {})
    e, z_s = 1.0 + 0j, 0.1j
    y_load = 0.5 - 0.2j
    sol = solve_island(topo.admittances[0], [Source(0, e, z_s)], np.zeros(2), shunts=np.array([0, y_load]))

    current = e / (z_s + 0.01 + 0.01j + 1 / y_load)
    np.testing.assert_allclose(sol.v[0], e - current * z_s, atol=1e-9)
    np.testing.assert_allclose(sol.v[1], current / y_load, atol=1e-9)
    np.testing.assert_allclose(sol.source_current[0], current, atol=1e-9)


def test_newton_agrees_with_gauss_seidel():
    net = _make_chain(3)
    y = compile_topology(net, {}).admittances[0]
    sources = [(0, 1.02 + 0j, 0.05j), (2, 1.0 * np.exp(0.02j), 0.08j)]
    injections = np.array([0.0, -(0.3 + 0.1j), 0.1 - 0.05j])

    sol = solve_island(y, [Source(b, e, z) for b, e, z in sources], injections)
    np.testing.assert_allclose(sol.v, gauss_seidel(y, sources, injections), atol=1e-7)
    assert sol.mismatch < 1e-8


def test_power_balance_closes_on_losses():
    net = _make_chain(4, z=0.02 + 0.03j)
    y = compile_topology(net, {}).admittances[0]
    injections = np.array([0, -(0.2 + 0.05j), -(0.1 + 0.02j), 0.05 + 0j])
    sol = solve_island(y, [Source(0, 1.0 + 0j, 0.1j)], injections)
    balance = np.sum(sol.source_power) + np.sum(injections)
    assert balance == pytest.approx(line_losses(y, sol.v), abs=1e-8)


def test_deenergized_island_holds_nan():
    net = _make_chain(3, switched=True)
    topo = compile_topology(net, {"sw": False})
    sol = solve_network(topo, [Source(2, 1.0 + 0j, 0.1j)], np.zeros(3))
    assert np.isnan(sol.v[0])
    assert np.all(np.isfinite(sol.v[1:]))
    assert list(sol.energized) == [False, True, True]


def test_warm_start_reaches_same_solution():
    net = _make_chain(3)
    y = compile_topology(net, {}).admittances[0]
    injections = np.array([0, -(0.4 + 0.1j), -(0.2 + 0.1j)])
    src = [Source(0, 1.0 + 0j, 0.1j)]
    cold = solve_island(y, src, injections)
    warm = solve_island(y, src, injections, v0=cold.v)
    np.testing.assert_allclose(warm.v, cold.v, atol=1e-9)
    assert warm.iterations <= 1


def test_infeasible_load_raises_divergence_with_time():
    net = _make_chain(2)
    y = compile_topology(net, {}).admittances[0]
    with pytest.raises(SolverDivergenceError) as exc:
        solve_island(y, [Source(0, 1.0 + 0j, 0.1j)], np.array([0, -50.0 - 20j]), time=1.25)
    assert exc.value.time == 1.25
    assert exc.value.exit_code == 3


def test_island_without_source_is_a_configuration_error():
    y = compile_topology(_make_chain(2), {}).admittances[0]
    with pytest.raises(ConfigurationError):
        solve_island(y, [], np.zeros(2))


def test_load_vectors_split_constant_power_and_impedance():
    net = NetworkModel(
        buses=[Bus(id="a", v_nominal=4160.0), Bus(id="b", v_nominal=4160.0)],
        lines=[Line(id="l", from_bus="a", to_bus="b", r=0.01, x=0.01)],
        loads=[
            Load(id="pq", bus="a", p_kw=200.0, q_kvar=50.0),
            Load(id="z", bus="b", p_kw=100.0, q_kvar=50.0, model=LoadModel.CONSTANT_IMPEDANCE),
            Load(id="off", bus="b", p_kw=999.0),
        ],
    )
    p = np.array([ld.p_kw for ld in net.loads])
    q = np.array([ld.q_kvar for ld in net.loads])
    demand, shunts = load_vectors(net, p, q, np.array([True, True, False]))
    np.testing.assert_allclose(demand, [0.2 + 0.05j, 0])
    np.testing.assert_allclose(shunts, [0, 0.1 - 0.05j])


def _random_radial(rng) -> tuple[NetworkModel, list, np.ndarray]:
    n = int(rng.integers(2, 7))
    buses = [Bus(id=f"b{k}", v_nominal=4160.0) for k in range(n)]
    lines = [
        Line(id=f"l{k}", from_bus=f"b{int(rng.integers(0, k))}", to_bus=f"b{k}",
             r=float(rng.uniform(0.01, 0.05)), x=float(rng.uniform(0.01, 0.05)))
        for k in range(1, n)
    ]
    sources = [(0, 1.0 + 0j, 0.02 + 0.1j)]
    if n > 2 and rng.random() < 0.5:
        sources.append((n - 1, 1.01 * np.exp(0.02j), 0.02 + 0.15j))
    injections = -(rng.uniform(0.02, 0.15, n) + 1j * rng.uniform(0.0, 0.05, n))
    return NetworkModel(buses=buses, lines=lines), sources, injections


@pytest.mark.parametrize("seed", range(100))
def test_newton_matches_gauss_seidel_on_random_radial_feeders(seed):
    net, sources, injections = _random_radial(np.random.default_rng(seed))
    y = compile_topology(net, {}).admittances[0]
    sol = solve_island(y, [Source(b, e, z) for b, e, z in sources], injections)
    np.testing.assert_allclose(sol.v, gauss_seidel(y, sources, injections, tol=1e-12), atol=1e-8)


def test_solution_does_not_depend_on_bus_order():
    net = _make_chain(5, z=0.02 + 0.03j)
    injections = {"b1": -(0.2 + 0.05j), "b2": 0.05 + 0j, "b3": -(0.1 + 0.02j), "b4": -(0.15 + 0.05j)}
    feeds = {"b0": (1.0 + 0j, 0.1j), "b3": (1.01 * np.exp(0.01j), 0.12j)}

    def solve(model):
        order = model.bus_index()
        sources = [Source(order[b], e, z) for b, (e, z) in feeds.items()]
        s = np.array([injections.get(b.id, 0j) for b in model.buses])
        sol = solve_network(compile_topology(model, {}), sources, s)
        return {b.id: sol.v[k] for k, b in enumerate(model.buses)}

    shuffled = net.model_copy(update={"buses": [net.buses[k] for k in (3, 0, 4, 2, 1)],
                                      "lines": list(reversed(net.lines))})
    base, other = solve(net), solve(shuffled)
    for bus_id, v in base.items():
        assert other[bus_id] == pytest.approx(v, abs=1e-10)


def test_opening_a_switch_leaves_other_islands_untouched():
    net = NetworkModel(
        buses=[Bus(id=f"b{k}", v_nominal=4160.0) for k in range(5)],
        switches=[Switch(name="sw")],
        lines=[
            Line(id="l01", from_bus="b0", to_bus="b1", r=0.01, x=0.02),
            Line(id="l12", from_bus="b1", to_bus="b2", r=0.01, x=0.02, switch="sw"),
            Line(id="l34", from_bus="b3", to_bus="b4", r=0.02, x=0.01),
        ],
    )
    sources = [Source(0, 1.0 + 0j, 0.1j), Source(3, 1.02 + 0j, 0.08j)]
    injections = -np.array([0, 0.1 + 0.02j, 0.2 + 0.05j, 0, 0.3 + 0.1j])
    closed = solve_network(compile_topology(net, {"sw": True}), sources, injections)
    opened = solve_network(compile_topology(net, {"sw": False}), sources, injections)
    np.testing.assert_array_equal(opened.v[3:], closed.v[3:])
    np.testing.assert_array_equal(opened.source_power[1], closed.source_power[1])
    assert np.isnan(opened.v[2])
    assert abs(opened.v[1] - closed.v[1]) > 1e-6


def test_network_file_round_trip(tmp_path, feeder):
    path = tmp_path / "feeder.json"
    save_network(feeder, path)
    again = load_network(path)
    assert again == feeder
    assert network_hash(again) == network_hash(feeder)


def test_network_file_errors_carry_a_pointer(tmp_path, feeder):
    path = tmp_path / "broken.json"
    data = feeder.model_dump(mode="json")
    data["lines"][0]["from_bus"] = "nowhere"
    path.write_text(json.dumps(data))
    with pytest.raises(ScenarioValidationError) as exc:
        load_network(path)
    assert exc.value.pointer.startswith("network")
