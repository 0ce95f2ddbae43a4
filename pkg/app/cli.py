"""Command-line front end.

    lfc run case4_lfc --out runs/case4
    lfc run --scenario my_case.json --mode Uncoordinated --override gains.alpha=2
    lfc library --workers 4
    lfc compare case1_no_control case2_uncoordinated case3_gfm_coordinated case4_lfc
    lfc sweep --samples 5 --workers 4
    lfc validate bad_scenario.json
    lfc serve

Exit codes: 0 success, 2 validation error, 3 solver divergence. Errors are
printed to stderr as JSON and, when an output directory is known, written to
``error.json`` there.
"""
from concurrent.futures import ProcessPoolExecutor
from functools import wraps
from pathlib import Path
from typing import Optional
import json
import logging
import sys

import click
import pandas as pd
from pydantic import ValidationError

from app.core.config import configure_logging, get_settings
from app.core.errors import ScenarioValidationError, SimulationError, pointer_from_loc
from app.db import results
from app.schemas.run import RunManifest, RunRequest, Subcommand
from app.schemas.scenario import ControlMode, Scenario, TopologyKind, apply_overrides
from app.sim import library, metrics
from app.sim.consensus import random_connected_topology
from app.sim.scenario import Simulation, validate_scenario

logger = logging.getLogger(__name__)

MODES = [m.value for m in ControlMode]


def parse_overrides(pairs: tuple[str, ...]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ScenarioValidationError("override must look like key=value", f"--override {pair}")
        out[key.strip()] = value.strip()
    return out


def prepare(ref: str, request: RunRequest) -> Scenario:
    """Resolve a scenario reference and apply the request's overrides."""
    scenario = library.resolve_scenario(ref)
    overrides = request.override_map()
    return apply_overrides(scenario, overrides) if overrides else scenario


def execute(scenario: Scenario, out: Path) -> metrics.MetricSummary:
    """Run one scenario and write its artifacts into `out`."""
    network = library.resolve_network(scenario.network)
    record = Simulation(scenario, network).run()
    summary = metrics.summarize(record, scenario.steady_window, scenario=scenario.name, mode=scenario.mode.value)
    results.write_run(record, summary, RunManifest.build(scenario, network), results.run_directory(out, ""))
    return summary


def _execute_json(payload: str, out: str) -> dict:
    # process-pool entry point, plain data in and out
    return execute(Scenario.model_validate_json(payload), Path(out)).to_dict()


def run_many(scenarios: list[Scenario], root: Path, workers: int) -> list[metrics.MetricSummary]:
    """Run scenarios into ``root/<name>``; results come back in input order."""
    if workers > 1 and len(scenarios) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            jobs = [pool.submit(_execute_json, s.model_dump_json(), str(root / s.name)) for s in scenarios]
            return [metrics.MetricSummary.from_dict(job.result()) for job in jobs]
    return [execute(s, root / s.name) for s in scenarios]


def check_comparable(scenarios: list[Scenario]) -> None:
    """Compared cases must share the network and the event script."""
    first = scenarios[0]
    script = [e.model_dump(mode="json") for e in first.events]
    for k, s in enumerate(scenarios[1:], start=1):
        if s.network != first.network:
            raise ScenarioValidationError(
                f"{s.name} uses network {s.network!r}, {first.name} uses {first.network!r}", f"cases[{k}].network"
            )
        if [e.model_dump(mode="json") for e in s.events] != script:
            raise ScenarioValidationError(f"{s.name} has a different event script than {first.name}", f"cases[{k}].events")


def sweep_point(base_json: str, links: int, seed: int, band: float, hold: float) -> dict:
    """Run the sweep base case on one random topology."""
    base = Scenario.model_validate_json(base_json)
    topology = base.topology.model_copy(update={"kind": TopologyKind.RANDOM, "links": links, "seed": seed})
    scenario = base.model_copy(update={"topology": topology, "name": f"{base.name}_{links}_{seed}"})
    record = Simulation(scenario, library.resolve_network(scenario.network)).run()
    summary = metrics.summarize(record, scenario.steady_window, band, hold, scenario=scenario.name)
    first = summary.windows[0].scopes["system"]
    return {"links": links, "seed": seed, "convergence_time_s": first.convergence_time_s, "mpsi_steady": first.mpsi}


def run_sweep(
    base: Scenario,
    links: range,
    samples: int,
    seed: int = 0,
    workers: int = 1,
    band: float = metrics.DEFAULT_BAND,
    hold: float = metrics.DEFAULT_HOLD,
) -> pd.DataFrame:
    """Links-vs-convergence dataset, sorted by (links, seed) whatever the worker order."""
    n = len(library.resolve_network(base.network).inverters)
    # fails fast (exit 2) on link counts no connected simple graph can have
    for count in (links.start, links[-1]):
        random_connected_topology(n, count, 0)
    points = [(k, seed + s) for k in links for s in range(samples)]
    payload = base.model_dump_json()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            jobs = [pool.submit(sweep_point, payload, k, s, band, hold) for k, s in points]
            rows = [job.result() for job in jobs]
    else:
        rows = [sweep_point(payload, k, s, band, hold) for k, s in points]
    return pd.DataFrame(rows).sort_values(["links", "seed"], kind="stable").reset_index(drop=True)


def _guarded(func):
    """Map simulator errors to the exit-code contract."""

    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            try:
                return func(*args, **kwargs)
            except ValidationError as e:
                err = e.errors()[0]
                raise ScenarioValidationError(err["msg"], pointer_from_loc(err["loc"])) from e
        except SimulationError as e:
            logger.error("%s", e)
            out = kwargs.get("out")
            results.write_error(e, Path(out) if out else None)
            click.echo(json.dumps(e.to_dict()), err=True)
            sys.exit(e.exit_code)

    return wrapper


def _default_out(name: str) -> Path:
    return get_settings().output_root / name


def _workers(value: Optional[int]) -> int:
    return value if value is not None else get_settings().workers


@click.group()
@click.option("--log-level", default=None, help="Overrides LFC_LOG_LEVEL.")
def cli(log_level: Optional[str]) -> None:
    """Leader-follower secondary control simulator for inverter microgrids."""
    configure_logging(log_level.upper() if log_level else None)


@cli.command()
@click.argument("ref", required=False)
@click.option("--scenario", "scenario_ref", default=None, help="Library case name, scenario file or manifest.")
@click.option("--mode", type=click.Choice(MODES), default=None)
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Output directory.")
@click.option("--seed", type=int, default=None)
@click.option("--override", "overrides", multiple=True, help="Schema override key=value (repeatable).")
@_guarded
def run(ref, scenario_ref, mode, out, seed, overrides) -> None:
    """Run one scenario and write timeseries.csv, summary.json and manifest.json."""
    ref = scenario_ref or ref
    if not ref:
        raise ScenarioValidationError("no scenario given", "--scenario")
    request = RunRequest(subcommand=Subcommand.RUN, scenarios=[ref], out=out, seed=seed,
                         mode=mode, overrides=parse_overrides(overrides))
    scenario = prepare(ref, request)
    out = out or _default_out(scenario.name)
    try:
        summary = execute(scenario, out)
    except SimulationError as e:
        results.write_error(e, out)
        raise
    click.echo(metrics.summary_table(summary))
    click.echo(f"artifacts in {out}")


@cli.command()
@click.argument("ref", required=False)
@click.option("--scenario", "scenario_ref", default=None)
@click.option("--mode", type=click.Choice(MODES), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--override", "overrides", multiple=True)
@_guarded
def validate(ref, scenario_ref, mode, seed, overrides) -> None:
    """Check a scenario against the schema, its network and its fleet without running it."""
    ref = scenario_ref or ref
    if not ref:
        raise ScenarioValidationError("no scenario given", "--scenario")
    request = RunRequest(subcommand=Subcommand.VALIDATE, scenarios=[ref], seed=seed,
                         mode=mode, overrides=parse_overrides(overrides))
    scenario = prepare(ref, request)
    validate_scenario(scenario, library.resolve_network(scenario.network))
    click.echo(json.dumps({"valid": True, "scenario": scenario.name, "config_hash": scenario.config_hash()}))


@cli.command(name="library")
@click.option("--case", "cases", multiple=True, help="Restrict to these cases (repeatable).")
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--workers", type=int, default=None, help="Parallel processes (default LFC_WORKERS).")
@click.option("--list", "list_only", is_flag=True, help="Only list the cases.")
@_guarded
def library_cmd(cases, out, workers, list_only) -> None:
    """Run the shipped case set (or a subset) into one directory per case."""
    available = library.case_library()
    if list_only:
        for name, scenario in available.items():
            click.echo(f"{name:24s} {scenario.mode.value:18s} {scenario.description}")
        return
    names = list(cases) or list(available)
    request = RunRequest(subcommand=Subcommand.LIBRARY, scenarios=names, out=out, workers=_workers(workers))
    scenarios = [library.get_case(n) for n in request.scenarios]
    root = out or _default_out("library")
    for summary in run_many(scenarios, root, request.workers):
        click.echo(f"{summary.scenario}: done")
    click.echo(f"artifacts in {root}")


@cli.command()
@click.argument("refs", nargs=-1, required=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--workers", type=int, default=None)
@click.option("--override", "overrides", multiple=True)
@_guarded
def compare(refs, out, workers, overrides) -> None:
    """Run several cases on the same event script and print one row per case."""
    request = RunRequest(subcommand=Subcommand.COMPARE, scenarios=list(refs), out=out,
                         overrides=parse_overrides(overrides), workers=_workers(workers))
    scenarios = [prepare(ref, request) for ref in refs]
    check_comparable(scenarios)
    root = results.run_directory(out or _default_out("compare"), "")
    summaries = run_many(scenarios, root, request.workers)
    table = metrics.comparison_table(summaries)
    (root / "compare.txt").write_text(table + "\n")
    (root / "compare.json").write_text(json.dumps([s.to_dict() for s in summaries], indent=2) + "\n")
    click.echo(table)


@cli.command()
@click.option("--scenario", "scenario_ref", default="topology_sweep", show_default=True)
@click.option("--links-min", type=int, default=8, show_default=True)
@click.option("--links-max", type=int, default=36, show_default=True)
@click.option("--samples", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--workers", type=int, default=None)
@_guarded
def sweep(scenario_ref, links_min, links_max, samples, seed, out, workers) -> None:
    """Random connected topologies per link count; writes sweep.csv."""
    if samples < 1:
        raise ScenarioValidationError("need at least one sample per link count", "--samples")
    if links_max < links_min:
        raise ScenarioValidationError("links-max is below links-min", "--links-max")
    request = RunRequest(subcommand=Subcommand.SWEEP, scenarios=[scenario_ref], out=out, seed=seed,
                         workers=_workers(workers))
    base = library.resolve_scenario(scenario_ref)
    frame = run_sweep(base, range(links_min, links_max + 1), samples, seed, request.workers)
    root = results.run_directory(out or _default_out("sweep"), "")
    results.write_table(frame, root / "sweep.csv")
    click.echo(frame.to_string(index=False))


@cli.command()
@click.option("--port", type=int, default=None, help="Defaults to PORT.")
def serve(port: Optional[int]) -> None:
    """Start the HTTP API."""
    import uvicorn

    uvicorn.run("app.main:app", host="0.0.0.0", port=port or get_settings().port, reload=False)


def main() -> None:
    cli(prog_name="lfc")


if __name__ == "__main__":
    main()
