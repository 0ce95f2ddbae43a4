"""
Synchronous simulation runs.
A run executes in a worker thread and returns the metric summary; with a
``persist`` body flag its artifacts are written under the output root as well.
"""
import asyncio
import logging

from fastapi import APIRouter, Depends, HTTPException, status

from app.api.deps import settings_dependency
from app.core.config import Settings
from app.core.errors import SimulationError, SolverDivergenceError
from app.db import results
from app.schemas.run import RunCreate, RunManifest, override_map
from app.schemas.scenario import Scenario, apply_overrides
from app.sim import library, metrics
from app.sim.scenario import Simulation

logger = logging.getLogger(__name__)

router = APIRouter()


def _scenario_from(body: RunCreate) -> Scenario:
    if (body.case is None) == (body.scenario is None):
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
                            detail={"error": "ScenarioValidationError", "pointer": "case",
                                    "message": "give exactly one of `case` or `scenario`"})
    scenario = library.get_case(body.case) if body.case is not None else body.scenario
    overrides = override_map(body.overrides, body.mode, body.seed)
    return apply_overrides(scenario, overrides) if overrides else scenario


def _run(scenario: Scenario, body: RunCreate, settings: Settings) -> dict:
    network = library.resolve_network(scenario.network)
    record = Simulation(scenario, network).run()
    summary = metrics.summarize(record, scenario.steady_window, scenario=scenario.name, mode=scenario.mode.value)
    manifest = RunManifest.build(scenario, network)
    out = {"summary": summary.to_dict(), "manifest": manifest.model_dump(mode="json")}
    if body.persist:
        folder = results.run_directory(settings.output_root / "api", f"{scenario.name}_{manifest.config_hash[:12]}")
        results.write_run(record, summary, manifest, folder)
        out["artifacts"] = str(folder)
    if body.include_timeseries:
        frame = record.frame.astype(object)
        out["timeseries"] = frame.where(frame.notna(), None).to_dict(orient="list")
    return out


@router.post("/runs", tags=["runs"])
async def create_run(body: RunCreate, settings: Settings = Depends(settings_dependency)):
    try:
        scenario = _scenario_from(body)
        return await asyncio.to_thread(_run, scenario, body, settings)
    except SolverDivergenceError as e:
        logger.error("run diverged: %s", e)
        raise HTTPException(status_code=500, detail=e.to_dict())
    except SimulationError as e:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=e.to_dict())
