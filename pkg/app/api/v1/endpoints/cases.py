"""Library case listing."""
from fastapi import APIRouter, HTTPException

from app.core.errors import ScenarioValidationError
from app.sim import library

router = APIRouter()


def _case_view(name: str, scenario) -> dict:
    return {
        "name": name,
        "mode": scenario.mode.value,
        "network": scenario.network,
        "duration": scenario.duration,
        "events": len(scenario.events),
        "description": scenario.description,
    }


@router.get("/cases", tags=["cases"])
def list_cases():
    return [_case_view(name, sc) for name, sc in library.case_library().items()]


@router.get("/cases/{name}", tags=["cases"])
def get_case(name: str):
    """Full scenario document of one case, ready to edit and post back."""
    try:
        scenario = library.get_case(name)
    except ScenarioValidationError:
        raise HTTPException(status_code=404, detail=f"Case {name!r} not found")
    out = scenario.model_dump(mode="json")
    out["config_hash"] = scenario.config_hash()
    return out
