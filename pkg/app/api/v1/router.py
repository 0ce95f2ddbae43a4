"""Router agrupador v1: registra rutas v1 en la app principal."""
from fastapi import FastAPI

from .endpoints import cases as cases_module
from .endpoints import runs as runs_module


def include_v1_routes(app: FastAPI) -> None:
    """Register v1 routers on the FastAPI app."""
    app.include_router(cases_module.router, prefix="/api/v1")
    app.include_router(runs_module.router, prefix="/api/v1")
