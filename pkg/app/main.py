"""
FastAPI application entrypoint.
Exposes the scenario library and synchronous runs over HTTP.
"""
import logging

from fastapi import FastAPI

import app as package
from app.api.v1 import router as v1_router
from app.core.config import configure_logging

configure_logging()
logger = logging.getLogger(__name__)

app = FastAPI(title="LFC Microgrid Simulator", version=package.__version__)

# Register API routes
v1_router.include_v1_routes(app)


@app.get("/health")
async def health():
    return {"status": "ok", "version": package.__version__}


if __name__ == "__main__":
    import uvicorn
    uvicorn.run("app.main:app", host="localhost", port=8000, reload=True)
