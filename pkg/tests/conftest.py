"""Shared fixtures; full library runs are cached per test session."""
import pytest

from app.sim import library
from app.sim.scenario import run_with_summary


@pytest.fixture(autouse=True)
def _isolated_output(tmp_path, monkeypatch):
    from app.core.config import get_settings

    monkeypatch.setenv("LFC_OUTPUT_ROOT", str(tmp_path / "runs"))
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture(scope="session")
def feeder():
    return library.resolve_network("reduced_feeder")


@pytest.fixture(scope="session")
def case_runs(feeder):
    """Lazily run library cases once per session: ``case_runs("case4_lfc")``."""
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = run_with_summary(library.get_case(name), feeder)
        return cache[name]

    return get
