"""HTTP API through FastAPI's test client."""
import pytest
from fastapi.testclient import TestClient

from app.db import results
from app.main import app
from app.sim import library

SHORT = {"duration": "0.2", "events": "[]"}


@pytest.fixture
def client():
    return TestClient(app)


def test_health(client):
    assert client.get("/health").json()["status"] == "ok"


def test_list_cases(client):
    response = client.get("/api/v1/cases")
    assert response.status_code == 200
    names = [c["name"] for c in response.json()]
    assert names == list(library.case_library())
    lfc = next(c for c in response.json() if c["name"] == "case4_lfc")
    assert lfc["mode"] == "FullyCoordinated"
    assert lfc["events"] == 2


def test_get_case_carries_config_hash(client):
    body = client.get("/api/v1/cases/case4_lfc").json()
    assert body["config_hash"] == library.get_case("case4_lfc").config_hash()
    assert body["network"] == "reduced_feeder"


def test_unknown_case_is_404(client):
    assert client.get("/api/v1/cases/case9").status_code == 404


def test_run_needs_exactly_one_source(client):
    response = client.post("/api/v1/runs", json={})
    assert response.status_code == 422
    assert response.json()["detail"]["pointer"] == "case"


def test_run_rejects_unknown_fields(client):
    assert client.post("/api/v1/runs", json={"case": "case4_lfc", "speed": 2}).status_code == 422


def test_run_unknown_override_is_422(client):
    response = client.post("/api/v1/runs", json={"case": "case4_lfc", "overrides": {"nope": "1"}})
    assert response.status_code == 422
    assert response.json()["detail"]["pointer"] == "nope"


def test_short_run_returns_summary(client):
    response = client.post("/api/v1/runs", json={"case": "case4_lfc", "overrides": SHORT, "include_timeseries": True})
    assert response.status_code == 200, response.text
    body = response.json()
    assert body["summary"]["scenario"] == "case4_lfc"
    assert body["summary"]["windows"][0]["label"] == "steady"
    assert body["manifest"]["scenario"]["duration"] == 0.2
    assert "artifacts" not in body
    series = body["timeseries"]
    assert len(series["t_s"]) == len(series["f_1_Hz"]) > 0


def test_persisted_run_writes_artifacts(client, tmp_path):
    response = client.post("/api/v1/runs", json={"case": "case1_no_control", "mode": "Uncoordinated",
                                                 "overrides": SHORT, "persist": True})
    assert response.status_code == 200, response.text
    body = response.json()
    assert body["manifest"]["scenario"]["mode"] == "Uncoordinated"
    folder = tmp_path / "runs" / "api"
    assert folder.is_dir()
    (run_dir,) = list(folder.iterdir())
    assert str(run_dir) == body["artifacts"]
    assert (run_dir / results.MANIFEST_FILE).is_file()
