import math

import pytest
from fastapi.testclient import TestClient

from app.main import app


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def test_status(client):
    response = client.get("/api/torus/status")
    assert response.status_code == 200
    body = response.json()
    assert set(body["patterns"]) == {"SDD", "SSD"}
    assert body["network"]["m"] == 3
    assert body["perturb"]["delta"] == pytest.approx(0.01)


def test_frame(client):
    response = client.post("/api/torus/frame", json={"pattern": "sdd"})
    assert response.status_code == 200
    body = response.json()
    assert body["pattern"] == "SDD"
    assert body["Omega"] == pytest.approx([0.0, -2.0, -2.0])
    assert body["hyperbolic"] is True
    assert len(body["R"]) == 6


def test_frame_is_cached(client):
    first = client.post("/api/torus/frame", json={"pattern": "SSD"}).json()
    second = client.post("/api/torus/frame", json={"pattern": "SSD"}).json()
    assert first == second
    assert first["Omega"] == pytest.approx([0.0, 0.0, -2.0])


@pytest.mark.parametrize("pattern", ["SXD", "SD", ""])
def test_frame_rejects_bad_pattern(client, pattern):
    response = client.post("/api/torus/frame", json={"pattern": pattern})
    assert response.status_code == 400
    assert "pattern" in response.json()["detail"]


def test_validation_error_is_400(client):
    response = client.post("/api/torus/normalform", json={"pattern": "SDD", "lmax": 0})
    assert response.status_code == 400
    assert response.json()["detail"][0]["loc"][-1] == "lmax"


def test_normal_form(client):
    response = client.post("/api/torus/normalform", json={"pattern": "SDD", "perturb": {"alpha": math.pi / 2}})
    assert response.status_code == 200
    body = response.json()
    assert body["discrepancy"]["max"] < 1e-10
    assert body["f1"]
    assert all(len(entry["l"]) == 3 for entry in body["e1"])


def test_normal_form_overflow_is_422(client):
    response = client.post("/api/torus/normalform", json={"pattern": "SDD", "lmax": 1})
    assert response.status_code == 422
    assert response.json()["detail"].startswith("LmaxOverflow")


def test_fixed_points(client):
    response = client.post("/api/torus/fixed-points", json={"pattern": "SDD"})
    assert response.status_code == 200
    body = response.json()
    assert body["degenerate"] is False
    assert [point["stability"] for point in body["points"]] == ["unstable", "stable", "unstable", "stable"]


def test_fixed_points_degenerate(client):
    response = client.post("/api/torus/fixed-points", json={"pattern": "SDD", "perturb": {"beta": math.pi / 4}})
    assert response.json()["degenerate"] is True


def test_fixed_points_unsupported_pattern(client):
    response = client.post("/api/torus/fixed-points", json={"pattern": "DDD"})
    assert response.status_code == 400
