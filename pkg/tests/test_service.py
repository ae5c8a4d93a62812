import pytest
from fastapi.testclient import TestClient

from fermidiag.service import app


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json() == {"status": "ok"}


def test_info_reports_toy_numbers(client):
    resp = client.post("/info", json={"config": {}})
    assert resp.status_code == 200
    data = resp.json()
    assert data["particle_count"] == 7
    assert data["transfer_count"] == 3
    assert data["patch_count"] == 6
    assert data["mode_count_estimate"] == 12
    assert data["generator_norm_bound"] > 0
    ks = {tuple(t["k"]) for t in data["transfers"]}
    assert ks == {(1, 0, 0), (0, 1, 0), (0, 0, 1)}


def test_info_zero_potential_bound(client):
    resp = client.post(
        "/info", json={"config": {"potential": {"kind": "zero"}}}
    )
    assert resp.status_code == 200
    assert resp.json()["generator_norm_bound"] == 0.0


def test_nq_explicit_momenta(client):
    body = {
        "config": {},
        "methods": ["bosonized-closed", "oracle"],
        "q_list": [[0, 0, 2], [0, 0, 1]],
    }
    resp = client.post("/nq", json=body)
    assert resp.status_code == 200
    records = resp.json()["records"]
    assert len(records) == 4
    assert records[0]["q"] == [0, 0, 2]
    assert records[0]["side"] == "outside"
    assert records[2]["side"] == "inside"
    for rec in records:
        assert rec["value"] > 0.0
    closed = {tuple(r["q"]): r["value"] for r in records if r["method"] == "bosonized-closed"}
    oracle = {tuple(r["q"]): r["value"] for r in records if r["method"] == "oracle"}
    for q in closed:
        # closed form approximates the oracle at weak coupling
        assert closed[q] == pytest.approx(oracle[q], rel=0.05)


def test_nq_all_in_shell(client):
    body = {"config": {}, "methods": ["bosonized-closed"], "q_list": "all-in-shell"}
    resp = client.post("/nq", json=body)
    assert resp.status_code == 200
    records = resp.json()["records"]
    assert len(records) == 32  # every claimed shell momentum
    # qualitative profile: positive near the Fermi surface for coupled
    # momenta, zero where no transfer reaches
    values = {tuple(r["q"]): r["value"] for r in records}
    assert values[(0, 0, 2)] > 0.0
    assert values[(1, 1, 1)] == 0.0
    assert max(values.values()) > 0.0


def test_nq_empty_q_list(client):
    resp = client.post("/nq", json={"config": {}, "q_list": []})
    assert resp.status_code == 200
    assert resp.json()["records"] == []


def test_nq_uses_config_defaults(client):
    config = {"q_list": [[0, 0, 2]], "methods": ["bosonized-closed"]}
    resp = client.post("/nq", json={"config": config})
    assert resp.status_code == 200
    records = resp.json()["records"]
    assert len(records) == 1
    assert records[0]["method"] == "bosonized-closed"


def test_validation_errors_are_422(client):
    resp = client.post("/info", json={"config": {"patch_count": 5}})
    assert resp.status_code == 422
    detail = resp.json()["detail"]
    assert any("patch_count" in str(item["loc"]) for item in detail)
    resp = client.post("/nq", json={"config": {}, "n_max": 3})
    assert resp.status_code == 422


def test_domain_errors_are_400(client):
    # a larger Fermi ball needs more oracle modes than the cap allows
    body = {
        "config": {"k_fermi": 1.415},
        "methods": ["oracle"],
        "q_list": [[0, 0, 2]],
    }
    resp = client.post("/nq", json=body)
    assert resp.status_code == 400
    assert "mode" in resp.json()["detail"]


def test_patch_export(client):
    resp = client.post("/patches/export", json={"config": {}})
    assert resp.status_code == 200
    summary = resp.json()["summary"]
    assert summary["patch_count"] == 6
    assert len(summary["patches"]) == 6
    assert all(len(t["plus"]) == len(t["minus"]) for t in summary["transfers"])


def test_verify_passes_on_toy_config(client):
    resp = client.post("/verify", json={"config": {}, "deep": False, "seed": 0})
    assert resp.status_code == 200
    data = resp.json()
    assert data["passed"] is True
    names = {c["name"] for c in data["checks"]}
    assert "car-exactness" in names
    assert "series-order-oracle" in names
    assert all(c["passed"] for c in data["checks"])
