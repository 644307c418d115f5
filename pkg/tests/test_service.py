import json

import pytest
from fastapi.testclient import TestClient

from cpdp import __version__
from cpdp.service.app import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def synth_payload(tmp_path) -> dict:
    return {
        "config": {
            "out_dir": str(tmp_path / "out"),
            "mode": "ja",
            "gp": {"lag": 5, "m_inducing": 8, "max_steps": 10, "inducing_steps": 0},
            "ik": {"swarm_size": 10, "iterations": 20, "tolerance": 0.01, "restarts": 1},
            "data": {
                "synth": {
                    "angles": [
                        {"center": 0.3, "amplitude": 0.3, "frequency_hz": 0.25},
                        {"center": 0.0, "amplitude": 0.25, "frequency_hz": 0.2},
                        {"center": 0.1, "amplitude": 0.2, "frequency_hz": 0.3},
                        {"center": 1.3, "amplitude": 0.3, "frequency_hz": 0.25},
                    ],
                    "duration_s": 3.0,
                    "rate_hz": 10.0,
                    "seed": 5,
                }
            },
        }
    }


def test_health(client):
    resp = client.get("/v1/health")
    assert resp.status_code == 200
    assert resp.json() == {"status": "ok", "version": __version__}


def test_synth_roundtrip(client, tmp_path):
    resp = client.post("/v1/synth", json=synth_payload(tmp_path))
    assert resp.status_code == 200
    body = resp.json()
    assert body["frames"] == 31
    assert body["trajectory_file"].endswith("synthetic.csv")


def test_fit_without_data_maps_to_400(client, tmp_path):
    payload = synth_payload(tmp_path)
    payload["config"]["data"] = {}
    resp = client.post("/v1/fit", json=payload)
    assert resp.status_code == 400
    body = resp.json()
    assert body["code"] == "config_error"
    assert "trajectory_file or synth" in body["message"]


def test_predict_without_models_maps_to_400(client, tmp_path):
    resp = client.post("/v1/predict", json=synth_payload(tmp_path))
    assert resp.status_code == 400
    assert resp.json()["code"] == "config_error"


def test_invalid_mode_rejected_by_validation(client, tmp_path):
    payload = synth_payload(tmp_path)
    payload["config"]["mode"] = "quaternion"
    resp = client.post("/v1/synth", json=payload)
    assert resp.status_code == 422


def test_fit_then_predict(client, tmp_path):
    payload = synth_payload(tmp_path)
    fit = client.post("/v1/fit", json=payload)
    assert fit.status_code == 200
    assert len(fit.json()["files"]) == 4
    pred = client.post("/v1/predict", json=payload)
    assert pred.status_code == 200
    body = pred.json()
    assert body["steps"] == 5
    assert len(body["rejected_counts"]) == 5
