from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from ragtree.bench import save_dataset
from ragtree.service import create_app
from ragtree.synth import synthesize_dataset

from conftest import write_mock_script


@pytest.fixture(scope="module")
def client() -> TestClient:
    return TestClient(create_app())


@pytest.fixture
def demo_paths(tmp_path):
    dataset = tmp_path / "demo.jsonl"
    save_dataset(synthesize_dataset(domain="demo", n_datapoints=3, n_unique_knowledge=8, seed=2), dataset)
    mock = write_mock_script(tmp_path / "mock.json")
    return dataset, mock, tmp_path


def test_health(client):
    body = client.get("/v1/health").json()
    assert body["status"] == "ok"
    assert body["service"] == "ragtree"


def test_stats_endpoint(client, demo_paths):
    dataset, _, _ = demo_paths
    body = client.post("/v1/stats", json={"dataset_path": str(dataset)}).json()
    assert body["status"] == "ok"
    assert body["rows"] == [{"domain": "demo", "datapoint_count": 3, "knowledge_count": 8}]


def test_stats_error_status_for_missing_file(client):
    body = client.post("/v1/stats", json={"dataset_path": "/nope.jsonl"}).json()
    assert body["status"] == "error"
    assert "not found" in body["message"]


def test_ingest_endpoint(client, demo_paths):
    dataset, _, tmp = demo_paths
    body = client.post(
        "/v1/ingest", json={"dataset_path": str(dataset), "out_dir": str(tmp / "bench")}
    ).json()
    assert body["status"] == "ok"
    assert body["kb_paths"] == [str(tmp / "bench" / "kb_demo.jsonl")]


def test_index_endpoint(client, demo_paths):
    dataset, mock, tmp = demo_paths
    client.post("/v1/ingest", json={"dataset_path": str(dataset), "out_dir": str(tmp / "bench")})
    body = client.post(
        "/v1/index",
        json={"kb_path": str(tmp / "bench" / "kb_demo.jsonl"), "mock_script": str(mock)},
    ).json()
    assert body["status"] == "ok"
    assert body["item_count"] == 8
    assert body["dimension"] == 16


def test_run_endpoint_full_cycle(client, demo_paths):
    dataset, mock, tmp = demo_paths
    body = client.post(
        "/v1/run",
        json={
            "dataset_path": str(dataset),
            "out_dir": str(tmp / "run"),
            "engine": {"max_depth": 1},
            "mock_script": str(mock),
        },
    ).json()
    assert body["status"] == "ok"
    assert len(body["completed"]) == 3
    assert (tmp / "run" / "manifest.json").exists()

    judge_mock = write_mock_script(
        tmp / "judge.json",
        generate=[{"contains": "[role:judge", "completions": ["Score: 58"]}],
    )
    body = client.post(
        "/v1/evaluate",
        json={
            "runs_dir": str(tmp / "run"),
            "dataset_path": str(dataset),
            "mock_script": str(judge_mock),
        },
    ).json()
    assert body["status"] == "ok"
    assert body["report"]["domains"][0]["technical_mean"] == 58.0

    body = client.post(
        "/v1/analyze",
        json={
            "runs_dir": str(tmp / "run"),
            "dataset_path": str(dataset),
            "analysis": "layers",
            "mock_script": str(judge_mock),
        },
    ).json()
    assert body["status"] == "ok"
    assert body["result"]["rows"][0]["layer"] == 1


def test_run_endpoint_validates_inputs(client, demo_paths):
    dataset, mock, tmp = demo_paths
    body = client.post(
        "/v1/run",
        json={
            "dataset_path": str(dataset),
            "requirement": "also this",
            "out_dir": str(tmp / "x"),
            "mock_script": str(mock),
        },
    ).json()
    assert body["status"] == "error"
    assert "exactly one" in body["message"]


def test_run_endpoint_reports_partial(client, demo_paths):
    dataset, _, tmp = demo_paths
    failing = write_mock_script(
        tmp / "fail.json", generate=[{"contains": "scenario 1 ", "fail_times": 999}]
    )
    body = client.post(
        "/v1/run",
        json={
            "dataset_path": str(dataset),
            "out_dir": str(tmp / "partial"),
            "engine": {"max_depth": 1},
            "backend": {"max_retries": 1},
            "mock_script": str(failing),
        },
    ).json()
    assert body["status"] == "partial"
    assert list(body["failed"]) == ["demo-0001"]
    assert "demo-0001" in body["message"]


def test_malformed_request_is_422(client):
    response = client.post("/v1/run", json={"engine": {}})  # out_dir missing
    assert response.status_code == 422


def test_bad_engine_key_is_error_status(client, demo_paths):
    dataset, mock, tmp = demo_paths
    body = client.post(
        "/v1/run",
        json={
            "dataset_path": str(dataset),
            "out_dir": str(tmp / "y"),
            "engine": {"bogus_knob": 1},
            "mock_script": str(mock),
        },
    ).json()
    assert body["status"] == "error"
    assert "bogus_knob" in body["message"]
