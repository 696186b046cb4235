"""HTTP service: label cycle, training exclusion, error contract."""
from __future__ import annotations

import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from camloop.active import generate_synthetic_pool, stratified_split
from camloop.api import create_app
from camloop.detections import CropRecord, PixelRect, write_crop_manifest
from camloop.embeddings import save_store
from camloop.head import TrainConfig
from camloop.session import init_project

from conftest import write_png


def build_service(tmp_path, budget=14, batch=4, epochs=5, seed=0):
    pool = generate_synthetic_pool({"ant": 12, "bee": 12, "cow": 12},
                                   dimension=4, cluster_separation=6.0, seed=2)
    pdir = tmp_path / "proj"
    (pdir / "crops").mkdir(parents=True)
    save_store(pool.store, pdir / "embeddings.emb1")
    crops = []
    for i, cid in enumerate(pool.ids()):
        crops.append(CropRecord(crop_id=cid, source_image=f"cam/{cid}.jpg",
                                rect=PixelRect(0, 0, 8, 8), detection_confidence=0.9,
                                crop_path=f"crops/{cid}.png"))
        write_png(pdir / "crops" / f"{cid}.png", 8, 8, seed=i)
    write_crop_manifest(crops, pdir / "crops.csv")
    val_ids, _ = stratified_split(pool.ids(), pool.labels, 0.2,
                                  np.random.default_rng([seed, 1]))
    init_project(pdir, class_names=pool.class_names,
                 validation={i: pool.labels[i] for i in val_ids},
                 strategy="entropy", batch_size_query=batch, label_budget=budget,
                 seed=seed, train_config=TrainConfig(epochs=epochs, seed=seed))
    app = create_app(pdir)
    return TestClient(app), pool, pdir


def wait_idle(client, timeout=30.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        status = client.get("/api/v1/project").json()["status"]
        if status["state"] != "training":
            assert status["state"] == "idle", f"training failed: {status}"
            return
        time.sleep(0.01)
    raise AssertionError("retrain did not finish in time")


def oracle_rows(client, pool, limit=None):
    pending = client.get("/api/v1/batch").json()["pending"]
    if limit is not None:
        pending = pending[:limit]
    return [{"crop_id": it["crop_id"], "species": pool.labels[it["crop_id"]]}
            for it in pending]


def test_project_endpoint_reports_pool_shape(tmp_path):
    client, pool, _ = build_service(tmp_path)
    body = client.get("/api/v1/project").json()
    assert body["class_names"] == ["ant", "bee", "cow"]
    assert body["round"] == 0
    assert body["labels_used"] == 0
    assert body["label_budget"] == 14
    assert body["pool_size"] == 30
    assert body["validation_size"] == 6
    assert body["rounds_completed"] == 0
    assert body["status"] == {"state": "idle", "message": None}


def test_full_label_cycle_trains_and_issues_next_batch(tmp_path):
    client, pool, pdir = build_service(tmp_path)
    view = client.get("/api/v1/batch").json()
    assert view["round"] == 0 and view["batch_size"] == 4
    assert len(view["pending"]) == 4
    first_ids = {it["crop_id"] for it in view["pending"]}
    for it in view["pending"]:
        assert it["crop_url"] == f"/api/v1/crops/{it['crop_id']}"
        assert len(it["probs"]) == 3

    # Partial submission: accepted, no retrain yet.
    resp = client.post("/api/v1/labels", json={"labels": oracle_rows(client, pool, limit=2)})
    assert resp.status_code == 200
    assert len(resp.json()["pending"]) == 2
    assert client.get("/api/v1/project").json()["rounds_completed"] == 0

    # Completing the batch kicks off the retrain.
    resp = client.post("/api/v1/labels", json={"labels": oracle_rows(client, pool)})
    assert resp.status_code == 200
    wait_idle(client)

    body = client.get("/api/v1/project").json()
    assert body["rounds_completed"] == 1
    assert body["labels_used"] == 4
    assert (pdir / "rounds" / "0001" / "model.alhd1").exists()

    metrics = client.get("/api/v1/metrics").json()
    assert metrics["round"] == 1 and metrics["labels_used"] == 4
    assert metrics["report"]["averaging"] == "macro"
    assert set(metrics["report"]) >= {"accuracy", "macro_f1", "per_class"}
    assert len(metrics["confusion"]["matrix"]) == 3
    assert [p["labels_used"] for p in metrics["curve"]] == [4]

    nxt = client.get("/api/v1/batch").json()
    assert nxt["round"] == 1 and not nxt["exhausted"]
    next_ids = {it["crop_id"] for it in nxt["pending"]}
    assert len(next_ids) == 4 and not next_ids & first_ids


def test_invalid_rows_are_rejected_atomically_with_details(tmp_path):
    client, pool, _ = build_service(tmp_path)
    rows = oracle_rows(client, pool, limit=1) + [{"crop_id": "ghost", "species": "ant"}]
    resp = client.post("/api/v1/labels", json={"labels": rows})
    assert resp.status_code == 422
    body = resp.json()
    assert body["code"] == "invalid_labels"
    assert body["details"] == [
        {"crop_id": "ghost", "species": "ant", "reason": "not in the current query batch"}
    ]
    # Nothing was applied: the good row is still pending.
    assert len(client.get("/api/v1/batch").json()["pending"]) == 4
    assert client.get("/api/v1/project").json()["labels_used"] == 0


def test_empty_submission_is_a_422(tmp_path):
    client, _, _ = build_service(tmp_path)
    resp = client.post("/api/v1/labels", json={"labels": []})
    assert resp.status_code == 422
    assert resp.json()["details"][0]["reason"] == "empty submission"


def test_malformed_body_is_a_422_with_field_paths(tmp_path):
    client, _, _ = build_service(tmp_path)
    resp = client.post("/api/v1/labels", json={"labels": [{"crop_id": 5}]})
    assert resp.status_code == 422
    body = resp.json()
    assert body["code"] == "invalid_request"
    fields = [d["field"] for d in body["details"]]
    assert any("species" in f for f in fields)


def test_writes_and_batch_reads_conflict_while_training(tmp_path):
    client, pool, _ = build_service(tmp_path)
    runtime = client.app.state.runtime
    runtime.training.set()
    try:
        assert client.get("/api/v1/batch").status_code == 409
        resp = client.post("/api/v1/labels", json={"labels": [{"crop_id": "x", "species": "ant"}]})
        assert resp.status_code == 409
        assert resp.json()["code"] == "training"
        assert client.post("/api/v1/retrain").status_code == 409
        # Reads stay available for polling.
        assert client.get("/api/v1/project").json()["status"]["state"] == "training"
    finally:
        runtime.training.clear()
    assert client.get("/api/v1/batch").status_code == 200


def test_manual_retrain_reuses_labels_and_collapses_curve(tmp_path):
    client, pool, _ = build_service(tmp_path)
    assert client.post("/api/v1/retrain").status_code == 409  # nothing labeled yet
    client.post("/api/v1/labels", json={"labels": oracle_rows(client, pool)})
    wait_idle(client)
    resp = client.post("/api/v1/retrain")
    assert resp.status_code == 202
    assert resp.json()["status"]["state"] == "training"
    wait_idle(client)
    body = client.get("/api/v1/project").json()
    assert body["rounds_completed"] == 2 and body["labels_used"] == 4
    metrics = client.get("/api/v1/metrics").json()
    assert metrics["round"] == 2
    # Same budget twice: the curve keeps only the latest round.
    assert [p["labels_used"] for p in metrics["curve"]] == [4]


def test_404_contract(tmp_path):
    empty = tmp_path / "nothing"
    empty.mkdir()
    bare = TestClient(create_app(empty))
    resp = bare.get("/api/v1/project")
    assert resp.status_code == 404
    assert resp.json()["code"] == "no_project"
    assert "init-project" in resp.json()["message"]

    client, _, _ = build_service(tmp_path)
    resp = client.get("/api/v1/metrics")
    assert resp.status_code == 404 and resp.json()["code"] == "no_rounds"
    resp = client.get("/api/v1/crops/ghost")
    assert resp.status_code == 404 and resp.json()["code"] == "unknown_crop"


def test_crop_images_are_served_immutable(tmp_path):
    client, pool, pdir = build_service(tmp_path)
    item = client.get("/api/v1/batch").json()["pending"][0]
    resp = client.get(item["crop_url"])
    assert resp.status_code == 200
    assert resp.headers["content-type"] == "image/png"
    assert "immutable" in resp.headers["cache-control"]
    assert resp.content == (pdir / "crops" / f"{item['crop_id']}.png").read_bytes()


def test_exhausted_budget_reports_no_batch(tmp_path):
    client, pool, _ = build_service(tmp_path, budget=4)
    client.post("/api/v1/labels", json={"labels": oracle_rows(client, pool)})
    wait_idle(client)
    view = client.get("/api/v1/batch").json()
    assert view["exhausted"] is True
    assert view["pending"] == []
    assert client.get("/api/v1/project").json()["labels_used"] == 4


def test_concurrent_submissions_apply_exactly_once(tmp_path):
    client, pool, _ = build_service(tmp_path)
    rows = oracle_rows(client, pool)
    statuses = []
    barrier = threading.Barrier(4)

    def submit():
        barrier.wait()
        resp = client.post("/api/v1/labels", json={"labels": rows})
        statuses.append(resp.status_code)

    threads = [threading.Thread(target=submit) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wait_idle(client)
    # Exactly one submission landed; the rest saw a conflict (already applied
    # -> rows no longer pending -> 422, or the retrain lock -> 409).
    assert statuses.count(200) == 1
    assert all(s in (409, 422) for s in statuses if s != 200)
    body = client.get("/api/v1/project").json()
    assert body["labels_used"] == 4
    assert body["rounds_completed"] == 1
