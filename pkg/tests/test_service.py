import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from clickseg.engine import EngineConfig
from clickseg.scenes import generate_scene, save_scene, standard_suites
from clickseg.service import create_app


@pytest.fixture()
def scene_dir(tmp_path):
    sample = generate_scene(standard_suites(0)["test"][2], click_mode="center")
    d = tmp_path / "scene"
    save_scene(sample, d)
    return d, sample


@pytest.fixture()
def client(tmp_path):
    app = create_app(tmp_path / "data")
    with TestClient(app) as c:
        yield c


def make_session(client, scene_dir):
    resp = client.post("/sessions", json={"source": {"kind": "frames", "path": str(scene_dir)}})
    assert resp.status_code == 200, resp.text
    return resp.json()["id"]


def test_create_and_get_session(client, scene_dir):
    d, sample = scene_dir
    sid = make_session(client, d)
    resp = client.get(f"/sessions/{sid}")
    assert resp.status_code == 200
    manifest = resp.json()
    assert manifest["frames"] == 5
    assert manifest["width"] == 64 and manifest["height"] == 64
    assert manifest["has_gt"] is True
    assert manifest["clicks"] == []


def test_unknown_session_404(client):
    assert client.get("/sessions/nope").status_code == 404


def test_click_validation(client, scene_dir):
    d, _ = scene_dir
    sid = make_session(client, d)
    # out-of-bounds coordinates -> 422 with echo payload
    resp = client.post(f"/sessions/{sid}/clicks", json={"frame": 0, "x": 400, "y": 2})
    assert resp.status_code == 422
    body = resp.json()
    assert body["x"] == 400 and body["frame"] == 0 and "error" in body
    # unknown frame -> 404
    resp = client.post(f"/sessions/{sid}/clicks", json={"frame": 99, "x": 1, "y": 1})
    assert resp.status_code == 404


def test_click_ids_are_server_assigned(client, scene_dir):
    d, sample = scene_dir
    sid = make_session(client, d)
    first = client.post(f"/sessions/{sid}/clicks", json={"frame": 0, "x": 10, "y": 10}).json()
    second = client.post(f"/sessions/{sid}/clicks", json={"frame": 0, "x": 40, "y": 40}).json()
    assert first["instance_id"] == 1
    assert second["instance_id"] == 2
    resp = client.delete(f"/sessions/{sid}/clicks/1")
    assert resp.status_code == 200
    assert client.delete(f"/sessions/{sid}/clicks/1").status_code == 404
    manifest = client.get(f"/sessions/{sid}").json()
    assert [c["instance"] for c in manifest["clicks"]] == [2]


def test_run_without_clicks_gives_background(client, scene_dir):
    d, _ = scene_dir
    sid = make_session(client, d)
    resp = client.post(f"/sessions/{sid}/run")
    assert resp.status_code == 200
    assert resp.json() == {"status": "done", "frames": 5}
    rle = client.get(f"/sessions/{sid}/masks/0").json()
    labels = set(rle["runs"][0::2])
    assert labels == {0}


def test_run_and_fetch_masks(client, scene_dir):
    d, sample = scene_dir
    sid = make_session(client, d)
    c = sample.clicks[0]
    client.post(f"/sessions/{sid}/clicks", json={"frame": c.frame, "x": c.x, "y": c.y})
    client.post(f"/sessions/{sid}/run")
    rle = client.get(f"/sessions/{sid}/masks/0", params={"format": "rle"}).json()
    assert rle["width"] == 16 and rle["height"] == 16
    assert 1 in set(rle["runs"][0::2])
    png = client.get(f"/sessions/{sid}/masks/0", params={"format": "png"})
    assert png.status_code == 200
    assert png.headers["content-type"] == "image/png"
    assert client.get(f"/sessions/{sid}/masks/99").status_code == 404
    frame = client.get(f"/sessions/{sid}/frames/0")
    assert frame.status_code == 200 and frame.headers["content-type"] == "image/png"


def test_repeated_runs_identical(client, scene_dir):
    d, sample = scene_dir
    sid = make_session(client, d)
    c = sample.clicks[0]
    client.post(f"/sessions/{sid}/clicks", json={"frame": c.frame, "x": c.x, "y": c.y})
    client.post(f"/sessions/{sid}/run")
    first = [client.get(f"/sessions/{sid}/masks/{t}").content for t in range(5)]
    client.post(f"/sessions/{sid}/run")
    second = [client.get(f"/sessions/{sid}/masks/{t}").content for t in range(5)]
    assert first == second


def test_metrics_with_gt(client, scene_dir):
    d, sample = scene_dir
    sid = make_session(client, d)
    c = sample.clicks[0]
    client.post(f"/sessions/{sid}/clicks", json={"frame": c.frame, "x": c.x, "y": c.y})
    client.post(f"/sessions/{sid}/run")
    resp = client.get(f"/sessions/{sid}/metrics")
    assert resp.status_code == 200
    body = resp.json()
    assert 0.0 <= body["miou"] <= 1.0
    assert body["miou"] > 0.5
    assert body["unmatched_clicks"] == []


def test_metrics_404_without_gt(client, tmp_path, scene_dir):
    d, _ = scene_dir
    # a frames-only folder (no gt masks)
    frames_only = tmp_path / "frames_only"
    frames_only.mkdir()
    for p in sorted(d.glob("frame_*.png")):
        (frames_only / p.name).write_bytes(p.read_bytes())
    resp = client.post("/sessions", json={"source": {"kind": "frames", "path": str(frames_only)}})
    sid = resp.json()["id"]
    client.post(f"/sessions/{sid}/run")
    assert client.get(f"/sessions/{sid}/metrics").status_code == 404


def test_persistence_across_restart(tmp_path, scene_dir):
    d, sample = scene_dir
    data_dir = tmp_path / "data"
    app = create_app(data_dir)
    with TestClient(app) as client:
        sid = make_session(client, d)
        c = sample.clicks[0]
        client.post(f"/sessions/{sid}/clicks", json={"frame": c.frame, "x": c.x, "y": c.y})
        client.post(f"/sessions/{sid}/run")
        manifest = client.get(f"/sessions/{sid}").json()
        masks = [client.get(f"/sessions/{sid}/masks/{t}").content for t in range(5)]

    fresh = create_app(data_dir)
    with TestClient(fresh) as client:
        manifest2 = client.get(f"/sessions/{sid}").json()
        masks2 = [client.get(f"/sessions/{sid}/masks/{t}").content for t in range(5)]
        assert manifest2["clicks"] == manifest["clicks"]
        assert manifest2["frames"] == manifest["frames"]
        assert masks2 == masks
        listing = client.get("/sessions").json()["sessions"]
        assert any(s["id"] == sid for s in listing)


def test_synthetic_session_source(client):
    resp = client.post(
        "/sessions",
        json={"source": {"kind": "synthetic", "config": {"seed": 0, "scene_index": 2}}},
    )
    assert resp.status_code == 200
    sid = resp.json()["id"]
    manifest = client.get(f"/sessions/{sid}").json()
    assert manifest["has_gt"] is True
    assert manifest["frames"] == 5


def test_click_mutation_invalidates_results(client, scene_dir):
    d, sample = scene_dir
    sid = make_session(client, d)
    c = sample.clicks[0]
    inst = client.post(f"/sessions/{sid}/clicks", json={"frame": c.frame, "x": c.x, "y": c.y}).json()[
        "instance_id"
    ]
    client.post(f"/sessions/{sid}/run")
    assert client.get(f"/sessions/{sid}/masks/0").status_code == 200
    client.delete(f"/sessions/{sid}/clicks/{inst}")
    assert client.get(f"/sessions/{sid}/masks/0").status_code == 404
