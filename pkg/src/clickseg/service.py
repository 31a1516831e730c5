"""Session-oriented HTTP/JSON service for the annotation UI.

Sessions live on disk under <data_dir>/sessions/<id>/; the directory is the
source of truth and every handler rehydrates from it, so a service restart
loses nothing. Frames are never mutated; only clicks and run results change.
"""

from __future__ import annotations

import io
import json
import threading
import time
import uuid
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import pngio
from .correlation import Click, LabelMask
from .engine import EngineConfig, default_params, segment_frames
from .evaluation import miou, to_volume
from .params import TrainableParams
from .rle import MaskRLE, decode_mask as rle_decode, encode_mask
from .scenes import SceneConfig, SceneObject, generate_scene, save_scene


class SessionStore:
    def __init__(self, data_dir, config: EngineConfig, params: TrainableParams):
        self.root = Path(data_dir)
        self.sessions_dir = self.root / "sessions"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.params = params
        self._locks: Dict[str, threading.Lock] = {}
        self._frame_cache: Dict[str, List] = {}

    # -- paths ------------------------------------------------------------

    def session_dir(self, sid: str) -> Path:
        return self.sessions_dir / sid

    def _meta_path(self, sid: str) -> Path:
        return self.session_dir(sid) / "session.json"

    def lock(self, sid: str) -> threading.Lock:
        return self._locks.setdefault(sid, threading.Lock())

    # -- persistence ------------------------------------------------------

    def load_meta(self, sid: str) -> dict:
        path = self._meta_path(sid)
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"unknown session {sid}")
        return json.loads(path.read_text())

    def save_meta(self, meta: dict) -> None:
        meta["updated"] = time.time()
        self._meta_path(meta["id"]).write_text(json.dumps(meta, indent=2))

    def frames_dir(self, meta: dict) -> Path:
        source = meta["source"]
        if source["kind"] == "synthetic":
            return self.session_dir(meta["id"]) / "scene"
        path = Path(source["path"])
        return path if path.is_absolute() else self.root / path

    def frames(self, meta: dict) -> List:
        sid = meta["id"]
        if sid not in self._frame_cache:
            self._frame_cache[sid] = pngio.load_frames_dir(self.frames_dir(meta))
        return self._frame_cache[sid]

    # -- creation ---------------------------------------------------------

    def create(self, source: dict) -> dict:
        sid = uuid.uuid4().hex[:12]
        sdir = self.session_dir(sid)
        sdir.mkdir(parents=True)
        kind = source.get("kind")
        if kind == "synthetic":
            cfg_payload = source.get("config", {})
            objects = [
                SceneObject(
                    shape=o.get("shape", "rect"),
                    color=tuple(o.get("color", (225, 65, 105))),
                    size=tuple(o.get("size", (20, 20))),
                    start=tuple(o.get("start", (32.0, 32.0))),
                    velocity=tuple(o.get("velocity", (0.0, 0.0))),
                    depth=o.get("depth", 0),
                    appear=o.get("appear", 0),
                    disappear=o.get("disappear"),
                )
                for o in cfg_payload.get("objects", [])
            ]
            cfg = SceneConfig(
                width=cfg_payload.get("width", 64),
                height=cfg_payload.get("height", 64),
                keyframes=cfg_payload.get("keyframes", 5),
                intermediates=cfg_payload.get("intermediates", 0),
                objects=objects,
                background=cfg_payload.get("background", "flat"),
                seed=cfg_payload.get("seed", 0),
            )
            if not objects:
                from .scenes import standard_suites

                cfg = standard_suites(cfg_payload.get("seed", 0))["test"][
                    cfg_payload.get("scene_index", 0) % 8
                ]
            sample = generate_scene(cfg, click_mode="center")
            save_scene(sample, sdir / "scene")
        elif kind == "frames":
            path = source.get("path")
            if not path:
                raise HTTPException(status_code=422, detail="frames source needs a path")
            resolved = Path(path)
            if not resolved.is_absolute():
                resolved = self.root / resolved
            if not resolved.is_dir():
                raise HTTPException(status_code=422, detail=f"not a directory: {path}")
        else:
            raise HTTPException(status_code=422, detail=f"unknown source kind {kind!r}")

        meta = {
            "id": sid,
            "source": source,
            "clicks": [],
            "next_instance": 1,
            "last_run": None,
            "created": time.time(),
            "updated": time.time(),
        }
        frames = pngio.load_frames_dir(self.frames_dir(meta))
        meta["frames"] = len(frames)
        meta["width"] = frames[0].width
        meta["height"] = frames[0].height
        meta["stride"] = 4
        meta["has_gt"] = bool(sorted(self.frames_dir(meta).glob("gt_*.png")))
        self.save_meta(meta)
        return meta

    # -- results ----------------------------------------------------------

    def results_path(self, sid: str) -> Path:
        return self.session_dir(sid) / "masks.rle.json"

    def report_path(self, sid: str) -> Path:
        return self.session_dir(sid) / "report.json"

    def clear_results(self, sid: str) -> None:
        for path in (self.results_path(sid), self.report_path(sid)):
            if path.exists():
                path.unlink()


def _gt_masks(store: SessionStore, meta: dict) -> Optional[List[LabelMask]]:
    gt_paths = sorted(store.frames_dir(meta).glob("gt_*.png"))
    if not gt_paths:
        return None
    return [LabelMask(pngio.load_indexed_png(p)) for p in gt_paths]


def _gt_full_masks(store: SessionStore, meta: dict) -> Optional[List[np.ndarray]]:
    paths = sorted(store.frames_dir(meta).glob("gtfull_*.png"))
    if not paths:
        return None
    return [pngio.load_indexed_png(p) for p in paths]


def create_app(
    data_dir,
    config: Optional[EngineConfig] = None,
    params: Optional[TrainableParams] = None,
    ui_dir=None,
) -> FastAPI:
    config = config or EngineConfig.default()
    params = params or default_params(config)
    store = SessionStore(data_dir, config, params)
    app = FastAPI(title="clickseg session service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.store = store

    @app.post("/sessions")
    async def create_session(request: Request):
        payload = await request.json()
        source = payload.get("source")
        if not isinstance(source, dict):
            raise HTTPException(status_code=422, detail="body must carry a source object")
        meta = store.create(source)
        return {"id": meta["id"]}

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        meta = store.load_meta(sid)
        meta["has_result"] = store.results_path(sid).exists()
        return meta

    @app.post("/sessions/{sid}/clicks")
    async def add_click(sid: str, request: Request):
        meta = store.load_meta(sid)
        payload = await request.json()
        try:
            frame = int(payload["frame"])
            x = float(payload["x"])
            y = float(payload["y"])
        except (KeyError, TypeError, ValueError):
            raise HTTPException(status_code=422, detail="click needs integer frame and numeric x, y")
        if not (0 <= frame < meta["frames"]):
            raise HTTPException(status_code=404, detail=f"unknown frame {frame}")
        if not (0 <= x < meta["width"] and 0 <= y < meta["height"]):
            return JSONResponse(
                status_code=422,
                content={"error": "click outside image bounds", "frame": frame, "x": x, "y": y},
            )
        instance = meta["next_instance"]
        meta["next_instance"] = instance + 1
        meta["clicks"].append({"frame": frame, "x": x, "y": y, "instance": instance})
        meta["last_run"] = None
        store.clear_results(sid)
        store.save_meta(meta)
        return {"instance_id": instance}

    @app.delete("/sessions/{sid}/clicks/{instance_id}")
    def delete_click(sid: str, instance_id: int):
        meta = store.load_meta(sid)
        remaining = [c for c in meta["clicks"] if c["instance"] != instance_id]
        if len(remaining) == len(meta["clicks"]):
            raise HTTPException(status_code=404, detail=f"unknown click instance {instance_id}")
        meta["clicks"] = remaining
        meta["last_run"] = None
        store.clear_results(sid)
        store.save_meta(meta)
        return {"removed": instance_id}

    @app.post("/sessions/{sid}/run")
    def run_session(sid: str):
        meta = store.load_meta(sid)
        lock = store.lock(sid)
        if not lock.acquire(blocking=False):
            raise HTTPException(status_code=409, detail="a run is already in progress")
        try:
            frames = store.frames(meta)
            clicks = [
                Click(frame=c["frame"], x=c["x"], y=c["y"], instance=c["instance"])
                for c in meta["clicks"]
            ]
            result = segment_frames(frames, clicks, store.config, store.params)
            rles = [encode_mask(m, frame=t).to_json() for t, m in enumerate(result.masks)]
            store.results_path(sid).write_text(
                json.dumps({"version": 1, "frames": rles}, indent=2)
            )
            meta["last_run"] = {
                "status": "done",
                "frames": len(result.masks),
                "registry": {
                    str(entry.instance): {
                        "status": entry.status,
                        "first_frame": entry.first_frame,
                        "closed_frame": entry.closed_frame,
                    }
                    for entry in result.registry.entries.values()
                },
            }
            store.save_meta(meta)
            return {"status": "done", "frames": len(result.masks)}
        finally:
            lock.release()

    def _load_rles(sid: str) -> List[dict]:
        path = store.results_path(sid)
        if not path.exists():
            raise HTTPException(status_code=404, detail="no run results; POST /run first")
        return json.loads(path.read_text())["frames"]

    @app.get("/sessions/{sid}/masks/{t}")
    def get_mask(sid: str, t: int, format: str = "rle"):
        meta = store.load_meta(sid)
        rles = _load_rles(sid)
        if not (0 <= t < len(rles)):
            raise HTTPException(status_code=404, detail=f"unknown frame {t}")
        if format == "rle":
            return rles[t]
        if format == "png":
            mask = rle_decode(MaskRLE.from_json(rles[t]))
            buf = io.BytesIO()
            from PIL import Image

            img = Image.fromarray(mask.grid.astype(np.uint8), mode="P")
            img.putpalette(pngio.label_palette(256).flatten().tolist())
            img.save(buf, format="PNG")
            return Response(content=buf.getvalue(), media_type="image/png")
        raise HTTPException(status_code=422, detail=f"unknown format {format!r}")

    @app.get("/sessions/{sid}/frames/{t}")
    def get_frame(sid: str, t: int):
        meta = store.load_meta(sid)
        frames = store.frames(meta)
        if not (0 <= t < len(frames)):
            raise HTTPException(status_code=404, detail=f"unknown frame {t}")
        buf = io.BytesIO()
        from PIL import Image

        Image.fromarray(frames[t].rgb, mode="RGB").save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.get("/sessions/{sid}/metrics")
    def get_metrics(sid: str):
        meta = store.load_meta(sid)
        gt = _gt_masks(store, meta)
        if gt is None:
            raise HTTPException(status_code=404, detail="session has no ground truth")
        rles = _load_rles(sid)
        pred = [rle_decode(MaskRLE.from_json(r)) for r in rles]
        if len(pred) != len(gt):
            raise HTTPException(status_code=404, detail="results do not cover the GT frames")

        # click-induced correspondence: each click adopts the GT instance
        # its point lands on (full-resolution lookup)
        gt_full = _gt_full_masks(store, meta)
        mapping: Dict[int, int] = {}
        unmatched: List[int] = []
        for c in meta["clicks"]:
            lookup = gt_full[c["frame"]] if gt_full is not None else gt[c["frame"]].grid
            if gt_full is not None:
                label = int(lookup[int(c["y"]), int(c["x"])])
            else:
                label = int(lookup[int(c["y"]) // 4, int(c["x"]) // 4])
            if label != 0 and label not in mapping.values():
                mapping[c["instance"]] = label
            else:
                unmatched.append(c["instance"])
        if not mapping:
            raise HTTPException(status_code=404, detail="no clicks matched ground-truth instances")

        relabeled = []
        for mask in pred:
            grid = np.zeros_like(mask.grid)
            for pred_id, gt_id in mapping.items():
                grid[mask.grid == pred_id] = gt_id
            relabeled.append(LabelMask(grid))
        ids = sorted(mapping.values())
        report = miou(to_volume(relabeled, ids), to_volume(gt, ids))
        payload = report.to_json()
        payload["unmatched_clicks"] = unmatched
        store.report_path(sid).write_text(json.dumps(payload, indent=2))
        return payload

    @app.get("/sessions")
    def list_sessions():
        out = []
        for meta_path in sorted(store.sessions_dir.glob("*/session.json")):
            meta = json.loads(meta_path.read_text())
            out.append({"id": meta["id"], "frames": meta["frames"], "has_gt": meta["has_gt"]})
        return {"sessions": out}

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
