"""HTTP API for the survey loop, vote stats, and zone maps.

All store mutations are serialized through one lock (single-writer contract);
votes are appended durably to votes.jsonl before the response is sent, so a
service restart loses nothing. GET endpoints never touch persistent state.
"""

from __future__ import annotations

import os
import threading
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .errors import AlreadyVotedError, PairsExhaustedError, SessionError
from .scoring import emit_map, map_to_json_bytes, score_zone
from .store import VOTES_FILE, append_vote_line, load_snapshot, store_from_snapshot
from .survey import CLICK_TO_CODE, PolicyConfig, SurveyEngine

BIND_ENV = "PERCEPTMAP_BIND"
DATA_DIR_ENV = "PERCEPTMAP_DATA_DIR"

DEFAULT_BIND = "127.0.0.1:8000"


def create_app(data_dir: Path | str | None = None,
               policy: PolicyConfig | None = None, seed: int = 0,
               static_dir: Path | str | None = None,
               cors_origins: list[str] | None = None) -> FastAPI:
    data_dir = Path(data_dir or os.environ.get(DATA_DIR_ENV, "."))
    if not data_dir.is_dir():
        raise NotADirectoryError(f"data directory {data_dir} does not exist")

    store = store_from_snapshot(load_snapshot(data_dir))
    store.rebuild_counters()  # the vote log is the authority
    engine = SurveyEngine(store, policy=policy, seed=seed)
    lock = threading.Lock()
    votes_path = data_dir / VOTES_FILE

    app = FastAPI(title="perceptmap")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=cors_origins or ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.store = store
    app.state.engine = engine
    app.state.data_dir = data_dir

    @app.get("/api/pair")
    def get_pair():
        with lock:
            try:
                session = engine.next_pair()
            except PairsExhaustedError as exc:
                return JSONResponse({"detail": str(exc)}, status_code=409)
        left = store.get_image(session.left_id)
        right = store.get_image(session.right_id)
        return {
            "session_id": session.session_id,
            "left": {"image_id": left.image_id, "image_url": left.uri},
            "right": {"image_id": right.image_id, "image_url": right.uri},
        }

    @app.post("/api/vote")
    async def post_vote(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"detail": "body must be JSON"}, status_code=400)
        if not isinstance(body, dict):
            return JSONResponse({"detail": "body must be a JSON object"}, status_code=400)
        session_id = body.get("session_id")
        click = body.get("click")
        if not isinstance(session_id, str) or click not in CLICK_TO_CODE:
            return JSONResponse(
                {"detail": 'body needs "session_id" and "click" of left|equal|right'},
                status_code=400)
        with lock:
            try:
                vote = engine.submit_vote(
                    session_id, click,
                    on_vote=lambda v: append_vote_line(votes_path, v))
            except AlreadyVotedError as exc:
                return JSONResponse({"detail": str(exc)}, status_code=409)
            except SessionError as exc:
                return JSONResponse({"detail": str(exc)}, status_code=404)
        return {"vote_id": vote.vote_id, "code": vote.code}

    @app.get("/api/stats")
    def get_stats():
        totals = store.vote_totals()
        return {
            "by_code": {str(code): n for code, n in totals["by_code"].items()},
            "by_source": totals["by_source"],
            "images": totals["images"],
            "total": totals["total"],
        }

    @app.get("/api/map/{zone}")
    def get_map(zone: str):
        snapshot = store.snapshot()
        zone_images = {i: img for i, img in snapshot.images.items() if img.zone == zone}
        if not zone_images:
            return JSONResponse({"detail": f"unknown zone {zone!r}"}, status_code=404)
        scores = score_zone(snapshot.images, snapshot.votes, zone=zone)
        if not scores:
            return JSONResponse({"detail": f"zone {zone!r} has no scored images"},
                                status_code=404)
        document = emit_map(zone, scores, snapshot.images)
        return Response(content=map_to_json_bytes(document),
                        media_type="application/geo+json")

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
