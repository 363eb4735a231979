"""Live replication service for the ranked click experiment.

Participants flow through create -> type answer -> option list -> click ->
rating. Every state change is appended to a JSONL event log before the
response goes out; the in-memory per-condition rankings are pure functions
of that log and are rebuilt by replay on startup. Within a condition,
click handling (log append plus ranking update) is serialized by a lock;
different conditions proceed concurrently.

Option payloads expose items only through opaque ids and neutral picture
handles, never through class labels.
"""

from __future__ import annotations

import json
import os
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, PlainTextResponse
from pydantic import BaseModel, Field

from . import conditions as cond

__all__ = ["ServiceConfig", "ExperimentStore", "create_app"]

ANSWER_TO_TYPE = {"cat": 0, "dog": 1, "neither": 2}
TYPE_KEYS = ("type0", "type1", "type2")

_CORPUS_SIZE = 20
_EVENT_LOG_NAME = "events.jsonl"


@dataclass(frozen=True)
class ServiceConfig:
    """Runtime configuration; every field can come from RANKLAB_* env vars."""

    data_dir: Path
    seed: int = 0
    force_mode: str | None = None  # "dynamic" or "static" applied to all conditions
    stratified: bool = False
    fsync: bool = False

    @classmethod
    def from_env(cls, **overrides) -> "ServiceConfig":
        values = {
            "data_dir": Path(os.environ.get("RANKLAB_DATA_DIR", "ranklab-data")),
            "seed": int(os.environ.get("RANKLAB_SEED", "0")),
            "force_mode": os.environ.get("RANKLAB_FORCE_MODE") or None,
            "stratified": os.environ.get("RANKLAB_STRATIFIED", "") == "1",
            "fsync": os.environ.get("RANKLAB_FSYNC", "") == "1",
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        values["data_dir"] = Path(values["data_dir"])
        if values["force_mode"] not in (None, "dynamic", "static"):
            raise ValueError("force_mode must be 'dynamic' or 'static'")
        return cls(**values)


@dataclass
class Session:
    session_id: str
    condition_id: str
    type_answer: int | None = None
    options_order: list[str] | None = None
    clicked_item: str | None = None
    rating: int | None = None


class ConditionState:
    """Shared ranking state of one condition plus its item/image mapping."""

    def __init__(
        self,
        condition_id: str,
        m0: int,
        m1: int,
        dynamic: bool,
        rng: np.random.Generator | None = None,
        init_payload: dict | None = None,
    ):
        self.id = condition_id
        self.m0 = m0
        self.m1 = m1
        self.dynamic = dynamic
        self.lock = threading.Lock()
        if init_payload is not None:
            items = list(init_payload["items"])
            classes = [int(c) for c in init_payload["classes"]]
            images = list(init_payload["images"])
        else:
            assert rng is not None
            m = m0 + m1
            ids = [f"i{k:02d}" for k in range(1, m + 1)]
            shuffled = [ids[i] for i in rng.permutation(m)]
            # class 0 fills the top ranks initially; ids are shuffled so they
            # carry no class information
            items = shuffled
            classes = [0] * m0 + [1] * m1
            corpus = [f"ph_{k:02d}.png" for k in range(1, _CORPUS_SIZE + 1)]
            images = [corpus[i] for i in rng.permutation(_CORPUS_SIZE)[: m]]
        self.items_by_rank: list[str] = list(items)
        self.class_of_item = {item: c for item, c in zip(items, classes)}
        self.image_of_item = {item: img for item, img in zip(items, images)}
        self.clicks = {item: 1 for item in items}

    def init_payload(self) -> dict:
        items = list(self.items_by_rank)
        return {
            "m0": self.m0,
            "m1": self.m1,
            "dynamic": self.dynamic,
            "items": items,
            "classes": [self.class_of_item[i] for i in items],
            "images": [self.image_of_item[i] for i in items],
        }

    def apply_click(self, item: str) -> None:
        self.clicks[item] += 1
        if self.dynamic:
            # stable sort: ties keep their previous relative order
            self.items_by_rank.sort(key=lambda it: -self.clicks[it])

    def options_payload(self) -> list[dict]:
        return [
            {"position": pos + 1, "item": item, "image": f"/images/{self.image_of_item[item]}"}
            for pos, item in enumerate(self.items_by_rank)
        ]


class ExperimentStore:
    """Event-sourced state: the JSONL log is the source of truth."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.data_dir = Path(config.data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.images_dir = self.data_dir / "images"
        self.log_path = self.data_dir / _EVENT_LOG_NAME
        self._log_lock = threading.Lock()
        self._lock = threading.Lock()
        self._last_ts = 0.0
        self._session_counter = 0
        self._rng = np.random.default_rng(config.seed)
        self.conditions: dict[str, ConditionState] = {}
        self.sessions: dict[str, Session] = {}
        self._write_placeholder_images()
        if self.log_path.exists() and self.log_path.stat().st_size > 0:
            self._replay_log()
        else:
            self._init_conditions()

    # -- initialization -------------------------------------------------

    def _init_conditions(self) -> None:
        for spec in cond.CONDITIONS:
            dynamic = spec.dynamic
            if self.config.force_mode == "dynamic":
                dynamic = True
            elif self.config.force_mode == "static":
                dynamic = False
            state = ConditionState(spec.id, spec.m0, spec.m1, dynamic, rng=self._rng)
            self.conditions[spec.id] = state
            self._append_event("condition_init", session="", condition=spec.id,
                               payload=state.init_payload())

    def _replay_log(self) -> None:
        with open(self.log_path, "r", encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                self._last_ts = max(self._last_ts, float(event["ts"]))
                kind = event["kind"]
                if kind == "condition_init":
                    payload = event["payload"]
                    self.conditions[event["condition"]] = ConditionState(
                        event["condition"],
                        payload["m0"],
                        payload["m1"],
                        payload["dynamic"],
                        init_payload=payload,
                    )
                elif kind == "session_created":
                    sid = event["session"]
                    self.sessions[sid] = Session(sid, event["condition"])
                    self._session_counter += 1
                elif kind == "type":
                    self.sessions[event["session"]].type_answer = ANSWER_TO_TYPE[
                        event["payload"]["answer"]
                    ]
                elif kind == "click":
                    session = self.sessions[event["session"]]
                    session.clicked_item = event["payload"]["item"]
                    self.conditions[event["condition"]].apply_click(session.clicked_item)
                elif kind == "rating":
                    self.sessions[event["session"]].rating = event["payload"]["stars"]

    def _write_placeholder_images(self) -> None:
        self.images_dir.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(12345)
        for k in range(1, _CORPUS_SIZE + 1):
            path = self.images_dir / f"ph_{k:02d}.png"
            if not path.exists():
                rgb = tuple(int(x) for x in rng.integers(40, 216, size=3))
                path.write_bytes(_solid_png(rgb))

    # -- event log ------------------------------------------------------

    def _append_event(self, kind: str, session: str, condition: str, payload: dict) -> None:
        with self._log_lock:
            ts = max(time.time(), self._last_ts + 1e-6)
            self._last_ts = ts
            line = json.dumps(
                {"ts": ts, "session": session, "condition": condition,
                 "kind": kind, "payload": payload},
                separators=(",", ":"),
            )
            with open(self.log_path, "a", encoding="utf-8") as handle:
                handle.write(line + "\n")
                handle.flush()
                if self.config.fsync:
                    os.fsync(handle.fileno())

    # -- session operations ----------------------------------------------

    def _get_session(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return session

    def create_session(self) -> Session:
        with self._lock:
            if self.config.stratified:
                counts = {cid: 0 for cid in self.conditions}
                for session in self.sessions.values():
                    counts[session.condition_id] += 1
                fewest = min(counts.values())
                pool = [cid for cid, n in counts.items() if n == fewest]
            else:
                pool = list(self.conditions)
            condition_id = pool[int(self._rng.integers(len(pool)))]
            self._session_counter += 1
            session_id = f"s{self._session_counter:06d}-{self._rng.integers(1 << 32):08x}"
            session = Session(session_id, condition_id)
            self.sessions[session_id] = session
        self._append_event("session_created", session_id, condition_id, {})
        return session

    def record_type(self, session_id: str, answer: str) -> None:
        with self._lock:
            session = self._get_session(session_id)
            if session.type_answer is not None:
                raise HTTPException(status_code=409, detail="type already recorded")
            session.type_answer = ANSWER_TO_TYPE[answer]
        self._append_event("type", session_id, session.condition_id, {"answer": answer})

    def get_options(self, session_id: str) -> list[dict]:
        with self._lock:
            session = self._get_session(session_id)
            if session.type_answer is None:
                raise HTTPException(status_code=409, detail="answer the type question first")
            if session.clicked_item is not None:
                raise HTTPException(status_code=409, detail="session already clicked")
            state = self.conditions[session.condition_id]
        with state.lock:
            if session.options_order is None:
                # freeze the list this session sees at first fetch
                session.options_order = list(state.items_by_rank)
        return [
            {"position": pos + 1, "item": item, "image": f"/images/{state.image_of_item[item]}"}
            for pos, item in enumerate(session.options_order)
        ]

    def record_click(self, session_id: str, item: str) -> None:
        with self._lock:
            session = self._get_session(session_id)
            if session.type_answer is None:
                raise HTTPException(status_code=409, detail="answer the type question first")
            if session.clicked_item is not None:
                raise HTTPException(status_code=409, detail="session already clicked")
            state = self.conditions[session.condition_id]
            if item not in state.class_of_item:
                raise HTTPException(status_code=400, detail=f"item {item!r} not in condition")
            session.clicked_item = item
        # log append and ranking update are atomic per condition, so the
        # in-memory ranking always equals the replay of the log
        with state.lock:
            self._append_event("click", session_id, session.condition_id, {"item": item})
            state.apply_click(item)

    def record_rating(self, session_id: str, stars: int) -> None:
        with self._lock:
            session = self._get_session(session_id)
            if session.clicked_item is None:
                raise HTTPException(status_code=409, detail="click before rating")
            if session.rating is not None:
                raise HTTPException(status_code=409, detail="rating already recorded")
            session.rating = stars
        self._append_event("rating", session_id, session.condition_id, {"stars": stars})

    # -- reporting --------------------------------------------------------

    def summary(self) -> dict:
        with self._lock:
            sessions = list(self.sessions.values())
            by_condition = {cid: [] for cid in self.conditions}
            for session in sessions:
                by_condition[session.condition_id].append(session)
            type_totals = {key: 0 for key in TYPE_KEYS}
            for session in sessions:
                if session.type_answer is not None:
                    type_totals[TYPE_KEYS[session.type_answer]] += 1
            rows = []
            for cid, state in self.conditions.items():
                clicked = [s for s in by_condition[cid] if s.clicked_item is not None]
                counts = {key: 0 for key in TYPE_KEYS}
                class1 = 0
                for session in clicked:
                    counts[TYPE_KEYS[session.type_answer]] += 1
                    class1 += state.class_of_item[session.clicked_item]
                rows.append(
                    {
                        "id": cid,
                        "m0": state.m0,
                        "m1": state.m1,
                        "dynamic": state.dynamic,
                        "sessions": len(by_condition[cid]),
                        "participants": len(clicked),
                        "type_counts": counts,
                        "class1_clicks": class1,
                        "class1_share": (class1 / len(clicked)) if clicked else None,
                    }
                )
        return {
            "n_sessions": len(sessions),
            "type_totals": type_totals,
            "conditions": rows,
        }


def _solid_png(rgb: tuple[int, int, int], size: int = 64) -> bytes:
    """Minimal solid-color PNG; placeholder pictures carry no class signal."""

    def chunk(tag: bytes, data: bytes) -> bytes:
        return (
            struct.pack(">I", len(data))
            + tag
            + data
            + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)
        )

    header = struct.pack(">IIBBBBB", size, size, 8, 2, 0, 0, 0)
    raw = (b"\x00" + bytes(rgb) * size) * size
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", header)
        + chunk(b"IDAT", zlib.compress(raw))
        + chunk(b"IEND", b"")
    )


class TypeBody(BaseModel):
    answer: Literal["cat", "neither", "dog"]


class ClickBody(BaseModel):
    item: str


class RatingBody(BaseModel):
    stars: int = Field(ge=1, le=5)


def create_app(config: ServiceConfig | None = None, *, cors: bool = False) -> FastAPI:
    if config is None:
        config = ServiceConfig.from_env()
    store = ExperimentStore(config)
    app = FastAPI(title="ranklab experiment service")
    app.state.store = store

    if cors:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
        )

    @app.get("/healthz")
    def healthz() -> dict:
        return {"ok": True}

    @app.post("/sessions", status_code=201)
    def create_session() -> dict:
        session = store.create_session()
        return {"session_id": session.session_id, "condition": session.condition_id}

    @app.post("/sessions/{session_id}/type")
    def record_type(session_id: str, body: TypeBody) -> dict:
        store.record_type(session_id, body.answer)
        return {"ok": True}

    @app.get("/sessions/{session_id}/options")
    def get_options(session_id: str) -> dict:
        return {"options": store.get_options(session_id)}

    @app.post("/sessions/{session_id}/click")
    def record_click(session_id: str, body: ClickBody) -> dict:
        store.record_click(session_id, body.item)
        return {"ok": True}

    @app.post("/sessions/{session_id}/rating")
    def record_rating(session_id: str, body: RatingBody) -> dict:
        store.record_rating(session_id, body.stars)
        return {"ok": True}

    @app.get("/admin/summary")
    def admin_summary() -> dict:
        return store.summary()

    @app.get("/admin/export")
    def admin_export() -> PlainTextResponse:
        text = store.log_path.read_text(encoding="utf-8") if store.log_path.exists() else ""
        return PlainTextResponse(text, media_type="application/x-ndjson")

    @app.get("/images/{name}")
    def get_image(name: str) -> FileResponse:
        path = store.images_dir / name
        if not path.is_file() or "/" in name or ".." in name:
            raise HTTPException(status_code=404, detail="unknown image")
        return FileResponse(path, media_type="image/png")

    return app
