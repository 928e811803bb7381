"""HTTP service that shows stitched images to critics and records 0-100
scores, one session per (critic, bundle), images in a seeded per-critic
order.

Persistence is an append-only newline-delimited JSON log: every accepted
score is fsynced before it is acknowledged, and startup replays the log to
rebuild sessions. A torn final line (crash mid-append) is dropped; corruption
anywhere else is an error. Export compacts the log into the ratings CSV the
subjective module ingests.
"""
import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptData,
    DuplicateSession,
    NothingToExport,
    OutOfOrderSubmission,
    ScoreOutOfRange,
    SessionComplete,
    UnknownBundle,
    UnknownImage,
    UnknownSession,
)

MIN_SCORE = 0.0
MAX_SCORE = 100.0


def _pair_digest(critic_id: str, bundle_id: str) -> bytes:
    return hashlib.sha256(f"{critic_id}|{bundle_id}".encode("utf-8")).digest()


def presentation_order(critic_id: str, bundle_id: str, image_ids) -> list[str]:
    """Seeded permutation: reproducible, but different per critic."""
    seed = int.from_bytes(_pair_digest(critic_id, bundle_id)[:8], "big")
    ids = sorted(image_ids)
    gen = np.random.default_rng(seed)
    return [ids[i] for i in gen.permutation(len(ids))]


def _image_token(bundle_id: str, image_id: str) -> str:
    return hashlib.sha256(f"{bundle_id}|{image_id}".encode("utf-8")).hexdigest()[:16]


@dataclass
class RatingSession:
    session_id: str
    critic_id: str
    bundle_id: str
    image_order: list[str]
    cursor: int = 0
    scores: list[tuple[str, float, float]] = field(default_factory=list)

    @property
    def total(self) -> int:
        return len(self.image_order)

    @property
    def complete(self) -> bool:
        return self.cursor >= self.total

    @property
    def current_image(self) -> str:
        if self.complete:
            raise SessionComplete(f"session {self.session_id} has rated every image")
        return self.image_order[self.cursor]


class RatingStore:
    """Bundles, sessions, and the write-ahead score log."""

    def __init__(self, log_path):
        self.log_path = Path(log_path)
        self.bundles: dict[str, dict[str, Path]] = {}
        self.sessions: dict[str, RatingSession] = {}
        self._tokens: dict[str, tuple[str, str]] = {}
        self._lock = threading.Lock()
        self._fh = None
        if self.log_path.exists():
            self._replay()
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.log_path, "ab")

    # -- setup ---------------------------------------------------------------

    def register_bundle(self, bundle_id: str, image_dir) -> None:
        from .augment import list_images

        paths = list_images(image_dir)
        if not paths:
            raise UnknownBundle(f"no images under {image_dir}")
        images = {p.stem: p for p in paths}
        self.bundles[bundle_id] = images
        for image_id in images:
            self._tokens[_image_token(bundle_id, image_id)] = (bundle_id, image_id)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    # -- persistence ----------------------------------------------------------

    def _append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True).encode("utf-8") + b"\n"
        self._fh.write(line)
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def _replay(self) -> None:
        raw = self.log_path.read_bytes()
        if not raw:
            return
        lines = raw.split(b"\n")
        # a file that ends mid-append has no trailing newline; drop that tail
        tail_torn = not raw.endswith(b"\n")
        if lines and lines[-1] == b"":
            lines.pop()
        for i, line in enumerate(lines):
            last = i == len(lines) - 1
            try:
                record = json.loads(line.decode("utf-8"))
            except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                if last and tail_torn:
                    break
                raise CorruptData(f"score log line {i + 1} is corrupt") from exc
            self._apply(record, i + 1)

    def _apply(self, record: dict, lineno: int) -> None:
        event = record.get("event")
        if event == "session":
            session = RatingSession(
                session_id=record["session_id"],
                critic_id=record["critic_id"],
                bundle_id=record["bundle_id"],
                image_order=list(record["order"]),
            )
            if session.session_id in self.sessions:
                raise CorruptData(f"line {lineno}: session logged twice")
            self.sessions[session.session_id] = session
        elif event == "score":
            session = self.sessions.get(record["session_id"])
            if session is None:
                raise CorruptData(f"line {lineno}: score for unknown session")
            if session.complete or record["image_id"] != session.current_image:
                raise CorruptData(f"line {lineno}: score out of session order")
            session.scores.append(
                (record["image_id"], float(record["score"]), float(record.get("ts", 0.0)))
            )
            session.cursor += 1
        else:
            raise CorruptData(f"line {lineno}: unknown event {event!r}")

    # -- operations -----------------------------------------------------------

    def _session(self, session_id: str) -> RatingSession:
        session = self.sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"no session {session_id!r}")
        return session

    def create_session(self, critic_id: str, bundle_id: str) -> RatingSession:
        with self._lock:
            if bundle_id not in self.bundles:
                raise UnknownBundle(f"no bundle {bundle_id!r}")
            for session in self.sessions.values():
                if session.critic_id == critic_id and session.bundle_id == bundle_id:
                    raise DuplicateSession(
                        f"critic {critic_id!r} already has a session for {bundle_id!r}"
                    )
            session_id = _pair_digest(critic_id, bundle_id).hex()[:16]
            order = presentation_order(critic_id, bundle_id, self.bundles[bundle_id])
            session = RatingSession(
                session_id=session_id,
                critic_id=critic_id,
                bundle_id=bundle_id,
                image_order=order,
            )
            self._append(
                {
                    "event": "session",
                    "session_id": session_id,
                    "critic_id": critic_id,
                    "bundle_id": bundle_id,
                    "order": order,
                }
            )
            self.sessions[session_id] = session
            return session

    def next_item(self, session_id: str) -> dict:
        with self._lock:
            session = self._session(session_id)
            image_id = session.current_image
            token = _image_token(session.bundle_id, image_id)
            return {
                "image_id": image_id,
                "image_url": f"/images/{token}",
                "rated": session.cursor,
                "total": session.total,
            }

    def submit_score(self, session_id: str, image_id: str, score: float) -> dict:
        with self._lock:
            session = self._session(session_id)
            current = session.current_image
            if image_id != current:
                raise OutOfOrderSubmission(
                    f"expected a score for {current!r}, got {image_id!r}"
                )
            score = float(score)
            if not (MIN_SCORE <= score <= MAX_SCORE) or not np.isfinite(score):
                raise ScoreOutOfRange(f"score {score} outside [0, 100]")
            ts = time.time()
            self._append(
                {
                    "event": "score",
                    "session_id": session_id,
                    "image_id": image_id,
                    "score": score,
                    "ts": ts,
                }
            )
            session.scores.append((image_id, score, ts))
            session.cursor += 1
            return {"acknowledged": True, "rated": session.cursor, "total": session.total}

    def image_bytes(self, token: str) -> bytes:
        pair = self._tokens.get(token)
        if pair is None:
            raise UnknownImage(f"no image for token {token!r}")
        bundle_id, image_id = pair
        return self.bundles[bundle_id][image_id].read_bytes()

    def export_ratings(self, bundle_id: str) -> str:
        """Ratings CSV (critic_id, image_id, score); partial sessions included."""
        with self._lock:
            if bundle_id not in self.bundles:
                raise UnknownBundle(f"no bundle {bundle_id!r}")
            sessions = sorted(
                (s for s in self.sessions.values() if s.bundle_id == bundle_id),
                key=lambda s: s.critic_id,
            )
            rows = []
            for session in sessions:
                for image_id, score, _ts in session.scores:
                    rows.append((session.critic_id, image_id, score))
            if not rows:
                raise NothingToExport(f"no recorded scores for bundle {bundle_id!r}")
            lines = ["critic_id,image_id,score"]
            lines.extend(f"{c},{i},{s:.17g}" for c, i, s in rows)
            return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# HTTP layer


_HTTP_STATUS = {
    "UnknownBundle": 404,
    "UnknownSession": 404,
    "UnknownImage": 404,
    "NothingToExport": 404,
    "DuplicateSession": 409,
    "OutOfOrderSubmission": 409,
    "SessionComplete": 409,
    "ScoreOutOfRange": 400,
}


def create_app(store: RatingStore):
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse, PlainTextResponse, Response
    from pydantic import BaseModel

    from .errors import PipelineError

    class CreateSessionRequest(BaseModel):
        critic_id: str
        bundle_id: str

    class SubmitScoreRequest(BaseModel):
        image_id: str
        score: float

    app = FastAPI(title="stitched-image rating service")
    app.state.store = store

    @app.exception_handler(PipelineError)
    async def _pipeline_error(request: Request, exc: PipelineError):
        name = type(exc).__name__
        return JSONResponse(
            status_code=_HTTP_STATUS.get(name, 400),
            content={"error_class": name, "message": str(exc)},
        )

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionRequest):
        session = store.create_session(body.critic_id, body.bundle_id)
        return {
            "session_id": session.session_id,
            "rated": session.cursor,
            "total": session.total,
        }

    @app.get("/sessions/{session_id}/next")
    def next_item(session_id: str):
        return store.next_item(session_id)

    @app.post("/sessions/{session_id}/scores")
    def submit_score(session_id: str, body: SubmitScoreRequest):
        return store.submit_score(session_id, body.image_id, body.score)

    @app.get("/images/{token}")
    def image(token: str):
        return Response(content=store.image_bytes(token), media_type="image/png")

    @app.get("/bundles/{bundle_id}/export")
    def export(bundle_id: str):
        return PlainTextResponse(
            content=store.export_ratings(bundle_id), media_type="text/csv"
        )

    return app
