"""HTTP survey and scoring service.

Issues pairs chosen by the scheduler, accepts judgments, persists every
acknowledged response to an append-only JSON-lines log (written and flushed
before the acknowledgment goes out), keeps a live Elo leaderboard, and serves
trained-model scores. Restart recovery replays the log, so scheduler counts,
leaderboard, and stats always agree with what clients were told.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from pcsrank import dataio, scheduler
from pcsrank.baselines import EloConfig, elo_update
from pcsrank.core import Comparison, Item

CHOICES = ("left", "tie", "right")
CHOICE_TO_OUTCOME = {"left": -1, "tie": 0, "right": +1}
OUTCOME_TO_CHOICE = {v: k for k, v in CHOICE_TO_OUTCOME.items()}

ENV_LISTEN_ADDR = "PCS_LISTEN_ADDR"
ENV_ITEMS_PATH = "PCS_ITEMS_PATH"
ENV_LOG_PATH = "PCS_LOG_PATH"
ENV_MODEL_CHECKPOINT = "PCS_MODEL_CHECKPOINT"

DEFAULT_LISTEN_ADDR = "127.0.0.1:8000"
PAIR_TTL_SECONDS = 24 * 3600


@dataclass(frozen=True)
class ResponseRecord:
    """One acknowledged judgment, exactly as persisted."""

    response_id: str
    left_id: str
    right_id: str
    choice: str
    respondent_id: str
    received_at: datetime

    @property
    def outcome(self) -> int:
        return CHOICE_TO_OUTCOME[self.choice]

    def to_comparison(self) -> Comparison:
        return Comparison(
            left_id=self.left_id,
            right_id=self.right_id,
            outcome=self.outcome,
            respondent_id=self.respondent_id,
            created_at=self.received_at,
        )

    def to_json_dict(self) -> dict:
        return {
            "response_id": self.response_id,
            "left_id": self.left_id,
            "right_id": self.right_id,
            "choice": self.choice,
            "respondent_id": self.respondent_id,
            "received_at": dataio.format_timestamp(self.received_at),
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ResponseRecord":
        return cls(
            response_id=str(payload["response_id"]),
            left_id=str(payload["left_id"]),
            right_id=str(payload["right_id"]),
            choice=str(payload["choice"]),
            respondent_id=str(payload["respondent_id"]),
            received_at=dataio.parse_timestamp(payload["received_at"]),
        )


@dataclass(frozen=True)
class ServiceConfig:
    items_path: str
    log_path: str
    listen_addr: str = DEFAULT_LISTEN_ADDR
    live_rating: str = "elo"  # "elo" | "none"
    checkpoint_path: Optional[str] = None
    static_dir: Optional[str] = None
    scheduler_seed: int = 0
    pair_ttl_seconds: float = PAIR_TTL_SECONDS
    respondent_quota: Optional[int] = None
    elo: EloConfig = field(default_factory=EloConfig)

    def __post_init__(self) -> None:
        if self.live_rating not in ("elo", "none"):
            raise ValueError("live_rating must be 'elo' or 'none'")
        if self.pair_ttl_seconds <= 0:
            raise ValueError("pair_ttl_seconds must be > 0")

    @classmethod
    def from_env(cls, **overrides) -> "ServiceConfig":
        """Build a config from PCS_* environment variables plus overrides."""
        values: dict = {}
        if os.environ.get(ENV_ITEMS_PATH):
            values["items_path"] = os.environ[ENV_ITEMS_PATH]
        if os.environ.get(ENV_LOG_PATH):
            values["log_path"] = os.environ[ENV_LOG_PATH]
        if os.environ.get(ENV_LISTEN_ADDR):
            values["listen_addr"] = os.environ[ENV_LISTEN_ADDR]
        if os.environ.get(ENV_MODEL_CHECKPOINT):
            values["checkpoint_path"] = os.environ[ENV_MODEL_CHECKPOINT]
        values.update({k: v for k, v in overrides.items() if v is not None})
        if "items_path" not in values or "log_path" not in values:
            raise ValueError(
                f"items and log paths are required (flags, config file, or "
                f"{ENV_ITEMS_PATH}/{ENV_LOG_PATH})"
            )
        return cls(**values)


@dataclass
class _IssuedPair:
    left_id: str
    right_id: str
    issued_at: float


class SurveyService:
    """All mutable service state behind one lock.

    The lock serializes log appends, scheduler updates, and leaderboard
    updates, so the acknowledgment order defines the canonical log order.
    """

    def __init__(self, config: ServiceConfig):
        self.config = config
        items, _ = dataio.load_items(config.items_path, standardize=True)
        self.items: list[Item] = items
        self.items_by_id = {item.id: item for item in items}
        self.sched = scheduler.new_state(seed=config.scheduler_seed)
        self.issued: dict[str, _IssuedPair] = {}
        self.records: dict[str, ResponseRecord] = {}
        self.ratings: dict[str, float] = {}
        self.model_scores: Optional[dict[str, float]] = None
        if config.checkpoint_path:
            table = dataio.score_catalog(config.checkpoint_path, config.items_path)
            self.model_scores = table.scores
        self.lock = threading.Lock()
        self._replay_log()

    # -- persistence ------------------------------------------------------

    def _replay_log(self) -> None:
        path = Path(self.config.log_path)
        if not path.exists():
            return
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = ResponseRecord.from_json_dict(json.loads(line))
                if record.response_id in self.records:
                    continue
                self._apply(record)

    def _append(self, record: ResponseRecord) -> None:
        with open(self.config.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record.to_json_dict()) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _apply(self, record: ResponseRecord) -> None:
        """In-memory effects of one response (used live and during replay)."""
        self.records[record.response_id] = record
        scheduler.record_response(
            self.sched, record.to_comparison(), response_id=record.response_id
        )
        if self.config.live_rating == "elo":
            cfg = self.config.elo
            r_l = self.ratings.setdefault(record.left_id, cfg.initial_rating)
            r_r = self.ratings.setdefault(record.right_id, cfg.initial_rating)
            self.ratings[record.left_id], self.ratings[record.right_id] = elo_update(
                r_l, r_r, record.outcome, cfg
            )

    # -- request handlers ---------------------------------------------------

    def issue_pair(self, respondent: str) -> dict:
        if len(self.items) < 2:
            raise HTTPException(status_code=503, detail="catalog has fewer than 2 items")
        with self.lock:
            if self.config.respondent_quota is not None:
                answered = sum(
                    1 for r in self.records.values() if r.respondent_id == respondent
                )
                if answered >= self.config.respondent_quota:
                    raise HTTPException(status_code=429, detail="respondent quota reached")
            self._expire_pairs()
            left, right = scheduler.next_pair(self.sched, self.items)
            pair_id = uuid.uuid4().hex
            self.issued[pair_id] = _IssuedPair(left.id, right.id, time.monotonic())
        return {
            "pair_id": pair_id,
            "left": _item_payload(left),
            "right": _item_payload(right),
        }

    def accept_response(
        self, response_id: str, pair_id: str, choice: str, respondent: str
    ) -> tuple[int, dict]:
        with self.lock:
            if response_id in self.records:
                return 200, {"status": "duplicate", "response_id": response_id}
            issued = self.issued.get(pair_id)
            if issued is None or self._expired(issued):
                raise HTTPException(status_code=404, detail="unknown or expired pair_id")
            record = ResponseRecord(
                response_id=response_id,
                left_id=issued.left_id,
                right_id=issued.right_id,
                choice=choice,
                respondent_id=respondent,
                received_at=datetime.now(timezone.utc),
            )
            try:
                self._append(record)
            except OSError as exc:
                raise HTTPException(
                    status_code=500, detail=f"persistence failure: {exc}"
                ) from exc
            self._apply(record)
            del self.issued[pair_id]
        return 201, {"status": "ok", "response_id": response_id}

    def scores(self, method: str) -> list[dict]:
        if method == "live":
            if self.config.live_rating != "elo":
                raise HTTPException(status_code=404, detail="live rating disabled")
            with self.lock:
                table = {item.id: self.config.elo.initial_rating for item in self.items}
                table.update(self.ratings)
        elif method == "model":
            if self.model_scores is None:
                raise HTTPException(status_code=404, detail="no model checkpoint loaded")
            table = dict(self.model_scores)
        else:
            raise HTTPException(status_code=404, detail=f"unknown method {method!r}")
        ranked = sorted(table.items(), key=lambda kv: (-kv[1], kv[0]))
        return [{"item_id": iid, "score": score} for iid, score in ranked]

    def stats(self) -> dict:
        with self.lock:
            n = len(self.records)
            ties = sum(1 for r in self.records.values() if r.choice == "tie")
            counts = [self.sched.shown_counts.get(item.id, 0) for item in self.items]
            per_respondent: dict[str, int] = {}
            for record in self.records.values():
                per_respondent[record.respondent_id] = (
                    per_respondent.get(record.respondent_id, 0) + 1
                )
        return {
            "n_responses": n,
            "tie_fraction": (ties / n) if n else 0.0,
            "exposure": {
                "min": min(counts) if counts else 0,
                "max": max(counts) if counts else 0,
            },
            "per_respondent_counts": per_respondent,
        }

    def _expired(self, issued: _IssuedPair) -> bool:
        return time.monotonic() - issued.issued_at > self.config.pair_ttl_seconds

    def _expire_pairs(self) -> None:
        stale = [pid for pid, issued in self.issued.items() if self._expired(issued)]
        for pid in stale:
            del self.issued[pid]


def _item_payload(item: Item) -> dict:
    return {
        "id": item.id,
        "media_uri": item.media_uri,
        "attributes": dict(item.attributes),
    }


def create_app(config: ServiceConfig) -> FastAPI:
    service = SurveyService(config)
    app = FastAPI(title="pcsrank survey service")
    app.state.service = service

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.get("/api/pair")
    def get_pair(respondent: str = "") -> dict:
        if not respondent or len(respondent) > 128 or not respondent.isprintable():
            raise HTTPException(status_code=400, detail="malformed respondent id")
        return service.issue_pair(respondent)

    @app.post("/api/response")
    async def post_response(request: Request) -> JSONResponse:
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise HTTPException(status_code=400, detail="body must be JSON")
        if not isinstance(body, dict):
            raise HTTPException(status_code=400, detail="body must be a JSON object")
        choice = body.get("choice")
        if choice not in CHOICES:
            raise HTTPException(
                status_code=400, detail=f"choice must be one of {list(CHOICES)}"
            )
        response_id = body.get("response_id")
        if not isinstance(response_id, str) or not response_id:
            raise HTTPException(status_code=400, detail="response_id must be non-empty")
        pair_id = body.get("pair_id")
        if not isinstance(pair_id, str) or not pair_id:
            raise HTTPException(status_code=400, detail="pair_id must be non-empty")
        respondent = body.get("respondent")
        if not isinstance(respondent, str) or not respondent:
            raise HTTPException(status_code=400, detail="respondent must be non-empty")
        status, payload = service.accept_response(response_id, pair_id, choice, respondent)
        return JSONResponse(status_code=status, content=payload)

    @app.get("/api/scores")
    def get_scores(method: str = "live") -> list[dict]:
        return service.scores(method)

    @app.get("/api/stats")
    def get_stats() -> dict:
        return service.stats()

    if config.static_dir and Path(config.static_dir).is_dir():
        app.mount("/", StaticFiles(directory=config.static_dir, html=True), name="ui")

    return app


def serve(config: ServiceConfig) -> None:
    """Run the service until interrupted (blocking)."""
    import uvicorn

    host, _, port = config.listen_addr.rpartition(":")
    app = create_app(config)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
