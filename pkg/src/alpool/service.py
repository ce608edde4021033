"""Human-in-the-loop annotation sessions over HTTP.

One session = one selection loop: train the committee, select a batch, wait
for annotators, fold the annotations back in, repeat. Every mutation is
journaled append-only (JSONL, one file per session) before it takes effect,
and replaying a journal reconstructs the session state exactly; annotations
are never overwritten, corrections would append superseding records.

Mutations to a session are serialized through a per-session lock; reads see
a consistent snapshot.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import OUT_OF_DOMAIN, Corpus, Utterance, check_bio
from .engine import (
    AlConfig,
    CommitteeConfig,
    FeatureCache,
    PoolFeatures,
    SelectionState,
    advance as engine_advance,
    dedupe_multi_target,
    hide_labels,
    select_batch,
    train_selection_models,
)

STATUSES = ("selecting", "awaiting_annotation", "retraining", "done")
FLAGS = ("ok", "unactionable", "out_of_domain")


class ServiceError(Exception):
    def __init__(self, status_code: int, code: str, message: str, details: list | None = None):
        super().__init__(message)
        self.status_code = status_code
        self.code = code
        self.message = message
        self.details = details or []


@dataclass
class SessionConfig:
    targets: tuple[str, ...]
    algorithm: str
    iterations: int
    batch_size: int
    seed: int
    name: str = ""

    def to_dict(self) -> dict:
        return {
            "targets": list(self.targets),
            "algorithm": self.algorithm,
            "iterations": self.iterations,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        return cls(
            targets=tuple(d["targets"]),
            algorithm=d["algorithm"],
            iterations=int(d["iterations"]),
            batch_size=int(d["batch_size"]),
            seed=int(d["seed"]),
            name=str(d.get("name", "")),
        )

    def al_config(self) -> AlConfig:
        return AlConfig(
            name=self.algorithm,
            iterations=self.iterations,
            batch_size=self.batch_size,
            seed=self.seed,
        )


@dataclass
class Session:
    id: str
    config: SessionConfig
    states: dict[str, SelectionState]
    status: str = "selecting"
    iteration: int = 0
    target_batches: dict[str, list[str]] = field(default_factory=dict)
    batch_items: list[dict] = field(default_factory=list)  # merged, with provenance
    annotations: dict[str, dict] = field(default_factory=dict)  # current batch
    created_at: float = 0.0
    updated_at: float = 0.0

    def batch_ids(self) -> list[str]:
        return [item["id"] for item in self.batch_items]

    def pending_items(self) -> list[dict]:
        return [item for item in self.batch_items if item["id"] not in self.annotations]

    def fingerprint(self) -> dict:
        return {
            "status": self.status,
            "iteration": self.iteration,
            "annotated_sets": {
                t: sorted(s.annotated.ids()) for t, s in sorted(self.states.items())
            },
            "pool_sizes": {t: len(s.pool) for t, s in sorted(self.states.items())},
            "batch": self.batch_ids(),
            "batch_annotations": sorted(self.annotations),
        }


class AnnotationService:
    """Owns the corpora, the sessions, and the per-session journals."""

    def __init__(
        self,
        train: Corpus,
        pool: Corpus,
        journal_dir: str | Path,
        committee_config: CommitteeConfig | None = None,
    ):
        self.train = train
        self.pool = pool
        self.journal_dir = Path(journal_dir)
        self.journal_dir.mkdir(parents=True, exist_ok=True)
        self.committee_config = committee_config or CommitteeConfig()
        self.candidates = hide_labels(pool)
        self.by_id = {c.id: c for c in self.candidates}
        self.pool_features: PoolFeatures | None = None
        self.feature_cache = FeatureCache(self.committee_config.feature_config)
        self.sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._global_lock = threading.Lock()
        for path in sorted(self.journal_dir.glob("*.jsonl")):
            session = self._replay(path)
            self.sessions[session.id] = session
            self._locks[session.id] = threading.Lock()
            # A crash between the "advanced" journal write and the next batch
            # selection leaves a folded session with no batch; redo the
            # (deterministic) selection it was about to run.
            if (
                session.status != "done"
                and not session.batch_items
                and session.iteration < session.config.iterations
            ):
                with self._locks[session.id]:
                    self._select(session)

    # -- journal ------------------------------------------------------------

    def _journal_path(self, session_id: str) -> Path:
        return self.journal_dir / f"{session_id}.jsonl"

    def _append(self, session_id: str, event: dict) -> None:
        event = {"ts": time.time(), **event}
        with self._journal_path(session_id).open("a", encoding="utf-8") as f:
            f.write(json.dumps(event, sort_keys=True) + "\n")

    def _replay(self, path: Path) -> Session:
        session: Session | None = None
        lines = path.read_text(encoding="utf-8").splitlines()
        good: list[str] = []
        events: list[dict] = []
        for line in lines:
            if not line.strip():
                continue
            try:
                events.append(json.loads(line))
                good.append(line)
            except json.JSONDecodeError:
                # torn trailing write: drop it so later appends stay parseable
                path.write_text("\n".join(good) + ("\n" if good else ""), encoding="utf-8")
                break
        for event in events:
            kind = event["type"]
            if kind == "created":
                config = SessionConfig.from_dict(event["config"])
                session = Session(
                    id=event["session_id"],
                    config=config,
                    states={
                        t: SelectionState.initial(t, self.train, self.candidates)
                        for t in config.targets
                    },
                    created_at=event["ts"],
                )
            elif kind == "batch_selected":
                session.iteration = event["iteration"]
                session.target_batches = {
                    t: list(ids) for t, ids in event["target_batches"].items()
                }
                session.batch_items = list(event["items"])
                session.annotations = {}
                session.status = "awaiting_annotation"
            elif kind == "annotation":
                record = event["record"]
                if record.get("supersedes"):
                    session.annotations[record["id"]] = record
                else:
                    # first write wins on replay too
                    session.annotations.setdefault(record["id"], record)
                if not session.pending_items():
                    session.status = "retraining"
            elif kind == "advanced":
                self._fold_batch(session)
                session.iteration = event["iteration"]
            elif kind == "done":
                session.status = "done"
            session.updated_at = event["ts"]
        if session is None:
            raise ServiceError(500, "journal_error", f"empty journal {path.name}")
        return session

    # -- selection loop -----------------------------------------------------

    def _ensure_pool_features(self) -> PoolFeatures:
        if self.pool_features is None:
            self.pool_features = PoolFeatures(self.candidates, self.committee_config)
        return self.pool_features

    def _select(self, session: Session) -> None:
        """Train the committee and pick the next merged batch."""
        config = session.config.al_config()
        per_target: list[tuple[str, list[str]]] = []
        scores_by_id: dict[str, dict] = {}
        for target in session.config.targets:
            state = session.states[target]
            committee = train_selection_models(
                state.annotated,
                target,
                config,
                self.committee_config,
                feature_cache=self.feature_cache,
                iteration=state.iteration,
            )
            before = len(state.audit)
            batch = select_batch(state, committee, config, self._ensure_pool_features())
            for record in state.audit[before:]:
                scores_by_id.setdefault(record["id"], record)
            per_target.append((target, batch))

        merged = dedupe_multi_target(per_target)
        items = []
        for cid, target in merged.items():
            candidate = self.by_id[cid]
            record = scores_by_id[cid]
            item = {
                "id": cid,
                "target": target,
                "text": candidate.text,
                "tokens": list(candidate.tokens),
                "scores": {
                    k: record[k] for k in ("y_lg", "y_sq", "y_hg", "p_crf") if k in record
                },
                "rank": record["rank"],
            }
            items.append(item)

        session.target_batches = {t: list(ids) for t, ids in per_target}
        session.batch_items = items
        session.annotations = {}
        session.status = "awaiting_annotation"
        self._append(
            session.id,
            {
                "type": "batch_selected",
                "iteration": session.iteration,
                "target_batches": session.target_batches,
                "items": items,
            },
        )

    def _fold_batch(self, session: Session) -> None:
        """Advance every target state with the annotated current batch."""
        oracle: dict[str, Utterance] = {}
        for item in session.batch_items:
            record = session.annotations[item["id"]]
            oracle[item["id"]] = annotation_to_utterance(record, item["tokens"])
        for target in session.config.targets:
            batch = session.target_batches.get(target, [])
            session.states[target] = engine_advance(session.states[target], batch, oracle)
        session.batch_items = []
        session.target_batches = {}
        session.annotations = {}

    # -- API operations -----------------------------------------------------

    def create_session(self, config: SessionConfig) -> Session:
        problems = []
        if not config.targets:
            problems.append("targets must be non-empty")
        train_domains = set(self.train.domains())
        for t in config.targets:
            if t not in train_domains:
                problems.append(f"target {t!r} has no seed training data")
        if config.iterations < 1:
            problems.append("iterations must be >= 1")
        if config.batch_size < 1:
            problems.append("batch_size must be >= 1")
        try:
            config.al_config()
        except Exception as e:
            problems.append(str(e))
        if problems:
            raise ServiceError(422, "invalid_config", "invalid session config", problems)

        session = Session(
            id=uuid.uuid4().hex[:12],
            config=config,
            states={
                t: SelectionState.initial(t, self.train, self.candidates)
                for t in config.targets
            },
            created_at=time.time(),
        )
        with self._global_lock:
            self.sessions[session.id] = session
            self._locks[session.id] = threading.Lock()
        self._append(session.id, {"type": "created", "session_id": session.id, "config": config.to_dict()})
        with self._locks[session.id]:
            self._select(session)
        return session

    def _get(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise ServiceError(404, "not_found", f"no session {session_id}")
        return session

    def lock(self, session_id: str) -> threading.Lock:
        return self._locks[session_id]

    def get_batch(self, session_id: str) -> list[dict]:
        session = self._get(session_id)
        if session.status != "awaiting_annotation":
            raise ServiceError(
                409, "wrong_status", f"session is {session.status}, not awaiting_annotation"
            )
        return session.pending_items()

    def submit_annotations(self, session_id: str, records: Sequence[dict]) -> int:
        session = self._get(session_id)
        with self.lock(session_id):
            if session.status != "awaiting_annotation":
                raise ServiceError(
                    409, "wrong_status", f"session is {session.status}, not awaiting_annotation"
                )
            batch_ids = set(session.batch_ids())
            tokens_of = {item["id"]: item["tokens"] for item in session.batch_items}
            problems = []
            seen: set[str] = set()
            duplicates = []
            for record in records:
                rid = record.get("id")
                if rid not in batch_ids:
                    problems.append(f"unknown id {rid!r} for current batch")
                    continue
                already = rid in session.annotations or rid in seen
                if already and not record.get("supersedes"):
                    duplicates.append(rid)
                    continue
                if record.get("supersedes") and not already:
                    problems.append(f"{rid}: nothing to supersede")
                    continue
                seen.add(rid)
                if record.get("flag", "ok") not in FLAGS:
                    problems.append(f"{rid}: unknown flag {record.get('flag')!r}")
                if record.get("flag", "ok") == "ok":
                    problems.extend(_validate_ok_record(record, tokens_of[rid]))
            if problems:
                raise ServiceError(422, "invalid_annotations", "annotation validation failed", problems)
            if duplicates:
                raise ServiceError(
                    409,
                    "duplicate_annotation",
                    "first write wins; ids already annotated",
                    duplicates,
                )
            for record in records:
                normalized = {
                    "id": record["id"],
                    "domain": record.get("domain", OUT_OF_DOMAIN),
                    "intent": record.get("intent", OUT_OF_DOMAIN),
                    "bio_tags": list(record.get("bio_tags") or []),
                    "annotator": record.get("annotator", "unknown"),
                    "flag": record.get("flag", "ok"),
                }
                if record.get("supersedes"):
                    normalized["supersedes"] = record["id"]
                self._append(session.id, {"type": "annotation", "record": normalized})
                session.annotations[record["id"]] = normalized
            if not session.pending_items():
                session.status = "retraining"
            session.updated_at = time.time()
            return len(records)

    def advance_session(self, session_id: str, iteration: int | None = None) -> Session:
        session = self._get(session_id)
        with self.lock(session_id):
            if iteration is not None and iteration != session.iteration:
                return session  # idempotent no-op for stale tokens
            if session.status == "done":
                raise ServiceError(409, "wrong_status", "session is done")
            missing = [i["id"] for i in session.pending_items()]
            if missing:
                raise ServiceError(409, "incomplete_batch", "batch not fully annotated", missing)
            self._fold_batch(session)
            next_iteration = session.iteration + 1
            self._append(session.id, {"type": "advanced", "iteration": next_iteration})
            session.iteration = next_iteration
            if session.iteration >= session.config.iterations:
                session.status = "done"
                self._append(session.id, {"type": "done"})
            else:
                session.status = "selecting"
                self._select(session)
            session.updated_at = time.time()
            return session

    def session_metrics(self, session_id: str) -> dict:
        session = self._get(session_id)
        path = self._journal_path(session.id)
        targets: set[str] = set()
        effective: dict[int, dict[str, dict]] = {}
        iteration = 0
        timestamps: list[float] = []
        for line in path.read_text(encoding="utf-8").splitlines():
            try:
                event = json.loads(line)
            except json.JSONDecodeError:
                break
            if event["type"] == "created":
                targets = set(event["config"]["targets"])
            elif event["type"] == "batch_selected":
                iteration = event["iteration"]
            elif event["type"] == "annotation":
                record = event["record"]
                bucket = effective.setdefault(iteration, {})
                if record.get("supersedes") or record["id"] not in bucket:
                    bucket[record["id"]] = record
                timestamps.append(event["ts"])
        total = sum(len(bucket) for bucket in effective.values())
        if total == 0:
            return {"empty": True, "iterations": [], "throughput_per_minute": 0.0}
        span = max(timestamps) - min(timestamps)
        rows = []
        for it in sorted(effective):
            bucket = effective[it]
            in_target = sum(
                1 for r in bucket.values() if r["flag"] == "ok" and r["domain"] in targets
            )
            noise = sum(1 for r in bucket.values() if r["flag"] != "ok")
            rows.append(
                {
                    "iteration": it,
                    "annotated": len(bucket),
                    "in_target_fraction": in_target / len(bucket),
                    "noise_fraction": noise / len(bucket),
                }
            )
        return {
            "empty": False,
            "iterations": rows,
            "throughput_per_minute": (total * 60.0 / span) if span > 0 else 0.0,
        }

    def snapshot(self, session: Session) -> dict:
        return {
            "id": session.id,
            "name": session.config.name,
            "status": session.status,
            "iteration": session.iteration,
            "iterations_total": session.config.iterations,
            "targets": list(session.config.targets),
            "algorithm": session.config.algorithm,
            "batch_size": session.config.batch_size,
            "batch_total": len(session.batch_items),
            "batch_pending": len(session.pending_items()),
            "created_at": session.created_at,
            "updated_at": session.updated_at,
        }


def _validate_ok_record(record: dict, tokens: list[str]) -> list[str]:
    problems = []
    rid = record.get("id")
    if not record.get("domain"):
        problems.append(f"{rid}: ok records need a domain")
    if not record.get("intent"):
        problems.append(f"{rid}: ok records need an intent")
    tags = record.get("bio_tags")
    if tags is None:
        problems.append(f"{rid}: ok records need bio_tags")
        return problems
    if len(tags) != len(tokens):
        problems.append(
            f"{rid}: bio_tags length {len(tags)} != tokens length {len(tokens)}"
        )
        return problems
    issue = check_bio(tags)
    if issue is not None:
        problems.append(f"{rid}: {issue}")
    return problems


def annotation_to_utterance(record: dict, tokens: Sequence[str]) -> Utterance:
    if record["flag"] == "ok":
        domain, intent = record["domain"], record["intent"]
        tags = tuple(record["bio_tags"])
    else:
        # unactionable / out-of-domain answers feed the negative class
        domain, intent = OUT_OF_DOMAIN, OUT_OF_DOMAIN
        tags = tuple("O" for _ in tokens)
    return Utterance(
        id=record["id"],
        text=" ".join(tokens),
        tokens=tuple(tokens),
        domain=domain,
        intent=intent,
        bio_tags=tags,
        source="live",
    )


# --------------------------------------------------------------------------
# HTTP layer
# --------------------------------------------------------------------------


try:  # pydantic request models; fastapi is an optional import for library use
    from pydantic import BaseModel

    class CreateSessionBody(BaseModel):
        targets: list[str]
        algorithm: str = "Majority-CRF"
        iterations: int = 6
        batch_size: int = 20
        seed: int = 0
        name: str = ""

    class AnnotationBody(BaseModel):
        id: str
        domain: str | None = None
        intent: str | None = None
        bio_tags: list[str] | None = None
        annotator: str = "unknown"
        flag: str = "ok"
        supersedes: bool = False

    class AdvanceBody(BaseModel):
        iteration: int | None = None

except ImportError:  # pragma: no cover
    pass


def create_app(service: AnnotationService, ui_dir: str | Path | None = None):
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import JSONResponse

    app = FastAPI(title="annotation service")

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status_code,
            content={"code": exc.code, "message": exc.message, "details": exc.details},
        )

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={
                "code": "validation_error",
                "message": "request body failed validation",
                "details": [str(e) for e in exc.errors()],
            },
        )

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        session = service.create_session(
            SessionConfig(
                targets=tuple(body.targets),
                algorithm=body.algorithm,
                iterations=body.iterations,
                batch_size=body.batch_size,
                seed=body.seed,
                name=body.name,
            )
        )
        return service.snapshot(session)

    @app.get("/sessions")
    def list_sessions():
        return [service.snapshot(s) for s in service.sessions.values()]

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return service.snapshot(service._get(session_id))

    @app.get("/sessions/{session_id}/batch")
    def get_batch(session_id: str):
        session = service._get(session_id)
        return {
            "session_id": session_id,
            "iteration": session.iteration,
            "items": service.get_batch(session_id),
        }

    @app.post("/sessions/{session_id}/annotations")
    def submit_annotations(session_id: str, records: list[AnnotationBody]):
        accepted = service.submit_annotations(
            session_id, [r.model_dump() for r in records]
        )
        session = service._get(session_id)
        return {"accepted": accepted, "status": session.status}

    @app.post("/sessions/{session_id}/advance")
    def advance(session_id: str, body: AdvanceBody | None = None):
        session = service.advance_session(
            session_id, iteration=body.iteration if body else None
        )
        return service.snapshot(session)

    @app.get("/sessions/{session_id}/metrics")
    def metrics(session_id: str):
        service._get(session_id)
        return service.session_metrics(session_id)

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
