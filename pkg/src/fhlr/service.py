"""HTTP annotation service: serves selected windows to human annotators and
collects their labels into an ExpertSet for the refinement stage.

Durability model: every session is an append-only JSON-lines event log
(create / vote / finalize) under the store directory; an event is fsynced
before the request is acked, and replaying the log reconstructs the exact
session state after a restart. All mutations of one session are serialized
through a per-session lock. Items are not leased: several annotators may
label the same item, and finalization aggregates by majority vote with ties
broken toward the smallest class index.

Endpoints (JSON bodies, errors as {"error": code, "detail": ...}):
  POST /sessions                     create (409 on duplicate nonce key)
  GET  /sessions/{id}                metadata + per-index status
  GET  /sessions/{id}/batch?annotator=A&size=k
  POST /sessions/{id}/labels         {"annotator_id": A, "labels": [{index,label}]}
  POST /sessions/{id}/finalize       -> ExpertSet document
  GET  /sessions/{id}/progress
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .data import load_canonical, read_manifest
from .oracle import fleiss_kappa


class ServiceError(Exception):
    def __init__(self, status: int, code: str, detail: str):
        self.status, self.code, self.detail = status, code, detail
        super().__init__(detail)


@dataclass
class Session:
    session_id: str
    dataset_dir: str
    split: str
    indices: list[int]
    class_names: list[str]
    nonce: str
    created_at: float
    # votes[index][annotator_id] = label (latest wins)
    votes: dict[int, dict[str, int]] = field(default_factory=dict)
    finalized: bool = False
    finalized_at: float | None = None
    expert_set: dict | None = None

    def labeled_indices(self) -> set[int]:
        return {i for i, v in self.votes.items() if v}

    def status(self) -> dict[int, str]:
        labeled = self.labeled_indices()
        return {i: ("labeled" if i in labeled else "pending")
                for i in self.indices}

    def to_public(self) -> dict:
        status = self.status()
        return {
            "session_id": self.session_id,
            "dataset_dir": self.dataset_dir,
            "split": self.split,
            "indices": self.indices,
            "class_names": self.class_names,
            "created_at": self.created_at,
            "finalized": self.finalized,
            "finalized_at": self.finalized_at,
            "items": [{"index": i, "status": status[i],
                       "votes": len(self.votes.get(i, {}))}
                      for i in self.indices],
        }


class SessionStore:
    """Event-sourced session registry rooted at a directory."""

    def __init__(self, root: str, data_root: str | None = None):
        self.root = os.path.abspath(root)
        self.data_root = os.path.abspath(data_root) if data_root else None
        os.makedirs(self.root, exist_ok=True)
        self._sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()
        self._datasets: dict[tuple[str, str], object] = {}
        self._replay_all()

    # -- durability ---------------------------------------------------------

    def _log_path(self, session_id: str) -> str:
        return os.path.join(self.root, f"{session_id}.events.jsonl")

    def _append(self, session_id: str, event: dict) -> None:
        event = {"ts": time.time(), **event}
        with open(self._log_path(session_id), "a") as fh:
            fh.write(json.dumps(event) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _replay_all(self) -> None:
        for fname in sorted(os.listdir(self.root)):
            if fname.endswith(".events.jsonl"):
                self._replay(os.path.join(self.root, fname))

    def _replay(self, path: str) -> None:
        session: Session | None = None
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                kind = event["event"]
                if kind == "create":
                    session = Session(
                        session_id=event["session_id"],
                        dataset_dir=event["dataset_dir"],
                        split=event["split"],
                        indices=list(event["indices"]),
                        class_names=list(event["class_names"]),
                        nonce=event["nonce"],
                        created_at=event["ts"],
                    )
                elif kind == "vote" and session is not None:
                    session.votes.setdefault(int(event["index"]), {})[
                        event["annotator_id"]] = int(event["label"])
                elif kind == "finalize" and session is not None:
                    session.finalized = True
                    session.finalized_at = event["ts"]
                    session.expert_set = event["expert_set"]
        if session is not None:
            self._sessions[session.session_id] = session
            self._locks[session.session_id] = threading.Lock()

    # -- helpers ------------------------------------------------------------

    def _lock(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            if session_id not in self._locks:
                raise ServiceError(404, "unknown_session",
                                   f"no session {session_id}")
            return self._locks[session_id]

    def get(self, session_id: str) -> Session:
        session = self._sessions.get(session_id)
        if session is None:
            raise ServiceError(404, "unknown_session", f"no session {session_id}")
        return session

    def _dataset(self, dataset_dir: str, split: str):
        key = (dataset_dir, split)
        if key not in self._datasets:
            self._datasets[key] = load_canonical(dataset_dir, split)
        return self._datasets[key]

    def _resolve_dataset_dir(self, dataset_dir: str) -> str:
        path = os.path.abspath(dataset_dir)
        if self.data_root is not None and not (
                path == self.data_root or path.startswith(self.data_root + os.sep)):
            raise ServiceError(400, "unknown_dataset",
                               f"dataset outside data root: {dataset_dir}")
        if not os.path.isdir(path):
            raise ServiceError(400, "unknown_dataset", f"no directory {path}")
        return path

    # -- operations ---------------------------------------------------------

    def create_session(self, dataset_dir: str, indices: list[int],
                       class_names: list[str], split: str = "train",
                       nonce: str = "") -> Session:
        if not indices:
            raise ServiceError(400, "empty_selection", "no indices given")
        path = self._resolve_dataset_dir(dataset_dir)
        try:
            manifest = read_manifest(path)
            ds = self._dataset(path, split)
        except Exception as exc:
            raise ServiceError(400, "unknown_dataset", str(exc)) from exc
        n = len(ds)
        bad = [i for i in indices if not 0 <= int(i) < n]
        if bad:
            raise ServiceError(400, "index_out_of_range",
                               f"indices {bad[:5]} outside [0, {n})")
        if len(set(indices)) != len(indices):
            raise ServiceError(400, "duplicate_indices",
                               "selection contains duplicates")
        if len(class_names) != ds.num_classes:
            raise ServiceError(400, "class_names_mismatch",
                               f"need {ds.num_classes} class names")
        key = json.dumps([path, split, sorted(int(i) for i in indices), nonce],
                         sort_keys=True)
        session_id = hashlib.sha256(key.encode()).hexdigest()[:16]
        with self._registry_lock:
            if session_id in self._sessions:
                raise ServiceError(409, "duplicate_session",
                                   "identical (dataset, indices, nonce) exists")
            session = Session(session_id=session_id, dataset_dir=path,
                              split=split,
                              indices=[int(i) for i in indices],
                              class_names=list(class_names), nonce=nonce,
                              created_at=time.time())
            self._sessions[session_id] = session
            self._locks[session_id] = threading.Lock()
        self._append(session_id, {
            "event": "create", "session_id": session_id, "dataset_dir": path,
            "split": split, "indices": session.indices,
            "class_names": session.class_names, "nonce": nonce,
            "sample_rate_hz": manifest["sample_rate_hz"],
        })
        return session

    def next_batch(self, session_id: str, annotator_id: str,
                   batch_size: int) -> list[dict]:
        session = self.get(session_id)
        if batch_size < 1:
            raise ServiceError(400, "bad_batch_size", "size must be >= 1")
        with self._lock(session_id):
            labeled_by_me = {i for i, v in session.votes.items()
                             if annotator_id in v}
            anyone = session.labeled_indices()
            position = {idx: k for k, idx in enumerate(session.indices)}
            todo = [i for i in session.indices if i not in labeled_by_me]
            # pending-first: items nobody touched come before partially-labeled
            todo.sort(key=lambda i: (i in anyone, position[i]))
            todo = todo[:batch_size]
            dataset_dir, split = session.dataset_dir, session.split
        ds = self._dataset(dataset_dir, split)
        manifest = read_manifest(dataset_dir)
        return [{
            "index": i,
            "channels": ds.X[i].tolist(),
            "sample_rate_hz": manifest["sample_rate_hz"],
            "class_names": session.class_names,
        } for i in todo]

    def submit_labels(self, session_id: str, annotator_id: str,
                      labels: list[dict]) -> dict:
        session = self.get(session_id)
        if not annotator_id:
            raise ServiceError(400, "missing_annotator", "annotator_id required")
        with self._lock(session_id):
            if session.finalized:
                raise ServiceError(409, "session_closed",
                                   "session already finalized")
            c = len(session.class_names)
            index_set = set(session.indices)
            for item in labels:
                idx, label = int(item["index"]), int(item["label"])
                if idx not in index_set:
                    raise ServiceError(400, "index_not_in_session",
                                       f"index {idx} not part of this session")
                if not 0 <= label < c:
                    raise ServiceError(400, "label_out_of_range",
                                       f"label {label} outside [0, {c})")
            # validation done; log first, ack after
            for item in labels:
                idx, label = int(item["index"]), int(item["label"])
                self._append(session_id, {"event": "vote",
                                          "annotator_id": annotator_id,
                                          "index": idx, "label": label})
                session.votes.setdefault(idx, {})[annotator_id] = label
            status = session.status()
            return {"accepted": len(labels),
                    "labeled": sum(1 for s in status.values() if s == "labeled"),
                    "total": len(session.indices)}

    def finalize_session(self, session_id: str) -> dict:
        session = self.get(session_id)
        with self._lock(session_id):
            if session.finalized:
                return session.expert_set
            missing = [i for i in session.indices if not session.votes.get(i)]
            if missing:
                raise ServiceError(409, "unlabeled_items",
                                   f"{len(missing)} items still pending "
                                   f"(first: {missing[:5]})")
            c = len(session.class_names)
            annotators = sorted({a for v in session.votes.values() for a in v})
            labels = []
            vote_rows = []
            for i in session.indices:
                votes_i = session.votes[i]
                row = np.asarray(sorted(votes_i.values()), dtype=np.int64)
                counts = np.bincount(row, minlength=c)
                labels.append(int(counts.argmax()))
                vote_rows.append(votes_i)
            expert_set = {
                "indices": list(session.indices),
                "corrected_labels": labels,
                "source": "live_ui",
                "annotators": annotators,
            }
            if len(annotators) >= 2:
                full = [i for i in session.indices
                        if len(session.votes[i]) == len(annotators)]
                if full:
                    matrix = np.asarray(
                        [[session.votes[i][a] for a in annotators] for i in full],
                        dtype=np.int64)
                    try:
                        expert_set["fleiss_kappa"] = fleiss_kappa(matrix, c)
                    except Exception:
                        pass
            self._append(session_id, {"event": "finalize",
                                      "expert_set": expert_set})
            session.finalized = True
            session.finalized_at = time.time()
            session.expert_set = expert_set
            return expert_set

    def progress(self, session_id: str) -> dict:
        session = self.get(session_id)
        with self._lock(session_id):
            status = session.status()
            per_annotator: dict[str, int] = {}
            for votes_i in session.votes.values():
                for a in votes_i:
                    per_annotator[a] = per_annotator.get(a, 0) + 1
            labeled = sum(1 for s in status.values() if s == "labeled")
            return {"session_id": session_id,
                    "total": len(session.indices),
                    "labeled": labeled,
                    "pending": len(session.indices) - labeled,
                    "finalized": session.finalized,
                    "per_annotator": per_annotator}


def create_app(store: SessionStore):
    """FastAPI application bound to one SessionStore."""
    from fastapi import FastAPI, Request
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import FileResponse, JSONResponse

    app = FastAPI(title="fhlr annotation service")
    # the UI may be served from another origin (dev server, file://)
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(ServiceError)
    async def _service_error(_request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status,
                            content={"error": exc.code, "detail": exc.detail})

    @app.post("/sessions", status_code=201)
    async def create_session(body: dict):
        session = store.create_session(
            dataset_dir=body.get("dataset_dir", ""),
            indices=body.get("indices", []),
            class_names=body.get("class_names", []),
            split=body.get("split", "train"),
            nonce=body.get("nonce", ""))
        return {"session_id": session.session_id}

    @app.get("/sessions/{session_id}")
    async def get_session(session_id: str):
        return store.get(session_id).to_public()

    @app.get("/sessions/{session_id}/batch")
    async def get_batch(session_id: str, annotator: str = "", size: int = 10):
        if not annotator:
            raise ServiceError(400, "missing_annotator",
                               "annotator query parameter required")
        return store.next_batch(session_id, annotator, size)

    @app.post("/sessions/{session_id}/labels")
    async def post_labels(session_id: str, body: dict):
        return store.submit_labels(session_id,
                                   body.get("annotator_id", ""),
                                   body.get("labels", []))

    @app.post("/sessions/{session_id}/finalize")
    async def finalize(session_id: str):
        return store.finalize_session(session_id)

    @app.get("/sessions/{session_id}/progress")
    async def progress(session_id: str):
        return store.progress(session_id)

    ui_dir = os.environ.get("FHLR_UI_DIR")
    if ui_dir and os.path.isdir(ui_dir):
        index_path = os.path.join(ui_dir, "index.html")

        @app.get("/")
        async def ui_index():
            return FileResponse(index_path)

        @app.get("/ui/{path:path}")
        async def ui_assets(path: str):
            target = os.path.abspath(os.path.join(ui_dir, path))
            if not target.startswith(os.path.abspath(ui_dir)) \
                    or not os.path.isfile(target):
                raise ServiceError(404, "not_found", path)
            return FileResponse(target)

    return app


def serve(store_dir: str, data_root: str | None, host: str, port: int) -> None:
    import uvicorn
    store = SessionStore(store_dir, data_root)
    uvicorn.run(create_app(store), host=host, port=port, log_level="warning")
