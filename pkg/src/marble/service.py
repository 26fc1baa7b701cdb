"""HTTP service: sessions, exemplar caching, and asynchronous render jobs.

Generations can take seconds to minutes on a real backend, so renders are
queued jobs polled by clients. State survives restarts: session and job
records live in an embedded sqlite store and every image or embedding is
a content-addressed blob on disk. One worker drains the queue per backend,
so generations never overlap on a backend instance.
"""

from __future__ import annotations

import json
import os
import queue
import sqlite3
import threading
import time
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, Field

from . import __version__
from .backends import make_backend
from .editor import load_model
from .embedding import Attribute, embedding_from_bytes, embedding_to_bytes
from .encoders import DEFAULT_ENCODER_ID, encode_image, encoder_config
from .errors import MarbleError
from .injection import load_block_defaults, prepare_context
from .rasters import bytes_digest, load_mask, load_rgb, png_bytes
from .workflow import EditSpec, run_edit

MAX_UPLOAD_BYTES = 16 * 1024 * 1024


@dataclass
class ServiceConfig:
    data_dir: Path
    model_dir: Path | None = None
    backend_id: str = "mock"
    encoder_id: str = DEFAULT_ENCODER_ID
    queue_limit: int = 32
    depth_estimator: str | None = "luma-v1"

    @classmethod
    def from_env(cls) -> "ServiceConfig":
        return cls(
            data_dir=Path(os.environ.get("MARBLE_DATA_DIR", "./marble-data")),
            model_dir=Path(os.environ["MARBLE_MODEL_DIR"])
            if "MARBLE_MODEL_DIR" in os.environ
            else None,
            backend_id=os.environ.get("MARBLE_BACKEND", "mock"),
        )


class BlobStore:
    """Content-addressed file store; digest in, bytes out."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, data: bytes) -> str:
        digest = bytes_digest(data)
        path = self.root / digest[:2] / digest
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        return digest

    def get(self, digest: str) -> bytes:
        return (self.root / digest[:2] / digest).read_bytes()

    def has(self, digest: str) -> bool:
        return (self.root / digest[:2] / digest).exists()


class KVStore:
    """Tiny JSON-over-sqlite key-value store, safe across worker threads."""

    def __init__(self, path: Path):
        self._conn = sqlite3.connect(str(path), check_same_thread=False)
        self._lock = threading.Lock()
        with self._lock:
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS kv (key TEXT PRIMARY KEY, value TEXT NOT NULL)"
            )
            self._conn.commit()

    def put(self, key: str, value: dict) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO kv (key, value) VALUES (?, ?)",
                (key, json.dumps(value)),
            )
            self._conn.commit()

    def get(self, key: str) -> dict | None:
        with self._lock:
            row = self._conn.execute("SELECT value FROM kv WHERE key = ?", (key,)).fetchone()
        return json.loads(row[0]) if row else None

    def close(self) -> None:
        with self._lock:
            self._conn.close()


class RenderBody(BaseModel):
    base: dict = Field(..., description="{'exemplar': name} or {'blend': {a, b, alpha}}")
    edits: list[dict] = Field(default_factory=list)
    injection: dict | None = None
    seed: int | None = None


def _error(status: int, exc_or_code, detail: str | None = None) -> HTTPException:
    if isinstance(exc_or_code, MarbleError):
        code, detail = exc_or_code.code, str(exc_or_code)
    else:
        code = exc_or_code
    return HTTPException(status_code=status, detail={"code": code, "detail": detail})


class ServiceState:
    def __init__(self, config: ServiceConfig):
        self.config = config
        config.data_dir.mkdir(parents=True, exist_ok=True)
        self.blobs = BlobStore(config.data_dir / "blobs")
        self.kv = KVStore(config.data_dir / "marble.db")
        self.backend = make_backend(config.backend_id)
        self.models = {}
        if config.model_dir is not None and Path(config.model_dir).is_dir():
            for path in sorted(Path(config.model_dir).glob("*.mrbl")):
                model = load_model(path)
                self.models[model.attribute] = model
        self.encoder = encoder_config(config.encoder_id)
        self.encoder_calls = 0
        self.cache_hits = 0
        self.jobs_processed = 0
        self.queue: queue.Queue = queue.Queue()
        self.queued_count = 0
        self.count_lock = threading.Lock()
        self.worker = threading.Thread(target=self._drain, daemon=True)
        self.stop_flag = threading.Event()
        self.default_blocks = (
            load_block_defaults(self.backend.backend_id, config.data_dir / "backends")
            or list(self.backend.block_list[:1])
        )

    def start(self) -> None:
        self.worker.start()

    def stop(self) -> None:
        self.stop_flag.set()
        self.queue.put(None)
        self.worker.join(timeout=5)
        self.kv.close()

    # --- embeddings ------------------------------------------------------

    def embed_cached(self, image_bytes: bytes) -> tuple[str, str, bool]:
        """Encode bytes once per digest: (image digest, embedding digest, hit)."""
        digest = bytes_digest(image_bytes)
        emb_key = f"emb:{self.encoder.encoder_id}:{digest}"
        record = self.kv.get(emb_key)
        if record is not None and self.blobs.has(record["blob"]):
            self.cache_hits += 1
            return digest, record["blob"], True
        self.encoder_calls += 1
        z = encode_image(image_bytes, self.encoder)
        blob = self.blobs.put(embedding_to_bytes(z))
        self.kv.put(emb_key, {"blob": blob})
        return digest, blob, False

    def embedding_for(self, digest: str):
        record = self.kv.get(f"emb:{self.encoder.encoder_id}:{digest}")
        if record is None:
            raise MarbleError(f"no cached embedding for digest {digest}")
        return embedding_from_bytes(self.blobs.get(record["blob"]))

    # --- job worker -------------------------------------------------------

    def _drain(self) -> None:
        while not self.stop_flag.is_set():
            item = self.queue.get()
            if item is None:
                return
            job_id = item
            with self.count_lock:
                self.queued_count -= 1
            job = self.kv.get(f"job:{job_id}")
            job["state"] = "running"
            job["started_at"] = time.time()
            self.kv.put(f"job:{job_id}", job)
            try:
                result_digest = self._run_job(job)
                job["state"] = "done"
                job["result"] = result_digest
            except Exception as exc:  # failures land in the job record
                job["state"] = "failed"
                job["error"] = str(exc)
            job["finished_at"] = time.time()
            self.kv.put(f"job:{job_id}", job)
            self.jobs_processed += 1

    def _run_job(self, job: dict) -> str:
        session = self.kv.get(f"session:{job['session_id']}")
        spec = EditSpec.from_dict(job["spec"])
        exemplars = {
            name: self.embedding_for(meta["digest"])
            for name, meta in session["exemplars"].items()
        }
        ctx = self._session_context(session, seed=spec.seed)
        image, _, _ = run_edit(ctx, spec, exemplars, self.models, self.backend)
        return self.blobs.put(png_bytes(image))

    def _session_context(self, session: dict, seed: int):
        image = load_rgb(self.blobs.get(session["image"]))
        mask = load_mask(self.blobs.get(session["mask"]), shape=image.shape[:2])
        if session.get("depth"):
            depth = np.asarray(
                load_rgb(self.blobs.get(session["depth"])).mean(axis=2), dtype=np.float64
            )
        else:
            depth = self.config.depth_estimator
        return prepare_context(
            image, mask, depth, seed=seed,
            steps=session.get("steps", 30), guidance=session.get("guidance", 5.0),
        )


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig.from_env()
    state = ServiceState(config)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        state.start()
        try:
            yield
        finally:
            state.stop()

    app = FastAPI(title="marble service", version=__version__, lifespan=lifespan)
    app.state.marble = state

    @app.exception_handler(MarbleError)
    def _marble_error(request, exc: MarbleError):
        return JSONResponse(status_code=400, content={"code": exc.code, "detail": str(exc)})

    # --- sessions ---------------------------------------------------------

    @app.post("/sessions", status_code=201)
    async def create_session(
        image: UploadFile = File(...),
        mask: UploadFile = File(...),
        depth: UploadFile | None = File(None),
        seed: int = Form(0),
        steps: int = Form(30),
        guidance: float = Form(5.0),
    ):
        blobs = {}
        for name, upload in (("image", image), ("mask", mask), ("depth", depth)):
            if upload is None:
                continue
            data = await upload.read()
            if len(data) > MAX_UPLOAD_BYTES:
                raise _error(413, "PayloadTooLarge", f"{name} exceeds {MAX_UPLOAD_BYTES} bytes")
            blobs[name] = data

        session = {
            "image": None, "mask": None, "depth": None,
            "seed": seed, "steps": steps, "guidance": guidance,
            "exemplars": {}, "created_at": time.time(),
            "backend_id": state.backend.backend_id,
        }
        for name, data in blobs.items():
            session[name] = state.blobs.put(data)
        if session["depth"] is None and state.config.depth_estimator is None:
            raise _error(400, "DepthUnavailable", "no depth upload and no estimator configured")
        try:
            # Validate conditioning eagerly so bad uploads fail at creation.
            state._session_context(session, seed=seed)
        except MarbleError as exc:
            raise _error(400, exc)
        session_id = str(uuid.uuid4())
        state.kv.put(f"session:{session_id}", session)
        return {"session_id": session_id}

    def _session_or_404(session_id: str) -> dict:
        session = state.kv.get(f"session:{session_id}")
        if session is None:
            raise _error(404, "UnknownSession", f"no session {session_id}")
        return session

    @app.post("/sessions/{session_id}/exemplars")
    async def add_exemplar(session_id: str, image: UploadFile = File(...),
                           name: str | None = Form(None)):
        session = _session_or_404(session_id)
        data = await image.read()
        if len(data) > MAX_UPLOAD_BYTES:
            raise _error(413, "PayloadTooLarge", "exemplar exceeds upload limit")
        digest, embedding_digest, cache_hit = state.embed_cached(data)
        blob = state.blobs.put(data)
        name = name or f"exemplar-{len(session['exemplars'])}"
        session["exemplars"][name] = {"digest": digest, "blob": blob}
        state.kv.put(f"session:{session_id}", session)
        return {
            "name": name,
            "digest": digest,
            "embedding_digest": embedding_digest,
            "cache_hit": cache_hit,
        }

    # --- rendering ----------------------------------------------------------

    @app.post("/sessions/{session_id}/render", status_code=202)
    def render(session_id: str, body: RenderBody):
        session = _session_or_404(session_id)
        base = body.base
        if "exemplar" in base:
            base_name, blend_name, alpha = base["exemplar"], None, 1.0
        elif "blend" in base:
            b = base["blend"]
            base_name, blend_name, alpha = b["a"], b["b"], float(b["alpha"])
            if not 0.0 <= alpha <= 1.0:
                raise _error(422, "InvalidWeight", f"alpha {alpha} outside [0, 1]")
        else:
            raise _error(422, "InvalidBase", "base must name an exemplar or a blend")
        for name in filter(None, (base_name, blend_name)):
            if name not in session["exemplars"]:
                raise _error(422, "UnknownExemplar", f"exemplar {name!r} not uploaded")
        edits = []
        for edit in body.edits:
            try:
                attribute = Attribute(edit["attribute"])
            except (KeyError, ValueError):
                raise _error(422, "UnknownAttribute", f"bad edit {edit!r}") from None
            if attribute not in state.models:
                raise _error(422, "UnknownAttribute",
                             f"no model loaded for {attribute.value!r}")
            delta = float(edit["delta"])
            if not -1.0 <= delta <= 1.0:
                raise _error(422, "InvalidStrength", f"delta {delta} outside [-1, 1]")
            edits.append({"attribute": attribute.value, "delta": delta})

        injection = body.injection or {}
        spec = EditSpec(
            base_exemplar=base_name,
            blend_exemplar=blend_name,
            alpha=alpha,
            edits=edits,
            blocks=list(injection.get("blocks", state.default_blocks)),
            scale=float(injection.get("scale", 1.0)),
            seed=int(body.seed if body.seed is not None else session["seed"]),
        )
        with state.count_lock:
            if state.queued_count >= state.config.queue_limit:
                raise _error(409, "QueueFull", "backend queue limit reached")
            state.queued_count += 1
        job_id = str(uuid.uuid4())
        state.kv.put(
            f"job:{job_id}",
            {
                "job_id": job_id,
                "session_id": session_id,
                "state": "queued",
                "spec": spec.to_dict(),
                "created_at": time.time(),
                "result": None,
                "error": None,
            },
        )
        state.queue.put(job_id)
        return {"job_id": job_id}

    # --- reads --------------------------------------------------------------

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        job = state.kv.get(f"job:{job_id}")
        if job is None:
            raise _error(404, "UnknownJob", f"no job {job_id}")
        out = dict(job)
        if job["state"] == "done":
            out["result_url"] = f"/jobs/{job_id}/result"
        return out

    @app.get("/jobs/{job_id}/result")
    def get_job_result(job_id: str):
        job = state.kv.get(f"job:{job_id}")
        if job is None or job["state"] != "done":
            raise _error(404, "NoResult", f"job {job_id} has no result")
        return Response(content=state.blobs.get(job["result"]), media_type="image/png")

    @app.get("/attributes")
    def get_attributes():
        return [
            {
                "attribute": attr.value,
                "encoder_id": model.encoder.encoder_id,
                "rank": model.basis.rank,
                "weights_digest": model.training_record.get("weights_digest", ""),
            }
            for attr, model in sorted(state.models.items(), key=lambda kv: kv[0].value)
        ]

    @app.get("/backends")
    def get_backends():
        return {
            "backend_id": state.backend.backend_id,
            "blocks": list(state.backend.block_list),
            "default_blocks": state.default_blocks,
            "capabilities": sorted(state.backend.capabilities),
        }

    @app.get("/stats")
    def get_stats():
        return {
            "encoder_calls": state.encoder_calls,
            "cache_hits": state.cache_hits,
            "jobs_processed": state.jobs_processed,
        }

    @app.get("/spec")
    def get_openapi_spec():
        return app.openapi()

    return app


def main() -> None:
    import uvicorn

    port = int(os.environ.get("MARBLE_PORT", "8787"))
    uvicorn.run(create_app(), host="127.0.0.1", port=port)


if __name__ == "__main__":
    main()
