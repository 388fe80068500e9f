"""REST service over the knowledge graph: vocabulary lookups, recipe
detail, question answering, and queued benchmark/evaluation jobs.

The graph is read-only; jobs write artifacts under the configured data
directory, content-addressed by their input digest so identical requests
reuse the finished artifact.
"""

from __future__ import annotations

import hashlib
import json
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .benchgen import GenConfig, GenerationError, generate_dataset, read_kgqa_items, write_kgqa_dataset
from .constraints import (
    ConstraintError,
    ConstraintQuery,
    QuestionParseError,
    load_templates,
    render_question,
)
from .kg_store import canonical_tag, ingest_corpus, normalize_title
from .pipeline import (
    DEFAULT_CHUNK_BUDGET,
    BackendConfig,
    make_backend,
    recommend,
)
from .report import evaluate_retrieval, write_eval_report

__all__ = ["ServiceConfig", "JobRecord", "JobStore", "create_app", "serve"]


@dataclass(frozen=True)
class ServiceConfig:
    """Startup configuration for the REST service."""

    corpus_path: Path
    data_dir: Path
    templates_path: Path | None = None
    backend: BackendConfig = field(default_factory=BackendConfig)
    chunk_budget: int = DEFAULT_CHUNK_BUDGET
    host: str = "127.0.0.1"
    port: int = 8000
    corpus_format: str = "jsonl"

    def __post_init__(self):
        if self.chunk_budget < 1:
            raise ValueError("chunk_budget must be >= 1")


@dataclass
class JobRecord:
    """One queued benchmark or evaluation job."""

    job_id: str
    kind: str
    status: str = "queued"
    output_path: str | None = None
    error: str | None = None
    timings: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "kind": self.kind,
            "status": self.status,
            "output_path": self.output_path,
            "error": self.error,
            "timings": dict(self.timings),
        }


class JobStore:
    """Single-worker job queue keyed by input digest.

    Submitting a digest that already has a queued, running, or finished
    job returns that record instead of queueing a duplicate.
    """

    def __init__(self):
        self._records: dict[str, JobRecord] = {}
        self._queue: "queue.Queue[tuple[str, object]]" = queue.Queue()
        self._lock = threading.Lock()
        self._worker = threading.Thread(target=self._run, daemon=True)
        self._worker.start()

    def submit(self, kind: str, digest: str, fn) -> JobRecord:
        with self._lock:
            existing = self._records.get(digest)
            if existing is not None and existing.status != "error":
                return existing
            record = JobRecord(
                job_id=digest, kind=kind, timings={"queued_at": time.time()}
            )
            self._records[digest] = record
            self._queue.put((digest, fn))
            return record

    def get(self, job_id: str) -> JobRecord | None:
        with self._lock:
            return self._records.get(job_id)

    def _run(self) -> None:
        while True:
            digest, fn = self._queue.get()
            with self._lock:
                record = self._records[digest]
                record.status = "running"
                record.timings["started_at"] = time.time()
            try:
                output = fn()
            except Exception as exc:
                with self._lock:
                    record.status = "error"
                    record.error = str(exc)
                    record.timings["finished_at"] = time.time()
            else:
                with self._lock:
                    record.status = "done"
                    record.output_path = str(output)
                    record.timings["finished_at"] = time.time()
            finally:
                self._queue.task_done()


def _digest(kind: str, payload: dict) -> str:
    canonical = json.dumps({"kind": kind, "payload": payload}, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


class QueryRequest(BaseModel):
    question: str | None = None
    query: dict | None = None
    backend: str | None = None
    endpoint: str | None = None
    chunk_budget: int | None = None


class BenchmarkRequest(BaseModel):
    config: dict = {}


class EvaluateRequest(BaseModel):
    dataset: str
    backend: str | None = None
    endpoint: str | None = None
    chunk_budget: int | None = None


def _error(status: int, code: str, message: str, span: tuple[int, int] | None = None) -> JSONResponse:
    body: dict = {"code": code, "message": message}
    if span is not None:
        body["span"] = list(span)
    return JSONResponse(status_code=status, content=body)


def create_app(config: ServiceConfig) -> FastAPI:
    """Build the service over a freshly ingested corpus (fail fast)."""
    kg = ingest_corpus(config.corpus_path, fmt=config.corpus_format)
    templates = load_templates(config.templates_path)
    id_by_title = {normalize_title(r.title): r.id for r in kg.recipes.values()}
    jobs = JobStore()
    data_dir = Path(config.data_dir).resolve()
    data_dir.mkdir(parents=True, exist_ok=True)

    app = FastAPI(title="recigraph service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(QuestionParseError)
    def handle_parse_error(request, exc: QuestionParseError):
        return _error(422, "parse_error", str(exc), exc.span)

    @app.exception_handler(RequestValidationError)
    def handle_validation_error(request, exc: RequestValidationError):
        return _error(422, "validation_error", str(exc))

    def resolve_backend(kind: str | None, endpoint: str | None) -> BackendConfig:
        base = config.backend
        if kind is None and endpoint is None:
            return base
        new_kind = kind or base.kind
        new_endpoint = endpoint or base.endpoint
        return BackendConfig(
            kind=new_kind,
            endpoint=new_endpoint,
            temperature=base.temperature,
            num_beams=base.num_beams,
            max_new_tokens=base.max_new_tokens,
            parallelism=base.parallelism,
            want_logprobs=base.want_logprobs,
            auth_token=base.auth_token,
            timeout_s=base.timeout_s,
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "recipes": len(kg.recipes), "tags": len(kg.tags())}

    @app.get("/tags")
    def tags():
        return {"tags": kg.tags()}

    @app.get("/ingredients")
    def ingredients(tag: str | None = None):
        resolved = canonical_tag(tag) if tag else None
        return {
            "tag": resolved,
            "ingredients": kg.ingredient_vocabulary(tag=resolved),
        }

    @app.get("/recipes/{recipe_id}")
    def recipe_detail(recipe_id: str):
        recipe = kg.recipes.get(recipe_id)
        if recipe is None:
            return _error(404, "not_found", f"no recipe with id {recipe_id!r}")
        return {
            "id": recipe.id,
            "title": recipe.title,
            "ingredients": list(recipe.ingredients),
            "instructions": list(recipe.instructions),
            "nutrition": dict(recipe.nutrition),
            "tags": list(recipe.tags),
        }

    @app.post("/query")
    def run_query(body: QueryRequest):
        if (body.question is None) == (body.query is None):
            return _error(
                422, "bad_request", "provide exactly one of question or query"
            )
        try:
            backend_cfg = resolve_backend(body.backend, body.endpoint)
        except ValueError as exc:
            return _error(422, "bad_backend", str(exc))
        budget = body.chunk_budget or config.chunk_budget
        if budget < 1:
            return _error(422, "bad_request", "chunk_budget must be >= 1")
        known = kg.tags()
        if body.query is not None:
            try:
                structured = ConstraintQuery.from_json_dict(body.query)
            except (ConstraintError, KeyError, TypeError, ValueError) as exc:
                return _error(422, "invalid_query", str(exc))
            question_text = render_question(structured, templates[0])
            if structured.tag not in known:
                known = known + [structured.tag]
        else:
            question_text = body.question
        backend = make_backend(kg, backend_cfg)
        result = recommend(
            kg,
            question_text,
            backend,
            backend_cfg,
            chunk_budget=budget,
            templates=templates,
            known_tags=known,
        )
        return {
            "titles": list(result.final_titles),
            "results": [
                {"id": id_by_title.get(normalize_title(t)), "title": t}
                for t in result.final_titles
            ],
            "query": result.query.to_json_dict(),
            "per_chunk": [
                {
                    "index": c.index,
                    "parsed": list(c.parsed),
                    "hallucinated": list(c.hallucinated),
                    "failed": c.failed,
                }
                for c in result.per_chunk
            ],
            "failed_chunks": list(result.failed_chunks),
        }

    @app.post("/benchmark/generate")
    def benchmark_generate(body: BenchmarkRequest):
        try:
            gen_cfg = GenConfig.from_json_dict(body.config)
        except (GenerationError, ValueError, TypeError) as exc:
            return _error(422, "invalid_config", str(exc))
        digest = _digest("benchgen", gen_cfg.to_json_dict())

        def run():
            out_dir = data_dir / "benchmarks" / digest
            splits = generate_dataset(kg, gen_cfg, templates)
            write_kgqa_dataset(splits, out_dir)
            return out_dir

        record = jobs.submit("benchgen", digest, run)
        return record.to_json_dict()

    @app.post("/evaluate")
    def evaluate(body: EvaluateRequest):
        dataset_path = Path(body.dataset)
        if not dataset_path.exists() and not dataset_path.is_absolute():
            dataset_path = data_dir / dataset_path
        if not dataset_path.exists():
            return _error(422, "not_found", f"dataset not found: {dataset_path}")
        dataset_path = dataset_path.resolve()
        try:
            backend_cfg = resolve_backend(body.backend, body.endpoint)
        except ValueError as exc:
            return _error(422, "bad_backend", str(exc))
        budget = body.chunk_budget or config.chunk_budget
        digest = _digest(
            "eval",
            {
                "dataset": str(dataset_path),
                "backend": backend_cfg.to_json_dict(),
                "chunk_budget": budget,
            },
        )

        def run():
            items = read_kgqa_items(dataset_path)
            backend = make_backend(kg, backend_cfg)
            result = evaluate_retrieval(
                kg,
                items,
                backend,
                cfg=backend_cfg,
                templates=templates,
                chunk_budget=budget,
            )
            out_dir = data_dir / "reports" / digest
            write_eval_report(
                result,
                out_dir,
                title="retrieval evaluation",
                metadata={
                    "dataset": str(dataset_path),
                    "backend": backend_cfg.to_json_dict(),
                    "chunk_budget": budget,
                },
            )
            return out_dir

        record = jobs.submit("eval", digest, run)
        return record.to_json_dict()

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        record = jobs.get(job_id)
        if record is None:
            return _error(404, "not_found", f"no job with id {job_id!r}")
        return record.to_json_dict()

    return app


def serve(config: ServiceConfig) -> None:
    """Run the service under uvicorn (blocking)."""
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
