"""HTTP service exposing indexing, retrieval, packing, and evaluation.

The CLI is a thin client of this app; all request/response payloads are
pydantic models so the wire format is the one source of truth.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from .config import EngineConfig
from .errors import HikeyError
from .metrics import (
    build_report,
    budgeted_recall,
    format_report_table,
    load_predictions_jsonl,
    load_queries_jsonl,
)
from .packing import count_tokens, render_prompt, serialize
from .pipeline import build_index_dir, load_engine, pack_query

app = FastAPI(title="hikey", version="0.1.0")


@app.exception_handler(HikeyError)
async def hikey_error_handler(_request: Request, exc: HikeyError):
    return JSONResponse(
        status_code=400,
        content={"error": type(exc).__name__, "detail": str(exc)},
    )


class ConfigOverrides(BaseModel):
    """All-optional mirror of EngineConfig; unset fields keep defaults or
    config-file values."""

    model_config = ConfigDict(extra="forbid")

    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    lam: float | None = None
    k_doc: int | None = None
    k_sec: int | None = None
    routing_mode: str | None = None
    fusion_mode: str | None = None
    stage1_fields: str | None = None
    budget: int | None = None
    m_associates: int | None = None
    image_token_cost: int | None = None
    image_cap: int | None = None
    embedder: str | None = None
    doc_card_max_tokens: int | None = None


def _effective_config(config_path: str | None, overrides: ConfigOverrides | None) -> EngineConfig:
    values = overrides.model_dump(exclude_none=True) if overrides else {}
    return EngineConfig.load(config_path, values)


class IndexRequest(BaseModel):
    corpus_path: str
    out_dir: str
    config_path: str | None = None
    overrides: ConfigOverrides | None = None


class IndexResponse(BaseModel):
    manifest: dict
    config: dict
    config_hash: str


@app.post("/index", response_model=IndexResponse)
def index_endpoint(req: IndexRequest) -> IndexResponse:
    config = _effective_config(req.config_path, req.overrides)
    manifest = build_index_dir(req.corpus_path, req.out_dir, config)
    return IndexResponse(
        manifest=manifest, config=config.model_dump(), config_hash=config.config_hash()
    )


class QueryRequest(BaseModel):
    index_dir: str
    query: str
    config_path: str | None = None
    overrides: ConfigOverrides | None = None


class DocHit(BaseModel):
    doc_id: str
    score: float
    components: dict


class UnitScoreOut(BaseModel):
    unit_id: str
    unit_type: str
    score: float
    lex_norm: float
    dense_norm: float
    s_hybrid: float
    s_vis: float | None = None


class SectionHit(BaseModel):
    sec_id: str
    doc_id: str
    final_score: float
    sec_score: float
    doc_score: float
    anchor: UnitScoreOut


class QueryResponse(BaseModel):
    query: str
    config: dict
    config_hash: str
    documents: list[DocHit]
    candidates: list[str]
    sections: list[SectionHit]


def _section_out(sec) -> SectionHit:
    anchor = sec.anchor
    return SectionHit(
        sec_id=sec.sec_id,
        doc_id=sec.doc_id,
        final_score=sec.final_score,
        sec_score=sec.sec_score,
        doc_score=sec.doc_score,
        anchor=UnitScoreOut(
            unit_id=anchor.unit.unit_id,
            unit_type=anchor.unit.unit_type,
            score=anchor.score,
            lex_norm=anchor.lex_norm,
            dense_norm=anchor.dense_norm,
            s_hybrid=anchor.s_hybrid,
            s_vis=anchor.s_vis,
        ),
    )


@app.post("/query", response_model=QueryResponse)
def query_endpoint(req: QueryRequest) -> QueryResponse:
    config = _effective_config(req.config_path, req.overrides)
    engine = load_engine(req.index_dir, embedder_spec=config.embedder)
    result = engine.retrieve(req.query, config)
    return QueryResponse(
        query=req.query,
        config=config.model_dump(),
        config_hash=config.config_hash(),
        documents=[
            DocHit(doc_id=d, score=s, components=result.doc_components[d])
            for d, s in result.documents
        ],
        candidates=result.candidates,
        sections=[_section_out(sec) for sec in result.sections],
    )


class PackRequest(BaseModel):
    index_dir: str
    query: str
    prompt: bool = False
    config_path: str | None = None
    overrides: ConfigOverrides | None = None


class PackedEntryOut(BaseModel):
    unit_id: str
    unit_type: str
    role: str
    ancestry: list[str]
    source_anchor_id: str | None
    tokens: int
    includes_ancestry: bool
    include_crop: bool


class PackResponse(BaseModel):
    query: str
    config: dict
    config_hash: str
    context: str
    prompt: str | None = None
    members: list[PackedEntryOut]
    total_tokens: int
    budget: int


@app.post("/pack", response_model=PackResponse)
def pack_endpoint(req: PackRequest) -> PackResponse:
    config = _effective_config(req.config_path, req.overrides)
    engine = load_engine(req.index_dir, embedder_spec=config.embedder)
    _result, graph = pack_query(engine, req.query, config)
    context = serialize(graph)
    return PackResponse(
        query=req.query,
        config=config.model_dump(),
        config_hash=config.config_hash(),
        context=context,
        prompt=render_prompt(req.query, context) if req.prompt else None,
        members=[
            PackedEntryOut(
                unit_id=e.unit.unit_id,
                unit_type=e.unit.unit_type,
                role=e.role,
                ancestry=list(e.ancestry),
                source_anchor_id=e.source_anchor_id,
                tokens=count_tokens(e, image_token_cost=config.image_token_cost),
                includes_ancestry=e.includes_ancestry,
                include_crop=e.include_crop,
            )
            for e in graph.members
        ],
        total_tokens=graph.total_tokens,
        budget=graph.budget,
    )


class EvalRequest(BaseModel):
    index_dir: str
    queries_path: str
    predictions_path: str | None = None
    include_budgeted: bool = False
    config_path: str | None = None
    overrides: ConfigOverrides | None = None


class EvalResponse(BaseModel):
    config: dict
    config_hash: str
    report: dict
    table: str


@app.post("/eval", response_model=EvalResponse)
def eval_endpoint(req: EvalRequest) -> EvalResponse:
    config = _effective_config(req.config_path, req.overrides)
    engine = load_engine(req.index_dir, embedder_spec=config.embedder)
    with Path(req.queries_path).open(encoding="utf-8") as fh:
        records = load_queries_jsonl(fh, source=req.queries_path)
    predictions = {}
    if req.predictions_path:
        with Path(req.predictions_path).open(encoding="utf-8") as fh:
            predictions = load_predictions_jsonl(fh, source=req.predictions_path)
    for record in records:
        result = engine.retrieve(record.query, config)
        record.retrieved = engine.document_ranking(result)
        record.prediction = predictions.get(record.query_id)
    report = build_report(records)
    if req.include_budgeted:
        packed_docs = {}
        for record in records:
            _res, graph = pack_query(engine, record.query, config)
            packed_docs[record.query_id] = graph.doc_ids
        report["budgeted_recall_at_10"] = budgeted_recall(
            records, 10, lambda r: packed_docs[r.query_id]
        )
        report["budget"] = config.budget
    return EvalResponse(
        config=config.model_dump(),
        config_hash=config.config_hash(),
        report=report,
        table=format_report_table(report),
    )


@app.get("/health")
def health() -> dict:
    return {"status": "ok"}
