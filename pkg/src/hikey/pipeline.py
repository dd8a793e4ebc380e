"""Offline indexing pipeline and engine loading."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import EngineConfig
from .embedder import make_embedder
from .errors import EmptyCorpus, MissingIndex
from .hierarchy import DocCard, SecCard, build_document, parse_blocks_jsonl
from .retrieval import Engine
from .sparse import SparseIndex
from .storage import (
    FIELD_DOC_BODY,
    FIELD_DOC_HIERARCHY,
    FIELD_UNIT_CONTEXT,
    FIELD_UNIT_TEXT,
    IndexData,
    load_index,
    write_index,
)

INDEX_VERSION = 1


def build_index_dir(corpus_path: str | Path, out_dir: str | Path,
                    config: EngineConfig) -> dict:
    """Read a layout-block JSONL corpus and write a complete index directory.

    Everything is built in memory first so a failing input leaves no partial
    index behind; output is sorted by id, making the result independent of
    corpus file ordering.
    """
    corpus_path = Path(corpus_path)
    with corpus_path.open(encoding="utf-8") as fh:
        per_doc = parse_blocks_jsonl(fh, source=str(corpus_path))
    if not per_doc:
        raise EmptyCorpus(f"no layout blocks found in {corpus_path}")

    doc_ids = sorted(per_doc)

    def ingest(doc_id: str):
        return build_document(
            per_doc[doc_id],
            doc_card_max_tokens=config.doc_card_max_tokens,
            with_body=True,
        )

    # per-document ingestion is independent; parallelize, keep output ordered
    with ThreadPoolExecutor() as pool:
        built = list(pool.map(ingest, doc_ids))

    doc_cards: list[DocCard] = []
    sec_cards: list[SecCard] = []
    for _tree, card, cards in built:
        doc_cards.append(card)
        sec_cards.extend(cards)

    fields = {
        FIELD_DOC_HIERARCHY: SparseIndex(FIELD_DOC_HIERARCHY),
        FIELD_DOC_BODY: SparseIndex(FIELD_DOC_BODY),
        FIELD_UNIT_TEXT: SparseIndex(FIELD_UNIT_TEXT),
        FIELD_UNIT_CONTEXT: SparseIndex(FIELD_UNIT_CONTEXT),
    }
    for card in doc_cards:
        fields[FIELD_DOC_HIERARCHY].add(card.doc_id, card.hierarchy_field)
        fields[FIELD_DOC_BODY].add(card.doc_id, card.body_field)
    for sec in sec_cards:
        for unit in sec.units:
            fields[FIELD_UNIT_TEXT].add(unit.unit_id, unit.content)
            if unit.unit_type != "Text" and unit.upper_context is not None:
                fields[FIELD_UNIT_CONTEXT].add(unit.unit_id, unit.upper_context)

    manifest = {
        "version": INDEX_VERSION,
        "n_docs": len(doc_cards),
        "n_sections": len(sec_cards),
        "n_units": sum(len(s.units) for s in sec_cards),
        "k1": fields[FIELD_DOC_HIERARCHY].k1,
        "b": fields[FIELD_DOC_HIERARCHY].b,
        "fields": sorted(fields),
        "embedder": config.embedder,
        "doc_card_max_tokens": config.doc_card_max_tokens,
        "config_hash": config.config_hash(),
    }
    write_index(out_dir, manifest, doc_cards, sec_cards, fields)
    return manifest


def pack_query(engine: Engine, query: str, config: EngineConfig):
    """Retrieve, then assemble the budgeted evidence subgraph for the query.

    Returns (retrieval result, subgraph)."""
    from .packing import pack  # local import keeps module layering acyclic

    result = engine.retrieve(query, config)
    anchors = [(sec.anchor.unit, sec.final_score) for sec in result.sections]
    involved = sorted({unit.doc_id for unit, _ in anchors})
    doc_units = {doc_id: engine.units_of_doc(doc_id) for doc_id in involved}
    doc_titles = {doc_id: engine.index.doc_cards[doc_id].title for doc_id in involved}
    graph = pack(
        anchors=anchors,
        doc_units=doc_units,
        doc_titles=doc_titles,
        sim=engine.unit_sim,
        budget=config.budget,
        m_associates=config.m_associates,
        image_token_cost=config.image_token_cost,
        image_cap=config.image_cap,
    )
    return result, graph


_ENGINE_CACHE: dict[tuple[str, str], Engine] = {}


def load_engine(index_dir: str | Path, embedder_spec: str | None = None,
                use_cache: bool = True) -> Engine:
    """Load (or reuse) an engine for an index directory.

    The embedder defaults to the one recorded in the index manifest. Cached
    engines share their immutable index and embedding caches across queries.
    """
    root = Path(index_dir)
    if not (root / "manifest.json").exists():
        raise MissingIndex(f"no index at {root}")
    resolved = str(root.resolve())
    probe = embedder_spec or ""
    key = (resolved, probe)
    if use_cache and key in _ENGINE_CACHE:
        return _ENGINE_CACHE[key]
    index: IndexData = load_index(root)
    spec = embedder_spec or index.manifest.get("embedder", "hash:256")
    engine = Engine(index, make_embedder(spec))
    if use_cache:
        _ENGINE_CACHE[key] = engine
    return engine
