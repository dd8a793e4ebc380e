"""Two-stage coarse-to-fine retrieval.

Stage 1 routes the query to candidate documents with a hybrid lexical/dense
score over routing cards. Stage 2 scores every evidence unit inside the
candidates with a type-specific score, reduces each section by MaxSim, and
fuses section and document scores for the final ranking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import EngineConfig
from .embedder import cosine
from .errors import EmptyCorpus, ScorelessUnit
from .hierarchy import EvidenceUnit, SecCard
from .sparse import minmax_normalize, tokenize
from .storage import (
    FIELD_DOC_BODY,
    FIELD_DOC_HIERARCHY,
    FIELD_UNIT_CONTEXT,
    FIELD_UNIT_TEXT,
    IndexData,
)


def ranked_list(scores: dict[str, float]) -> list[tuple[str, float]]:
    """Descending score, ties broken by ascending id."""
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


@dataclass
class ScoredUnit:
    unit: EvidenceUnit
    score: float
    lex_norm: float
    dense_norm: float
    s_hybrid: float
    s_vis: float | None = None


@dataclass
class ScoredSection:
    sec_id: str
    doc_id: str
    final_score: float
    sec_score: float
    doc_score: float
    anchor: ScoredUnit


@dataclass
class RetrievalResult:
    query: str
    documents: list[tuple[str, float]]
    candidates: list[str]
    sections: list[ScoredSection]
    doc_components: dict[str, dict] = field(default_factory=dict)


class Engine:
    """Query-side engine over an immutable loaded index.

    Pure per query: all mutable state is memoized caching of embeddings,
    so concurrent queries observe identical results.
    """

    def __init__(self, index: IndexData, embedder):
        self.index = index
        self.embedder = embedder
        self._doc_matrix: dict[str, tuple[list[str], np.ndarray]] = {}
        self._text_vec_cache: dict[str, np.ndarray] = {}
        self._ref_vec_cache: dict[str, np.ndarray] = {}
        self._units_by_doc: dict[str, list[tuple[SecCard, EvidenceUnit]]] = {}
        self._sec_ids_by_doc: dict[str, list[str]] = {}
        for sec_id in sorted(index.sec_cards):
            card = index.sec_cards[sec_id]
            self._units_by_doc.setdefault(card.doc_id, []).extend(
                (card, u) for u in card.units
            )
            self._sec_ids_by_doc.setdefault(card.doc_id, []).append(sec_id)
        self._units_by_id = {
            u.unit_id: u for pairs in self._units_by_doc.values() for _, u in pairs
        }

    # -- embedding caches -------------------------------------------------

    def _text_vec(self, text: str) -> np.ndarray:
        vec = self._text_vec_cache.get(text)
        if vec is None:
            vec = self.embedder.embed_text(text)
            self._text_vec_cache[text] = vec
        return vec

    def _ref_vec(self, crop_ref: str) -> np.ndarray:
        vec = self._ref_vec_cache.get(crop_ref)
        if vec is None:
            vec = self.embedder.embed_ref(crop_ref)
            self._ref_vec_cache[crop_ref] = vec
        return vec

    def _stage1_text(self, doc_id: str, mode: str) -> str:
        card = self.index.doc_cards[doc_id]
        if mode == "hierarchy":
            return card.hierarchy_field
        if mode == "body":
            return card.body_field
        return f"{card.hierarchy_field} {card.body_field}".strip()

    def _doc_dense_matrix(self, mode: str) -> tuple[list[str], np.ndarray]:
        cached = self._doc_matrix.get(mode)
        if cached is None:
            ids = self.index.doc_ids
            mat = np.stack([self._text_vec(self._stage1_text(d, mode)) for d in ids])
            norms = np.linalg.norm(mat, axis=1, keepdims=True)
            norms[norms == 0.0] = 1.0
            cached = (ids, mat / norms)
            self._doc_matrix[mode] = cached
        return cached

    # -- stage 1 ----------------------------------------------------------

    def _stage1_lex_raw(self, query_terms: list[str], mode: str) -> dict[str, float]:
        scores = {d: 0.0 for d in self.index.doc_ids}
        fields = []
        if mode in ("hierarchy", "hierarchy+body"):
            fields.append(FIELD_DOC_HIERARCHY)
        if mode in ("body", "hierarchy+body"):
            fields.append(FIELD_DOC_BODY)
        for field_id in fields:
            sparse = self.index.fields.get(field_id)
            if sparse is None:
                continue
            for doc_id, s in sparse.score_all(query_terms).items():
                scores[doc_id] += s
        return scores

    def route_documents(self, query: str, config: EngineConfig) -> tuple[list[tuple[str, float]], dict[str, dict]]:
        """Stage-1 hybrid ranking over all routing cards."""
        if not self.index.doc_cards:
            raise EmptyCorpus("index contains no documents")
        query_terms = tokenize(query)
        lex_raw = self._stage1_lex_raw(query_terms, config.stage1_fields)
        ids, mat = self._doc_dense_matrix(config.stage1_fields)
        q_vec = self._text_vec(query)
        q_norm = float(np.linalg.norm(q_vec))
        dense = mat @ (q_vec / q_norm) if q_norm > 0 else np.zeros(len(ids))
        dense_raw = {d: float(s) for d, s in zip(ids, dense)}
        lex_mm = minmax_normalize(lex_raw)
        dense_mm = minmax_normalize(dense_raw)
        alpha = config.alpha
        fused = {d: alpha * lex_mm[d] + (1.0 - alpha) * dense_mm[d] for d in lex_raw}
        components = {
            d: {
                "lex_raw": lex_raw[d], "lex_norm": lex_mm[d],
                "dense_raw": dense_raw[d], "dense_norm": dense_mm[d],
                "score": fused[d],
            }
            for d in fused
        }
        return ranked_list(fused), components

    # -- stage 2 ----------------------------------------------------------

    def _hybrid_text(self, unit: EvidenceUnit) -> str:
        if unit.unit_type == "Text":
            return unit.content
        return unit.upper_context or ""

    def _unit_lex_raw(self, unit: EvidenceUnit, query_terms: list[str]) -> float:
        field_id = FIELD_UNIT_TEXT if unit.unit_type == "Text" else FIELD_UNIT_CONTEXT
        sparse = self.index.fields.get(field_id)
        if sparse is None or unit.unit_id not in sparse.doc_lengths:
            return 0.0
        return sparse.score(query_terms, unit.unit_id)

    def score_units(self, query: str, doc_ids: list[str], config: EngineConfig) -> dict[str, ScoredUnit]:
        """Type-specific unit scores over the scope of the given documents.

        Min-max normalization for the lexical and dense hybrid components is
        taken over the full unit pool of the scope.
        """
        query_terms = tokenize(query)
        q_vec = self._text_vec(query)
        scoped: list[EvidenceUnit] = []
        for doc_id in sorted(doc_ids):
            scoped.extend(u for _, u in self._units_by_doc.get(doc_id, []))
        if not scoped:
            return {}

        lex_raw = {u.unit_id: self._unit_lex_raw(u, query_terms) for u in scoped}
        dense_raw = {
            u.unit_id: cosine(q_vec, self._text_vec(self._hybrid_text(u))) for u in scoped
        }
        lex_mm = minmax_normalize(lex_raw)
        dense_mm = minmax_normalize(dense_raw)

        fusion = config.fusion_mode
        beta = 1.0 if fusion == "bm25_only" else config.beta
        gamma = config.gamma if fusion == "full_fusion" else 0.0

        out: dict[str, ScoredUnit] = {}
        for u in scoped:
            s_hybrid = beta * lex_mm[u.unit_id] + (1.0 - beta) * dense_mm[u.unit_id]
            s_vis = None
            if u.unit_type == "Text":
                score = s_hybrid
            else:
                if u.crop_ref is None and u.upper_context is None:
                    raise ScorelessUnit(
                        f"unit {u.unit_id!r} has neither a crop reference nor upper context"
                    )
                if gamma > 0.0 and u.crop_ref is not None:
                    s_vis = cosine(q_vec, self._ref_vec(u.crop_ref))
                    score = gamma * s_vis + (1.0 - gamma) * s_hybrid
                else:
                    score = s_hybrid
            out[u.unit_id] = ScoredUnit(
                unit=u, score=score, lex_norm=lex_mm[u.unit_id],
                dense_norm=dense_mm[u.unit_id], s_hybrid=s_hybrid, s_vis=s_vis,
            )
        return out

    @staticmethod
    def section_score(card: SecCard, unit_scores: dict[str, ScoredUnit]) -> tuple[float, ScoredUnit]:
        """MaxSim over the card's units; ties broken by ascending unit_id."""
        best = min(
            (unit_scores[u.unit_id] for u in card.units),
            key=lambda su: (-su.score, su.unit.unit_id),
        )
        return best.score, best

    def retrieve(self, query: str, config: EngineConfig) -> RetrievalResult:
        documents, doc_components = self.route_documents(query, config)
        mode = config.routing_mode
        if mode == "doc_only":
            return RetrievalResult(
                query=query, documents=documents,
                candidates=[d for d, _ in documents[: config.k_doc]],
                sections=[], doc_components=doc_components,
            )
        if mode == "sec_only":
            candidates = [d for d, _ in documents]
        else:
            candidates = [d for d, _ in documents[: config.k_doc]]

        doc_score = dict(documents)
        unit_scores = self.score_units(query, candidates, config)
        lam = config.lam
        scoped_sec_ids = sorted(
            sec_id for doc_id in candidates
            for sec_id in self._sec_ids_by_doc.get(doc_id, ())
        )
        sections: list[ScoredSection] = []
        for sec_id in scoped_sec_ids:
            card = self.index.sec_cards[sec_id]
            s_sec, anchor = self.section_score(card, unit_scores)
            s_doc = doc_score[card.doc_id]
            sections.append(
                ScoredSection(
                    sec_id=sec_id, doc_id=card.doc_id,
                    final_score=lam * s_doc + (1.0 - lam) * s_sec,
                    sec_score=s_sec, doc_score=s_doc, anchor=anchor,
                )
            )
        sections.sort(key=lambda s: (-s.final_score, s.sec_id))
        return RetrievalResult(
            query=query, documents=documents, candidates=candidates,
            sections=sections[: config.k_sec], doc_components=doc_components,
        )

    def units_of_doc(self, doc_id: str) -> list[EvidenceUnit]:
        return [u for _, u in self._units_by_doc.get(doc_id, [])]

    def unit_vector(self, unit: EvidenceUnit) -> np.ndarray:
        """Dense representation used for associate mining: visual embedding
        for crops, text embedding otherwise."""
        if unit.unit_type != "Text" and unit.crop_ref is not None:
            return self._ref_vec(unit.crop_ref)
        return self._text_vec(unit.content)

    def unit_sim(self, a: EvidenceUnit, b: EvidenceUnit) -> float:
        return cosine(self.unit_vector(a), self.unit_vector(b))

    def unit_by_id(self, unit_id: str) -> EvidenceUnit | None:
        return self._units_by_id.get(unit_id)

    def document_ranking(self, result: RetrievalResult) -> list[str]:
        """Document order for evaluation: first appearance in the section
        ranking, then remaining documents in routing order."""
        seen: list[str] = []
        for sec in result.sections:
            if sec.doc_id not in seen:
                seen.append(sec.doc_id)
        for doc_id, _ in result.documents:
            if doc_id not in seen:
                seen.append(doc_id)
        return seen
