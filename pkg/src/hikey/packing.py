"""Budget-gated evidence subgraph assembly and reader serialization.

Greedy three-phase loop over ranked anchors: seat the anchor with its
ancestry chain, then structural siblings from the same section, then
visual semantic associates mined from the same document. Every admission
is gated by the remaining token budget; the final serialized context is
byte-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .errors import InvalidBudget
from .hierarchy import EvidenceUnit, SectionPath

ROLE_ANCHOR = "Anchor"
ROLE_SIBLING = "Sibling"
ROLE_ASSOCIATE = "SemanticAssociate"

TokenCounter = Callable[[str], int]


def whitespace_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class PackedEntry:
    unit: EvidenceUnit
    role: str
    ancestry: SectionPath
    doc_title: str
    source_anchor_id: str | None = None
    includes_doc_meta: bool = False
    includes_ancestry: bool = False
    include_crop: bool = False


@dataclass
class EvidenceSubgraph:
    members: list[PackedEntry] = field(default_factory=list)
    total_tokens: int = 0
    budget: int = 0

    @property
    def doc_ids(self) -> list[str]:
        seen = []
        for e in self.members:
            if e.unit.doc_id not in seen:
                seen.append(e.unit.doc_id)
        return seen


def doc_meta_line(doc_id: str, title: str) -> str:
    return f"[DOC_META] ID: {doc_id} | Title: {title}"

def unit_header_line(unit: EvidenceUnit) -> str:
    return f"[UNIT id={unit.unit_id} | Type={unit.unit_type}]"

def path_line(ancestry: SectionPath) -> str:
    return "Path: " + " > ".join(ancestry)

def content_line(unit: EvidenceUnit) -> str:
    label = "Caption" if unit.unit_type == "Image" else "Content"
    return f"{label}: {unit.content}"

def crop_line(unit: EvidenceUnit) -> str:
    return f"Visual: <crop:{unit.crop_ref}>"


def count_tokens(entry: PackedEntry, image_token_cost: int = 256,
                 counter: TokenCounter = whitespace_tokens) -> int:
    """Token cost of one entry as charged during packing.

    Ancestry and document-meta lines are charged only on the entry that
    first introduced them; the crop placeholder carries the fixed image
    cost. Pure: re-counting the same entry always yields the same value.
    """
    total = 0
    if entry.includes_doc_meta:
        total += counter(doc_meta_line(entry.unit.doc_id, entry.doc_title))
    total += counter(unit_header_line(entry.unit))
    if entry.includes_ancestry:
        total += counter(path_line(entry.ancestry))
    total += counter(content_line(entry.unit))
    if entry.include_crop:
        total += counter(crop_line(entry.unit)) + image_token_cost
    return total


def semantic_associates(anchor: EvidenceUnit, doc_units: list[EvidenceUnit],
                        m: int, sim: Callable[[EvidenceUnit, EvidenceUnit], float],
                        ) -> list[EvidenceUnit]:
    """Top-m same-document units by similarity to the anchor (anchor excluded),
    descending similarity with ties broken by ascending unit_id."""
    if m <= 0:
        return []
    others = [u for u in doc_units if u.unit_id != anchor.unit_id]
    scored = sorted(others, key=lambda u: (-sim(anchor, u), u.unit_id))
    return scored[:m]


def pack(anchors: list[tuple[EvidenceUnit, float]],
         doc_units: dict[str, list[EvidenceUnit]],
         doc_titles: dict[str, str],
         sim: Callable[[EvidenceUnit, EvidenceUnit], float],
         budget: int,
         m_associates: int = 5,
         image_token_cost: int = 256,
         image_cap: int = 8,
         counter: TokenCounter = whitespace_tokens) -> EvidenceSubgraph:
    """Assemble the evidence subgraph under the token budget.

    Anchors are visited in retrieval-rank order. An anchor that does not fit
    is skipped entirely (its sibling/associate phases never run). A unit
    already packed is never re-added. Visual units beyond the image cap are
    packed without their crop (no image cost charged).
    """
    if budget <= 0:
        raise InvalidBudget(f"token budget must be positive, got {budget}")

    graph = EvidenceSubgraph(budget=budget)
    packed_ids: set[str] = set()
    charged_chains: set[tuple[str, SectionPath]] = set()
    docs_seen: set[str] = set()
    images_used = 0

    def build_entry(unit: EvidenceUnit, role: str, ancestry: SectionPath,
                    source: str | None, inherit_chain: bool) -> PackedEntry:
        chain_key = (unit.doc_id, ancestry)
        return PackedEntry(
            unit=unit,
            role=role,
            ancestry=ancestry,
            doc_title=doc_titles.get(unit.doc_id, ""),
            source_anchor_id=source,
            includes_doc_meta=unit.doc_id not in docs_seen,
            includes_ancestry=(not inherit_chain) and chain_key not in charged_chains,
            include_crop=(
                unit.unit_type in ("Table", "Image")
                and unit.crop_ref is not None
                and images_used < image_cap
            ),
        )

    def admit(entry: PackedEntry) -> bool:
        nonlocal images_used
        delta = count_tokens(entry, image_token_cost=image_token_cost, counter=counter)
        if graph.total_tokens + delta > budget:
            return False
        graph.members.append(entry)
        graph.total_tokens += delta
        packed_ids.add(entry.unit.unit_id)
        docs_seen.add(entry.unit.doc_id)
        charged_chains.add((entry.unit.doc_id, entry.ancestry))
        if entry.include_crop:
            images_used += 1
        return True

    for anchor, _score in anchors:
        if anchor.unit_id in packed_ids:
            continue
        entry = build_entry(anchor, ROLE_ANCHOR, anchor.section_path, None, inherit_chain=False)
        if not admit(entry):
            continue

        # Phase 2: structural siblings share the anchor's section
        siblings = [
            u for u in doc_units.get(anchor.doc_id, [])
            if u.section_path == anchor.section_path and u.unit_id != anchor.unit_id
        ]
        for sib in siblings:
            if sib.unit_id in packed_ids:
                continue
            admit(build_entry(sib, ROLE_SIBLING, anchor.section_path,
                              anchor.unit_id, inherit_chain=True))

        # Phase 3: cross-section visual associates with their own ancestry
        candidates = semantic_associates(
            anchor, doc_units.get(anchor.doc_id, []), m_associates, sim
        )
        for cand in candidates:
            if cand.unit_type == "Text" or cand.unit_id in packed_ids:
                continue
            admit(build_entry(cand, ROLE_ASSOCIATE, cand.section_path,
                              anchor.unit_id, inherit_chain=False))

    return graph


def serialize(graph: EvidenceSubgraph) -> str:
    """Reader context string in member order; empty subgraph serializes empty."""
    lines: list[str] = []
    docs_emitted: set[str] = set()
    for entry in graph.members:
        if entry.unit.doc_id not in docs_emitted:
            lines.append(doc_meta_line(entry.unit.doc_id, entry.doc_title))
            docs_emitted.add(entry.unit.doc_id)
        lines.append(unit_header_line(entry.unit))
        lines.append(path_line(entry.ancestry))
        lines.append(content_line(entry.unit))
        if entry.include_crop:
            lines.append(crop_line(entry.unit))
        lines.append("")
    return "\n".join(lines).rstrip("\n") + ("\n" if lines else "")


QA_PROMPT_TEMPLATE = """[System Instruction]
You are an AI assistant that answers questions by analyzing the provided documents.
Write an accurate answer to [Question] using only the [Context] given below.
- Do not answer using information that is not present in the context.
- When referring to tables or figures, explicitly mention their IDs (e.g., Figure 3).
- If you cannot be confident, output "I do not have enough information to answer."

[Question]
{question}

[Context]
{context}

[Answer]
"""


def render_prompt(question: str, context: str) -> str:
    return QA_PROMPT_TEMPLATE.format(question=question, context=context)
