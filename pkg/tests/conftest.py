"""Shared fixtures: a worked moon-landing document, synthetic corpora,
and random-corpus generators."""

from __future__ import annotations

import json
import random

import pytest

from hikey.hierarchy import LayoutBlock, build_document


def block(doc_id, block_id, btype, order, text="", depth=None, crop=None, page=1):
    return LayoutBlock(
        doc_id=doc_id, block_id=block_id, page=page, block_type=btype,
        reading_order=order, text=text, depth_hint=depth, crop_ref=crop,
    )


APOLLO_DOC_ID = "apollo11"

C1_TEXT = "The prime crew consisted of Neil Armstrong Michael Collins and Buzz Aldrin"
C2_TABLE_TEXT = "Position Astronaut Commander Neil Armstrong"
C2_CAPTION = "Crew assignments for the mission"
C3_CAPTION = "Official crew portrait"
LANDING_PARA = "The lunar module Eagle landed in the Sea of Tranquility"
LANDING_TABLE_TEXT = "Event Time Landing 20:17 UTC"
LANDING_CAPTION = "Timeline of landing events"


def apollo_block_list() -> list[LayoutBlock]:
    d = APOLLO_DOC_ID
    return [
        block(d, "b01", "Title", 1, "Apollo 11"),
        block(d, "b02", "SectionHeader", 2, "3 Mission personnel", depth=1),
        block(d, "b03", "SectionHeader", 3, "3.1 Prime crew", depth=2),
        block(d, "b04", "Paragraph", 4, C1_TEXT),
        block(d, "b05", "Table", 5, C2_TABLE_TEXT, crop="crops/apollo/crew_table.png"),
        block(d, "b06", "Caption", 6, C2_CAPTION),
        block(d, "b07", "Figure", 7, "", crop="crops/apollo/portrait.png"),
        block(d, "b08", "Caption", 8, C3_CAPTION),
        block(d, "b09", "SectionHeader", 9, "5 Mission events", depth=1),
        block(d, "b10", "SectionHeader", 10, "5.1 Landing", depth=2),
        block(d, "b11", "Paragraph", 11, LANDING_PARA),
        block(d, "b12", "Table", 12, LANDING_TABLE_TEXT, crop="crops/apollo/landing_table.png"),
        block(d, "b13", "Caption", 13, LANDING_CAPTION),
    ]


@pytest.fixture
def apollo_blocks():
    return apollo_block_list()


@pytest.fixture
def apollo_doc(apollo_blocks):
    """(tree, doc_card, sec_cards) for the worked document."""
    return build_document(apollo_blocks, with_body=True)


WORDS = [
    "lunar", "orbit", "engine", "crew", "module", "launch", "budget", "radar",
    "fuel", "antenna", "descent", "thrust", "camera", "sample", "rock", "dust",
    "panel", "signal", "stage", "valve", "tank", "pressure", "window", "hatch",
]


def random_doc_blocks(doc_id: str, rng: random.Random, n_sections=3,
                      units_per_section=3) -> list[LayoutBlock]:
    """A plausible random document: title, depth-1/2 headers, mixed leaves."""
    blocks = [block(doc_id, f"{doc_id}-t", "Title", 1, f"Report {doc_id}")]
    order = 2
    for s in range(n_sections):
        depth = rng.choice([1, 2]) if s else 1
        blocks.append(block(doc_id, f"{doc_id}-h{s}", "SectionHeader", order,
                            f"{s + 1} {rng.choice(WORDS)} {rng.choice(WORDS)}", depth=depth))
        order += 1
        for u in range(units_per_section):
            bid = f"{doc_id}-s{s}u{u}"
            kind = rng.choice(["Paragraph", "Paragraph", "Table", "Figure"])
            text = " ".join(rng.choice(WORDS) for _ in range(rng.randint(3, 9)))
            crop = f"crops/{doc_id}/{bid}.png" if kind in ("Table", "Figure") else None
            blocks.append(block(doc_id, bid, kind, order, text, crop=crop))
            order += 1
            if kind in ("Table", "Figure") and rng.random() < 0.4:
                blocks.append(block(doc_id, f"{bid}-cap", "Caption", order,
                                    f"caption {rng.choice(WORDS)}"))
                order += 1
    return blocks


def random_corpus(n_docs: int, seed: int) -> dict[str, list[LayoutBlock]]:
    rng = random.Random(seed)
    return {
        f"doc{n:03d}": random_doc_blocks(f"doc{n:03d}", rng,
                                         n_sections=rng.randint(2, 4),
                                         units_per_section=rng.randint(2, 4))
        for n in range(n_docs)
    }


def write_corpus_jsonl(path, per_doc: dict[str, list[LayoutBlock]], order=None):
    """Serialize blocks to JSONL; `order` permutes documents for shuffle tests."""
    doc_ids = order if order is not None else sorted(per_doc)
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id in doc_ids:
            for b in per_doc[doc_id]:
                raw = {
                    "doc_id": b.doc_id, "block_id": b.block_id, "page": b.page,
                    "block_type": b.block_type, "reading_order": b.reading_order,
                    "text": b.text,
                }
                if b.depth_hint is not None:
                    raw["depth_hint"] = b.depth_hint
                if b.crop_ref is not None:
                    raw["crop_ref"] = b.crop_ref
                fh.write(json.dumps(raw) + "\n")
    return path


@pytest.fixture
def small_corpus_path(tmp_path):
    """A 6-document corpus including the worked document, on disk."""
    per_doc = random_corpus(5, seed=7)
    per_doc[APOLLO_DOC_ID] = apollo_block_list()
    return write_corpus_jsonl(tmp_path / "corpus.jsonl", per_doc)


@pytest.fixture
def small_index_dir(tmp_path, small_corpus_path):
    from hikey.config import EngineConfig
    from hikey.pipeline import build_index_dir

    out = tmp_path / "index"
    build_index_dir(small_corpus_path, out, EngineConfig())
    return out


@pytest.fixture
def small_engine(small_index_dir):
    from hikey.pipeline import load_engine

    return load_engine(small_index_dir, use_cache=False)
