"""On-disk index layout.

    index/manifest.json          version, field configs, k1, b, N, config hash
    index/postings.<field>.bin   binary postings, little-endian integers
    index/cards.jsonl            doc cards then sec cards, sorted by id

The binary format stores exact integers so a reload changes no score.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

from .errors import MissingIndex, ParseError
from .hierarchy import DocCard, SecCard
from .sparse import SparseIndex

MAGIC = b"HKPF"
FORMAT_VERSION = 1

FIELD_DOC_HIERARCHY = "DocHierarchy"
FIELD_DOC_BODY = "DocBody"
FIELD_UNIT_TEXT = "UnitText"
FIELD_UNIT_CONTEXT = "UnitContext"
ALL_FIELDS = (FIELD_DOC_HIERARCHY, FIELD_DOC_BODY, FIELD_UNIT_TEXT, FIELD_UNIT_CONTEXT)


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def u32(self) -> int:
        (v,) = struct.unpack_from("<I", self.data, self.pos)
        self.pos += 4
        return v

    def f64(self) -> float:
        (v,) = struct.unpack_from("<d", self.data, self.pos)
        self.pos += 8
        return v

    def string(self) -> str:
        n = self.u32()
        raw = self.data[self.pos:self.pos + n]
        self.pos += n
        return raw.decode("utf-8")


def dump_postings(index: SparseIndex) -> bytes:
    ids = sorted(index.doc_lengths)
    id_pos = {doc_id: i for i, doc_id in enumerate(ids)}
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    out += _pack_str(index.field_id)
    out += struct.pack("<dd", index.k1, index.b)
    out += struct.pack("<I", len(ids))
    for doc_id in ids:
        out += _pack_str(doc_id)
        out += struct.pack("<I", index.doc_lengths[doc_id])
    terms = sorted(index.postings)
    out += struct.pack("<I", len(terms))
    for term in terms:
        plist = index.postings[term]
        out += _pack_str(term)
        out += struct.pack("<I", len(plist))
        for doc_id in sorted(plist, key=id_pos.__getitem__):
            out += struct.pack("<II", id_pos[doc_id], plist[doc_id])
    return bytes(out)


def load_postings(data: bytes) -> SparseIndex:
    if data[:4] != MAGIC:
        raise ParseError("bad postings file magic")
    r = _Reader(data)
    r.pos = 4
    version = r.u32()
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported postings format version {version}")
    field_id = r.string()
    k1 = r.f64()
    b = r.f64()
    n_ids = r.u32()
    ids = []
    doc_lengths = {}
    for _ in range(n_ids):
        doc_id = r.string()
        ids.append(doc_id)
        doc_lengths[doc_id] = r.u32()
    postings: dict[str, dict[str, int]] = {}
    for _ in range(r.u32()):
        term = r.string()
        plist = {}
        for _ in range(r.u32()):
            idx = r.u32()
            plist[ids[idx]] = r.u32()
        postings[term] = plist
    return SparseIndex(field_id=field_id, postings=postings, doc_lengths=doc_lengths, k1=k1, b=b)


@dataclass
class IndexData:
    manifest: dict
    doc_cards: dict[str, DocCard]
    sec_cards: dict[str, SecCard]
    fields: dict[str, SparseIndex]

    @property
    def doc_ids(self) -> list[str]:
        return sorted(self.doc_cards)

    def sec_cards_of(self, doc_id: str) -> list[SecCard]:
        return [c for c in self.sec_cards.values() if c.doc_id == doc_id]


def write_index(out_dir: str | Path, manifest: dict, doc_cards: list[DocCard],
                sec_cards: list[SecCard], fields: dict[str, SparseIndex]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "cards.jsonl").open("w", encoding="utf-8") as fh:
        for card in sorted(doc_cards, key=lambda c: c.doc_id):
            fh.write(json.dumps({"kind": "doc_card", **card.to_dict()}, sort_keys=True) + "\n")
        for card in sorted(sec_cards, key=lambda c: c.sec_id):
            fh.write(json.dumps({"kind": "sec_card", **card.to_dict()}, sort_keys=True) + "\n")
    for field_id, index in fields.items():
        (out / f"postings.{field_id}.bin").write_bytes(dump_postings(index))
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8"
    )


def load_index(index_dir: str | Path) -> IndexData:
    root = Path(index_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise MissingIndex(f"no index manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text("utf-8"))
    doc_cards: dict[str, DocCard] = {}
    sec_cards: dict[str, SecCard] = {}
    with (root / "cards.jsonl").open(encoding="utf-8") as fh:
        for line in fh:
            raw = json.loads(line)
            kind = raw.pop("kind")
            if kind == "doc_card":
                card = DocCard.from_dict(raw)
                doc_cards[card.doc_id] = card
            elif kind == "sec_card":
                sec = SecCard.from_dict(raw)
                sec_cards[sec.sec_id] = sec
            else:
                raise ParseError(f"unknown card kind {kind!r} in cards.jsonl")
    fields = {}
    for field_id in manifest.get("fields", list(ALL_FIELDS)):
        path = root / f"postings.{field_id}.bin"
        if path.exists():
            fields[field_id] = load_postings(path.read_bytes())
    return IndexData(manifest=manifest, doc_cards=doc_cards, sec_cards=sec_cards, fields=fields)
