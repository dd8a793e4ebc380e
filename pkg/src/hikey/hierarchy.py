"""Document hierarchy reconstruction and index-card generation.

Takes a stream of labeled layout blocks (one document at a time) and builds
a hierarchy tree by heading-depth stacking, then derives section paths,
upper context for visual blocks, and the routing / section cards used by
the retrieval stages.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field

from .errors import DuplicateBlock, EmptyDocument, ParseError, UnknownNode

HEADER_TYPES = {"Title", "SectionHeader"}
CONTENT_TYPES = {"Paragraph", "Table", "Figure", "Caption"}
BLOCK_TYPES = HEADER_TYPES | CONTENT_TYPES

#: block type -> evidence unit type
UNIT_TYPE_FOR_BLOCK = {"Paragraph": "Text", "Table": "Table", "Figure": "Image"}

SYNTHETIC_TITLE = "UNTITLED"
SYNTHETIC_ROOT_ID = "__root__"

SectionPath = tuple[str, ...]


@dataclass(frozen=True)
class LayoutBlock:
    doc_id: str
    block_id: str
    page: int
    block_type: str
    reading_order: int
    text: str = ""
    depth_hint: int | None = None
    crop_ref: str | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "LayoutBlock":
        known = {
            "doc_id", "block_id", "page", "block_type", "reading_order",
            "text", "depth_hint", "crop_ref",
        }
        unknown = set(raw) - known
        if unknown:
            raise ParseError(f"unknown layout block fields: {sorted(unknown)}")
        try:
            block = cls(
                doc_id=str(raw["doc_id"]),
                block_id=str(raw["block_id"]),
                page=int(raw["page"]),
                block_type=str(raw["block_type"]),
                reading_order=int(raw["reading_order"]),
                text=str(raw.get("text", "") or ""),
                depth_hint=(None if raw.get("depth_hint") is None else int(raw["depth_hint"])),
                crop_ref=raw.get("crop_ref"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed layout block: {exc}") from exc
        if block.block_type not in BLOCK_TYPES:
            raise ParseError(f"unknown block_type: {block.block_type!r}")
        if block.page < 1:
            raise ParseError(f"page must be >= 1, got {block.page}")
        return block


@dataclass
class TreeNode:
    block: LayoutBlock | None  # None only for the synthetic root
    node_id: str
    parent_id: str | None = None
    children: list[str] = field(default_factory=list)
    depth: int = 0  # resolved heading depth; content nodes inherit parent depth + 1

    @property
    def block_type(self) -> str:
        return self.block.block_type if self.block is not None else "Title"

    @property
    def text(self) -> str:
        if self.block is None:
            return SYNTHETIC_TITLE
        return self.block.text

    @property
    def is_header(self) -> bool:
        return self.block is None or self.block.block_type in HEADER_TYPES


@dataclass
class DocTree:
    doc_id: str
    nodes: dict[str, TreeNode]
    root_id: str
    #: visual block id -> caption block id (reading-order association)
    caption_for: dict[str, str] = field(default_factory=dict)
    #: visual block id -> upper context text, filled by attach_upper_context
    upper_context: dict[str, str] = field(default_factory=dict)

    def node(self, node_id: str) -> TreeNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"node {node_id!r} not in tree for {self.doc_id!r}") from None

    @property
    def root(self) -> TreeNode:
        return self.nodes[self.root_id]

    @property
    def title(self) -> str:
        return self.root.text or SYNTHETIC_TITLE

    def ancestors(self, node_id: str) -> list[TreeNode]:
        """Chain from root down to (and excluding) the node."""
        chain: list[TreeNode] = []
        cur = self.node(node_id)
        while cur.parent_id is not None:
            cur = self.nodes[cur.parent_id]
            chain.append(cur)
        chain.reverse()
        return chain

    def iter_reading_order(self) -> list[TreeNode]:
        out = [n for n in self.nodes.values() if n.block is not None]
        out.sort(key=lambda n: n.block.reading_order)  # type: ignore[union-attr]
        return out


@dataclass(frozen=True)
class EvidenceUnit:
    unit_id: str
    doc_id: str
    unit_type: str  # Text | Table | Image
    content: str
    section_path: SectionPath
    page: int
    crop_ref: str | None = None
    upper_context: str | None = None

    def to_dict(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "doc_id": self.doc_id,
            "unit_type": self.unit_type,
            "content": self.content,
            "section_path": list(self.section_path),
            "page": self.page,
            "crop_ref": self.crop_ref,
            "upper_context": self.upper_context,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EvidenceUnit":
        return cls(
            unit_id=raw["unit_id"],
            doc_id=raw["doc_id"],
            unit_type=raw["unit_type"],
            content=raw["content"],
            section_path=tuple(raw["section_path"]),
            page=raw["page"],
            crop_ref=raw.get("crop_ref"),
            upper_context=raw.get("upper_context"),
        )


@dataclass(frozen=True)
class DocCard:
    doc_id: str
    title: str
    hierarchy_field: str
    body_field: str = ""

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "title": self.title,
            "hierarchy_field": self.hierarchy_field,
            "body_field": self.body_field,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "DocCard":
        return cls(raw["doc_id"], raw["title"], raw["hierarchy_field"], raw.get("body_field", ""))


@dataclass(frozen=True)
class SecCard:
    sec_id: str
    doc_id: str
    section_path: SectionPath
    units: tuple[EvidenceUnit, ...]

    def to_dict(self) -> dict:
        return {
            "sec_id": self.sec_id,
            "doc_id": self.doc_id,
            "section_path": list(self.section_path),
            "units": [u.to_dict() for u in self.units],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SecCard":
        return cls(
            sec_id=raw["sec_id"],
            doc_id=raw["doc_id"],
            section_path=tuple(raw["section_path"]),
            units=tuple(EvidenceUnit.from_dict(u) for u in raw["units"]),
        )


def build_tree(blocks: list[LayoutBlock]) -> DocTree:
    """Reconstruct the hierarchy tree from an ordered block stream.

    Heading-depth stack nesting: a SectionHeader of depth k becomes the child
    of the nearest open header of depth < k; content blocks attach to the
    most recently opened header; captions attach to the immediately preceding
    Table/Figure's parent and are associated with that visual block.
    """
    if not blocks:
        raise EmptyDocument("cannot build a tree from an empty block list")
    doc_id = blocks[0].doc_id
    for b in blocks:
        if b.doc_id != doc_id:
            raise ParseError(f"mixed doc_ids in one block stream: {doc_id!r} vs {b.doc_id!r}")
    prev_order = None
    for b in blocks:
        if prev_order is not None and b.reading_order <= prev_order:
            raise ParseError(
                f"reading_order not strictly increasing in {doc_id!r} at block {b.block_id!r}"
            )
        prev_order = b.reading_order

    nodes: dict[str, TreeNode] = {}
    caption_for: dict[str, str] = {}

    title_block = next((b for b in blocks if b.block_type == "Title"), None)
    if title_block is not None:
        root_id = title_block.block_id
        nodes[root_id] = TreeNode(block=title_block, node_id=root_id, depth=0)
    else:
        root_id = SYNTHETIC_ROOT_ID
        nodes[root_id] = TreeNode(block=None, node_id=root_id, depth=0)

    # stack of open header nodes, root always at the bottom
    stack: list[TreeNode] = [nodes[root_id]]
    prev_header_depth = 0
    last_visual: TreeNode | None = None

    def attach(child: TreeNode, parent: TreeNode) -> None:
        child.parent_id = parent.node_id
        parent.children.append(child.node_id)

    for b in blocks:
        if b is title_block:
            continue
        if b.block_id in nodes:
            raise DuplicateBlock(f"duplicate block_id {b.block_id!r} in {doc_id!r}")
        if b.block_type == "Title":
            # extra Title blocks are treated as depth-1 headers
            node = TreeNode(block=b, node_id=b.block_id, depth=1)
            while len(stack) > 1 and stack[-1].depth >= 1:
                stack.pop()
            attach(node, stack[-1])
            stack.append(node)
            prev_header_depth = 1
        elif b.block_type == "SectionHeader":
            depth = b.depth_hint if b.depth_hint is not None else max(prev_header_depth, 1)
            node = TreeNode(block=b, node_id=b.block_id, depth=depth)
            while len(stack) > 1 and stack[-1].depth >= depth:
                stack.pop()
            attach(node, stack[-1])
            stack.append(node)
            prev_header_depth = depth
        else:
            node = TreeNode(block=b, node_id=b.block_id)
            if b.block_type == "Caption" and last_visual is not None:
                attach(node, nodes[last_visual.parent_id])
                if last_visual.node_id not in caption_for:
                    caption_for[last_visual.node_id] = b.block_id
            else:
                attach(node, stack[-1])
            node.depth = nodes[node.parent_id].depth + 1
            if b.block_type in ("Table", "Figure"):
                last_visual = node
        nodes[b.block_id] = node

    return DocTree(doc_id=doc_id, nodes=nodes, root_id=root_id, caption_for=caption_for)


def governing_header(tree: DocTree, node_id: str) -> TreeNode:
    """Nearest Title/SectionHeader ancestor; a header node governs itself."""
    node = tree.node(node_id)
    if node.is_header:
        return node
    for ancestor in reversed(tree.ancestors(node_id)):
        if ancestor.is_header:
            return ancestor
    return tree.root


def section_path(tree: DocTree, node_id: str) -> SectionPath:
    """Header texts from the root down to the node's governing header."""
    gov = governing_header(tree, node_id)
    segments = [a.text for a in tree.ancestors(gov.node_id) if a.is_header]
    segments.append(gov.text)
    if not segments[0]:
        segments[0] = SYNTHETIC_TITLE
    return tuple(segments)


def attach_upper_context(tree: DocTree) -> DocTree:
    """Fill upper context for every Table/Figure leaf.

    Preference order: associated caption text, then the nearest preceding
    Paragraph within the same governing-header subtree, then the governing
    header text. Idempotent: recomputes the same mapping every time.
    """
    ordered = tree.iter_reading_order()
    ctx: dict[str, str] = {}
    for i, node in enumerate(ordered):
        if node.block_type not in ("Table", "Figure"):
            continue
        cap_id = tree.caption_for.get(node.node_id)
        if cap_id is not None:
            ctx[node.node_id] = tree.nodes[cap_id].text
            continue
        gov = governing_header(tree, node.node_id)
        found = None
        for prev in reversed(ordered[:i]):
            if prev.block_type == "Paragraph" and governing_header(tree, prev.node_id).node_id == gov.node_id:
                found = prev.text
                break
        ctx[node.node_id] = found if found is not None else gov.text
    tree.upper_context.clear()
    tree.upper_context.update(ctx)
    return tree


def build_doc_card(tree: DocTree, max_tokens: int = 512, with_body: bool = False) -> DocCard:
    """Title plus depth-1/2 headers in reading order, truncated by token count."""
    parts = [tree.title]
    for node in tree.iter_reading_order():
        if node.node_id == tree.root_id:
            continue
        if node.is_header and node.depth <= 2 and node.text:
            parts.append(node.text)
    tokens = " ".join(parts).split()
    hierarchy_field = " ".join(tokens[:max_tokens])
    body_field = ""
    if with_body:
        body_field = " ".join(
            n.text for n in tree.iter_reading_order() if not n.is_header and n.text
        )
    return DocCard(
        doc_id=tree.doc_id,
        title=tree.title,
        hierarchy_field=hierarchy_field,
        body_field=body_field,
    )


def _unit_for(tree: DocTree, node: TreeNode) -> EvidenceUnit:
    unit_type = UNIT_TYPE_FOR_BLOCK[node.block_type]
    content = node.text
    cap_id = tree.caption_for.get(node.node_id)
    if cap_id is not None:
        cap_text = tree.nodes[cap_id].text
        content = f"{content}\n{cap_text}".strip("\n") if cap_text else content
    return EvidenceUnit(
        unit_id=f"{tree.doc_id}::{node.node_id}",
        doc_id=tree.doc_id,
        unit_type=unit_type,
        content=content,
        section_path=section_path(tree, node.node_id),
        page=node.block.page,  # type: ignore[union-attr]
        crop_ref=node.block.crop_ref,  # type: ignore[union-attr]
        upper_context=tree.upper_context.get(node.node_id) if unit_type != "Text" else None,
    )


def build_sec_cards(tree: DocTree) -> list[SecCard]:
    """One card per header owning at least one content leaf.

    Captions fold into their visual unit and are never emitted standalone;
    a caption with no preceding visual block is dropped.
    """
    by_header: dict[str, list[TreeNode]] = defaultdict(list)
    folded = set(tree.caption_for.values())
    for node in tree.iter_reading_order():
        if node.is_header or node.block_type == "Caption":
            continue
        by_header[governing_header(tree, node.node_id).node_id].append(node)
    # captions that fold into a visual sibling are consumed; standalone ones dropped
    del folded

    cards = []
    for header_id, members in by_header.items():
        units = tuple(_unit_for(tree, n) for n in members)
        cards.append(
            SecCard(
                sec_id=f"{tree.doc_id}::{header_id}",
                doc_id=tree.doc_id,
                section_path=section_path(tree, header_id),
                units=units,
            )
        )
    cards.sort(key=lambda c: c.sec_id)
    return cards


def parse_blocks_jsonl(lines, source: str = "<input>") -> dict[str, list[LayoutBlock]]:
    """Parse a JSONL block stream into per-document ordered block lists."""
    per_doc: dict[str, list[LayoutBlock]] = defaultdict(list)
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{source}: invalid JSON: {exc}", line_no=line_no) from exc
        try:
            block = LayoutBlock.from_dict(raw)
        except ParseError as exc:
            raise ParseError(f"{source}: {exc}", line_no=line_no) from exc
        per_doc[block.doc_id].append(block)
    return dict(per_doc)


def build_document(blocks: list[LayoutBlock], doc_card_max_tokens: int = 512,
                   with_body: bool = False) -> tuple[DocTree, DocCard, list[SecCard]]:
    """Full per-document ingestion pipeline."""
    tree = build_tree(blocks)
    attach_upper_context(tree)
    card = build_doc_card(tree, max_tokens=doc_card_max_tokens, with_body=with_body)
    return tree, card, build_sec_cards(tree)
