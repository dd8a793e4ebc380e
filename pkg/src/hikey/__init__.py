"""Hierarchical coarse-to-fine multimodal retrieval engine."""

from .config import EngineConfig
from .hierarchy import (
    DocCard,
    DocTree,
    EvidenceUnit,
    LayoutBlock,
    SecCard,
    attach_upper_context,
    build_doc_card,
    build_sec_cards,
    build_tree,
    governing_header,
    section_path,
)
from .pipeline import build_index_dir, load_engine, pack_query
from .retrieval import Engine

__version__ = "0.1.0"

__all__ = [
    "DocCard", "DocTree", "Engine", "EngineConfig", "EvidenceUnit",
    "LayoutBlock", "SecCard", "attach_upper_context", "build_doc_card",
    "build_index_dir", "build_sec_cards", "build_tree", "governing_header",
    "load_engine", "pack_query", "section_path", "__version__",
]
