"""Engine configuration: one validated key/value document.

CLI flags override file values; the effective config and its hash are
echoed into every command output for provenance.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigError

RoutingMode = Literal["doc_only", "sec_only", "doc_then_sec"]
FusionMode = Literal["bm25_only", "plus_text_dense", "full_fusion"]
Stage1Fields = Literal["hierarchy", "body", "hierarchy+body"]


class EngineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # retrieval mixture weights
    alpha: float = Field(default=0.5, ge=0.0, le=1.0)
    beta: float = Field(default=0.5, ge=0.0, le=1.0)
    gamma: float = Field(default=0.5, ge=0.0, le=1.0)
    lam: float = Field(default=0.5, ge=0.0, le=1.0)
    k_doc: int = Field(default=10, ge=1)
    k_sec: int = Field(default=20, ge=1)
    routing_mode: RoutingMode = "doc_then_sec"
    fusion_mode: FusionMode = "full_fusion"
    stage1_fields: Stage1Fields = "hierarchy"

    # packing
    budget: int = Field(default=1024, ge=1)
    m_associates: int = Field(default=5, ge=0)
    image_token_cost: int = Field(default=256, ge=1)
    image_cap: int = Field(default=8, ge=0)

    # indexing / embeddings
    embedder: str = "hash:256"
    doc_card_max_tokens: int = Field(default=512, ge=1)

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict | None = None) -> "EngineConfig":
        values: dict = {}
        if path is not None:
            try:
                values = json.loads(Path(path).read_text("utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(values, dict):
                raise ConfigError(f"config {path} must be a JSON object")
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value
        try:
            return cls(**values)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
