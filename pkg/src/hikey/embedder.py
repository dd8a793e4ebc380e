"""Embedding providers and exact vector similarity.

Two pure providers: a deterministic feature-hashing provider for tests and
desk-scale runs, and a precomputed-vector file provider for plugging in
real model outputs. Both return the same vector for the same input, always.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionMismatch, MissingEmbedding

from .sparse import split_terms


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; defined as 0 when either vector has zero norm."""
    if u.shape != v.shape:
        raise DimensionMismatch(f"vector dims differ: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


class HashEmbedder:
    """Feature-hash unigrams+bigrams into `dim` signed buckets, L2-normalized.

    The empty string maps to the zero vector by convention. Visual refs are
    hashed content-addressed: the ref bytes seed a reproducible random vector.
    """

    kind = "hash"

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ConfigError(f"embedding dim must be >= 1, got {dim}")
        self.dim = dim

    def embed_text(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        terms = split_terms(text)
        if not terms:
            return vec
        features = list(terms)
        features.extend(f"{a}_{b}" for a, b in zip(terms, terms[1:]))
        for feat in features:
            h = zlib.crc32(feat.encode("utf-8"))
            sign = 1.0 if (h >> 1) & 1 else -1.0
            vec[h % self.dim] += sign
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        return vec

    def embed_ref(self, crop_ref: str) -> np.ndarray:
        seed = zlib.crc32(crop_ref.encode("utf-8"))
        rng = np.random.RandomState(seed)
        vec = rng.standard_normal(self.dim)
        vec /= float(np.linalg.norm(vec))
        return vec


class FileEmbedder:
    """Exact-key lookup into a binary vector store.

    Layout: `embeddings.bin` holds raw little-endian float32 runs;
    `embeddings.manifest.json` maps key -> {"offset": byte offset, "dim": n}.
    """

    kind = "file"

    def __init__(self, path: str | Path):
        self.root = Path(path)
        manifest_path = self.root / "embeddings.manifest.json"
        if not manifest_path.exists():
            raise ConfigError(f"no embeddings manifest at {manifest_path}")
        self.manifest: dict[str, dict] = json.loads(manifest_path.read_text("utf-8"))
        self._data = (self.root / "embeddings.bin").read_bytes()
        dims = {entry["dim"] for entry in self.manifest.values()}
        self.dim = dims.pop() if len(dims) == 1 else 0

    def _lookup(self, key: str) -> np.ndarray:
        entry = self.manifest.get(key)
        if entry is None:
            raise MissingEmbedding(key)
        offset, dim = entry["offset"], entry["dim"]
        return np.frombuffer(self._data, dtype="<f4", count=dim, offset=offset).copy()

    def embed_text(self, text: str) -> np.ndarray:
        return self._lookup(text)

    def embed_ref(self, crop_ref: str) -> np.ndarray:
        return self._lookup(crop_ref)


def write_embedding_store(path: str | Path, vectors: dict[str, np.ndarray]) -> None:
    """Write the FileEmbedder on-disk format (sorted keys for determinism)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, dict] = {}
    blob = bytearray()
    for key in sorted(vectors):
        vec = np.asarray(vectors[key], dtype="<f4")
        manifest[key] = {"offset": len(blob), "dim": int(vec.size)}
        blob += struct.pack(f"<{vec.size}f", *vec.tolist())
    (root / "embeddings.bin").write_bytes(bytes(blob))
    (root / "embeddings.manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True), "utf-8"
    )


def make_embedder(spec: str):
    """Build a provider from a CLI spec: ``hash:<dim>`` or ``file:<path>``."""
    kind, _, arg = spec.partition(":")
    if kind == "hash":
        return HashEmbedder(dim=int(arg) if arg else 256)
    if kind == "file":
        if not arg:
            raise ConfigError("file embedder spec needs a path: file:<path>")
        return FileEmbedder(arg)
    raise ConfigError(f"unknown embedder spec {spec!r} (expected hash:<dim> or file:<path>)")
