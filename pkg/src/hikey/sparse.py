"""Sparse lexical scoring: tokenizer, Okapi BM25 fields, min-max tables.

Scores are reproducible by construction: the stopword list ships with the
package and the index stores exact integer statistics.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import EmptyScoreTable, UnknownId

DEFAULT_K1 = 1.5
DEFAULT_B = 0.75

# Fixed English stopword list (Lucene/Elasticsearch default set plus the
# possessive fragment "s" produced by splitting apostrophes).
STOPWORDS = frozenset(
    """a an and are as at be but by for if in into is it no not of on or such
    that the their then there these they this to was will with s""".split()
)

_SPLIT_RE = re.compile(r"[\W_]+", re.UNICODE)


def split_terms(text: str) -> list[str]:
    """Unicode-lowercase and split on non-alphanumeric runs (no stoplist)."""
    return [t for t in _SPLIT_RE.split(text.lower()) if t]


def tokenize(text: str) -> list[str]:
    """split_terms with the built-in English stoplist applied."""
    return [t for t in split_terms(text) if t not in STOPWORDS]


@dataclass
class SparseIndex:
    """One BM25 field over a set of ids. Immutable once built."""

    field_id: str
    postings: dict[str, dict[str, int]] = field(default_factory=dict)
    doc_lengths: dict[str, int] = field(default_factory=dict)
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    _avg_cache: float | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.doc_lengths)

    @property
    def avg_doc_length(self) -> float:
        if self._avg_cache is None:
            if not self.doc_lengths:
                return 0.0
            self._avg_cache = sum(self.doc_lengths.values()) / len(self.doc_lengths)
        return self._avg_cache

    def add(self, doc_id: str, text: str) -> None:
        terms = tokenize(text)
        self.doc_lengths[doc_id] = len(terms)
        self._avg_cache = None
        for term, tf in Counter(terms).items():
            self.postings.setdefault(term, {})[doc_id] = tf

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log((self.n - df + 0.5) / (df + 0.5) + 1.0)

    def score(self, query_terms: list[str], doc_id: str) -> float:
        if doc_id not in self.doc_lengths:
            raise UnknownId(f"id {doc_id!r} not in field {self.field_id!r}")
        length = self.doc_lengths[doc_id]
        avg = self.avg_doc_length
        norm = self.k1 * (1.0 - self.b + self.b * (length / avg if avg > 0 else 0.0))
        total = 0.0
        for term in query_terms:
            tf = self.postings.get(term, {}).get(doc_id)
            if not tf:
                continue
            total += self.idf(term) * tf * (self.k1 + 1.0) / (tf + norm)
        return total

    def score_all(self, query_terms: list[str]) -> dict[str, float]:
        """Raw BM25 for every indexed id (absent terms contribute 0)."""
        scores = {doc_id: 0.0 for doc_id in self.doc_lengths}
        avg = self.avg_doc_length
        for term in set(query_terms):
            mult = query_terms.count(term)
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for doc_id, tf in plist.items():
                length = self.doc_lengths[doc_id]
                norm = self.k1 * (1.0 - self.b + self.b * (length / avg if avg > 0 else 0.0))
                scores[doc_id] += mult * idf * tf * (self.k1 + 1.0) / (tf + norm)
        return scores


def minmax_normalize(scores: dict[str, float]) -> dict[str, float]:
    """Per-query min-max map into [0, 1]; all-equal tables map to 0.5."""
    if not scores:
        raise EmptyScoreTable("cannot normalize an empty score table")
    lo = min(scores.values())
    hi = max(scores.values())
    if hi == lo:
        return {k: 0.5 for k in scores}
    span = hi - lo
    return {k: (v - lo) / span for k, v in scores.items()}
