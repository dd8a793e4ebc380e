"""Retrieval and answer-quality metrics with the Avg@1-10 reporting protocol."""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .errors import ParseError


@dataclass
class EvalRecord:
    query_id: str
    query: str
    gold_docs: set[str]
    retrieved: list[str] = field(default_factory=list)
    gold_answers: list[str] = field(default_factory=list)
    prediction: str | None = None

    def __post_init__(self):
        if not self.gold_docs:
            raise ParseError(f"record {self.query_id!r} has no gold documents")
        if len(self.retrieved) != len(set(self.retrieved)):
            raise ParseError(f"record {self.query_id!r} has duplicate retrieved ids")


def recall_at_k(record: EvalRecord, k: int) -> float:
    top = set(record.retrieved[:k])
    return len(record.gold_docs & top) / len(record.gold_docs)


def mrr_at_k(record: EvalRecord, k: int) -> float:
    for rank, doc_id in enumerate(record.retrieved[:k], start=1):
        if doc_id in record.gold_docs:
            return 1.0 / rank
    return 0.0


def hit_at_k(record: EvalRecord, k: int) -> int:
    return int(any(d in record.gold_docs for d in record.retrieved[:k]))


def all_at_k(record: EvalRecord, k: int) -> int:
    return int(record.gold_docs <= set(record.retrieved[:k]))


METRICS: dict[str, Callable[[EvalRecord, int], float]] = {
    "recall": recall_at_k,
    "mrr": mrr_at_k,
    "hit": hit_at_k,
    "all": all_at_k,
}


def mean_at_k(records: Sequence[EvalRecord], metric: str, k: int) -> float:
    fn = METRICS[metric]
    return sum(fn(r, k) for r in records) / len(records)


def avg_1_10(records: Sequence[EvalRecord], metric: str) -> float:
    """Mean over cut-offs K=1..10 of the query-macro-averaged metric@K."""
    return sum(mean_at_k(records, metric, k) for k in range(1, 11)) / 10.0


def budgeted_recall(records: Sequence[EvalRecord], k: int, pack_doc_ids: Callable[[EvalRecord], Sequence[str]]) -> float:
    """Recall@K over the documents actually present in the packed subgraph."""
    total = 0.0
    for record in records:
        packed = set(pack_doc_ids(record))
        survivors = [d for d in record.retrieved if d in packed]
        total += len(record.gold_docs & set(survivors[:k])) / len(record.gold_docs)
    return total / len(records)


_PUNCT_RE = re.compile(r"[!-/:-@\[-`{-~]")


def normalize_answer(text: str) -> str:
    """NFC, lowercase, strip ASCII punctuation, collapse whitespace."""
    text = unicodedata.normalize("NFC", text).lower()
    text = _PUNCT_RE.sub(" ", text)
    return " ".join(text.split())


def exact_match(prediction: str, gold_answers: Sequence[str]) -> int:
    pred = normalize_answer(prediction)
    return int(any(pred == normalize_answer(g) for g in gold_answers))


def levenshtein(a: str, b: str) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def anls(prediction: str, gold_answers: Sequence[str], threshold: float = 0.5) -> float:
    """Max over golds of thresholded normalized Levenshtein similarity."""
    pred = normalize_answer(prediction)
    best = 0.0
    for gold in gold_answers:
        g = normalize_answer(gold)
        if not pred and not g:
            s = 1.0
        else:
            denom = max(len(pred), len(g))
            s = 1.0 - levenshtein(pred, g) / denom
        best = max(best, s if s >= threshold else 0.0)
    return best


def load_queries_jsonl(lines, source: str = "<queries>") -> list[EvalRecord]:
    records = []
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            raw = json.loads(line)
            records.append(
                EvalRecord(
                    query_id=str(raw["query_id"]),
                    query=str(raw["query"]),
                    gold_docs=set(raw["gold_docs"]),
                    gold_answers=[str(a) for a in raw.get("gold_answers", [])],
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"{source}: bad query record: {exc}", line_no=line_no) from exc
    return records


def load_predictions_jsonl(lines, source: str = "<predictions>") -> dict[str, str]:
    preds = {}
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            raw = json.loads(line)
            preds[str(raw["query_id"])] = str(raw["prediction"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"{source}: bad prediction record: {exc}", line_no=line_no) from exc
    return preds


def build_report(records: Sequence[EvalRecord]) -> dict:
    """Retrieval report: each metric at K=1..10 plus Avg@1-10, and QA
    metrics when predictions are present."""
    report: dict = {"n_queries": len(records), "retrieval": {}}
    for metric in ("recall", "mrr", "hit", "all"):
        per_k = {str(k): mean_at_k(records, metric, k) for k in range(1, 11)}
        report["retrieval"][metric] = {"at_k": per_k, "avg_1_10": avg_1_10(records, metric)}
    scored = [r for r in records if r.prediction is not None and r.gold_answers]
    if scored:
        report["qa"] = {
            "n_scored": len(scored),
            "em": sum(exact_match(r.prediction, r.gold_answers) for r in scored) / len(scored),
            "anls": sum(anls(r.prediction, r.gold_answers) for r in scored) / len(scored),
        }
    return report


def format_report_table(report: dict) -> str:
    """Aligned text table: Recall/MRR/Hit/All at each K and Avg@1-10."""
    header = f"{'K':>9} {'Recall':>8} {'MRR':>8} {'Hit':>8} {'All':>8}"
    lines = [header, "-" * len(header)]
    ret = report["retrieval"]
    for k in range(1, 11):
        row = [f"{k:>9}"]
        for metric in ("recall", "mrr", "hit", "all"):
            row.append(f"{ret[metric]['at_k'][str(k)]:>8.4f}")
        lines.append(" ".join(row))
    row = [f"{'Avg@1-10':>9}"]
    for metric in ("recall", "mrr", "hit", "all"):
        row.append(f"{ret[metric]['avg_1_10']:>8.4f}")
    lines.append(" ".join(row))
    if "qa" in report:
        qa = report["qa"]
        lines.append("")
        lines.append(f"QA (n={qa['n_scored']}): EM={qa['em']:.4f} ANLS={qa['anls']:.4f}")
    return "\n".join(lines)
