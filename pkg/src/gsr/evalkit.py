"""Retrieval and end-to-end QA metrics, aggregation, beam-size sweeps."""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .beam import retrieve
from .forge import QAExample
from .kg import KnowledgeGraph
from .model import GsrModel
from .paths import Traversal


class EvalError(Exception):
    pass


def normalize(label: str) -> str:
    return re.sub(r"\s+", " ", label.strip().lower())


@dataclass(frozen=True)
class RetrievalScore:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class E2EScore:
    hits_at_1: int
    hits: int
    f1: float


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def retrieval_metrics(retrieved: Iterable[str], gold: Iterable[str]) -> RetrievalScore:
    got = {normalize(x) for x in retrieved}
    want = {normalize(x) for x in gold}
    if not want:
        raise EvalError("gold answer set is empty")
    hit = len(got & want)
    p = hit / len(got) if got else 0.0
    r = hit / len(want)
    return RetrievalScore(p, r, _f1(p, r))


def e2e_metrics(predicted: Sequence[str], gold: Iterable[str]) -> E2EScore:
    want = {normalize(x) for x in gold}
    if not want:
        raise EvalError("gold answer set is empty")
    pred = [normalize(x) for x in predicted]
    if not pred:
        return E2EScore(0, 0, 0.0)
    pset = set(pred)
    hit = len(pset & want)
    return E2EScore(int(pred[0] in want), int(hit > 0), _f1(hit / len(pset), hit / len(want)))


def aggregate(scores: Sequence) -> dict[str, float]:
    """Macro mean of every numeric field, as percentages rounded to 2 places."""
    if not scores:
        raise EvalError("cannot aggregate an empty score list")
    fields = list(asdict(scores[0]))
    return {f: round(100.0 * sum(getattr(s, f) for s in scores) / len(scores), 2) for f in fields}


def retrieval_eval(model: GsrModel, graph: KnowledgeGraph, dataset: Sequence[QAExample],
                   k: int, n: int, traversal=Traversal.BIDIRECTIONAL):
    results, scores = [], []
    for ex in dataset:
        res = retrieve(model, graph, ex.question, ex.topic_entities, k, n, traversal, ex.id)
        results.append(res)
        scores.append(retrieval_metrics(res.terminals, ex.answers))
    return results, scores


def kg_coverage(graph: KnowledgeGraph, dataset: Sequence[QAExample]) -> float:
    """Fraction of examples with at least one gold answer present in the graph."""
    if not dataset:
        return 0.0
    return sum(any(graph.resolve(a) is not None for a in ex.answers) for ex in dataset) / len(dataset)


@dataclass
class SweepReport:
    rows: list[dict] = field(default_factory=list)
    superset_violations: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows, "superset_violations": self.superset_violations},
                          indent=2, sort_keys=True)

    def table(self) -> str:
        cols = list(self.rows[0]) if self.rows else ["k"]
        out = ["  ".join(f"{c:>10}" for c in cols)]
        for row in self.rows:
            out.append("  ".join(f"{row[c]:>10}" for c in cols))
        return "\n".join(out)


def beam_sweep(
    model: GsrModel,
    graph: KnowledgeGraph,
    dataset: Sequence[QAExample],
    ks: Sequence[int],
    n: int,
    traversal=Traversal.BIDIRECTIONAL,
    strict: bool = True,
) -> SweepReport:
    """Retrieval metrics per beam size, checking candidate-set growth with k.

    Beam search does not guarantee that a wider beam keeps every chain a
    narrower one found; violations are collected and raise when ``strict``.
    """
    if not ks:
        raise EvalError("ks must be non-empty")
    ks = sorted(set(ks))
    report = SweepReport()
    prev: dict[str, set] | None = None
    prev_k = None
    for k in ks:
        results, scores = retrieval_eval(model, graph, dataset, k, min(n, k), traversal)
        row = {"k": k, "n": min(n, k), **aggregate(scores)}
        report.rows.append(row)
        current = {r.question_id: {c.relations for c in r.candidates} for r in results}
        if prev is not None:
            for qid, cands in current.items():
                missing = prev[qid] - cands
                if missing:
                    report.superset_violations.append(
                        {"id": qid, "k_small": prev_k, "k_large": k, "missing": sorted(map(list, missing))})
        prev, prev_k = current, k
    if strict and report.superset_violations:
        raise EvalError(f"{len(report.superset_violations)} questions lost candidates as k grew")
    return report
