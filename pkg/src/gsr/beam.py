"""Beam search over relation tokens, KG-validity filtering, subgraph materialisation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import torch

from .kg import KnowledgeGraph
from .model import GsrModel, encode_input, step_log_probs
from .paths import (MAX_FRONTIER, MAX_PATHS, PathConstrainedSubgraph, SubgraphId, Traversal,
                    execute_chain, is_valid_chain)

logger = logging.getLogger(__name__)


class RetrievalError(Exception):
    pass


@dataclass(frozen=True)
class BeamHypothesis:
    chain: tuple[int, ...]
    score: float
    finished: bool = True


def _rank_key(h: BeamHypothesis):
    return (-h.score, h.chain)


@torch.no_grad()
def beam_decode(
    model: GsrModel,
    question: str | Sequence[int],
    k: int,
    max_hops: int | None = None,
    task: str = "retrieval",
) -> list[BeamHypothesis]:
    """Top-``k`` relation chains by summed log-probability (no length penalty).

    ``question`` may be raw text or already-encoded ids. Chains reaching
    ``max_hops`` are finished without scoring the end token. Equal scores are
    ordered by the chain's relation-target indices.
    """
    if k < 1:
        raise RetrievalError("k must be >= 1")
    H = min(max_hops or model.config.max_hops, model.config.max_hops)
    if H < 1:
        raise RetrievalError("max_hops must be >= 1")
    vocab = model.vocab
    end = vocab.end_target
    ids = encode_input(vocab, task, question, model.config.max_question_tokens) if isinstance(question, str) else list(question)
    model.eval()
    memory, pad_mask = model.encode(torch.tensor([ids], dtype=torch.long))

    alive: list[BeamHypothesis] = [BeamHypothesis((), 0.0, False)]
    finished: list[BeamHypothesis] = []
    for step in range(H):
        lp = step_log_probs(model, memory, pad_mask, [h.chain for h in alive])
        last = step == H - 1
        cands = []
        for i, h in enumerate(alive):
            for t in range(vocab.n_targets):
                score = h.score + float(lp[i, t])
                if t == end:
                    cands.append(BeamHypothesis(h.chain, score, True))
                else:
                    cands.append(BeamHypothesis(h.chain + (t,), score, last))
        cands.sort(key=_rank_key)
        alive = []
        for c in cands[:k]:
            (finished if c.finished else alive).append(c)
        if not alive:
            break
    finished.sort(key=_rank_key)
    return finished[:k]


@dataclass
class Candidate:
    relations: tuple[str, ...]
    score: float
    valid: bool
    retained: bool = False


@dataclass
class RetrievalResult:
    question_id: str
    topics: list[str]
    candidates: list[Candidate]
    retained: list[Candidate]
    subgraphs: list[PathConstrainedSubgraph]
    dropped_invalid: int
    terminals: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.retained

    def to_json(self) -> dict:
        return {
            "id": self.question_id,
            "chains": [{"relations": list(c.relations), "score": c.score, "valid": c.valid, "retained": c.retained}
                       for c in self.candidates],
            "terminals": self.terminals,
        }


def retrieve(
    model: GsrModel,
    graph: KnowledgeGraph,
    question: str,
    topics: Sequence[str],
    k: int = 10,
    n: int = 3,
    traversal: Traversal | str = Traversal.BIDIRECTIONAL,
    question_id: str = "",
    max_hops: int | None = None,
    max_paths: int = MAX_PATHS,
    max_frontier: int = MAX_FRONTIER,
) -> RetrievalResult:
    """Decode top-``k`` chains, keep the first ``n`` walkable from some topic entity."""
    if not 1 <= n <= k:
        raise RetrievalError(f"need 1 <= n <= k, got n={n}, k={k}")
    topic_ids = [(t, graph.resolve(t)) for t in topics]
    topic_ids = [(t, e) for t, e in topic_ids if e is not None]
    if not topic_ids:
        raise RetrievalError(f"no topic entity of {question_id or question!r} resolves in graph: {list(topics)}")

    hyps = beam_decode(model, question, k, max_hops)
    candidates, retained, subgraphs = [], [], []
    dropped = 0
    terminal_ids: set[int] = set()
    for h in hyps:
        labels = tuple(model.vocab.relations[t] for t in h.chain)
        rel_ids = [graph.resolve(r, "relation") for r in labels]
        valid_topics = []
        if labels and all(r is not None for r in rel_ids):
            valid_topics = [e for _, e in topic_ids if is_valid_chain(graph, e, rel_ids, traversal)]
        cand = Candidate(labels, h.score, bool(valid_topics))
        candidates.append(cand)
        if len(retained) >= n:
            continue
        if not cand.valid:
            dropped += 1
            continue
        cand.retained = True
        retained.append(cand)
        for e in valid_topics:
            sg = execute_chain(graph, SubgraphId(e, tuple(rel_ids)), traversal, max_paths, max_frontier)
            subgraphs.append(sg)
            terminal_ids |= sg.terminals
    if not retained:
        logger.info("no valid chain among %d candidates for %s", len(hyps), question_id or question)
    return RetrievalResult(
        question_id, [t for t, _ in topic_ids], candidates, retained, subgraphs, dropped,
        sorted(graph.entities.label(e) for e in terminal_ids),
    )
