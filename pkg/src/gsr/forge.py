"""Training-corpus construction: weak-supervision mining, pruning, indexing data."""
from __future__ import annotations

import json
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from . import prompts
from .clients import ChatClient, ChatError, ChatUnavailable
from .kg import Direction, KnowledgeGraph
from .paths import DirectedHop, shortest_paths

logger = logging.getLogger(__name__)

PLACEHOLDER = "[SUBJECT]"
MAX_TEMPLATES = 10
MAX_PSEUDO_PER_RELATION = 10

Chain = tuple[DirectedHop, ...]


class ForgeError(Exception):
    pass


class SelectionAborted(ForgeError):
    """Selector became unreachable; ``completed`` holds the samples done so far."""

    def __init__(self, message: str, completed: list["RetrievalSample"], remaining: int):
        super().__init__(message)
        self.completed = completed
        self.remaining = remaining


@dataclass
class QAExample:
    id: str
    question: str
    topic_entities: list[str]
    answers: list[str]

    def __post_init__(self):
        if not self.topic_entities:
            raise ForgeError(f"example {self.id}: no topic entity")

    @classmethod
    def from_json(cls, obj: dict) -> "QAExample":
        return cls(str(obj["id"]), obj["question"], list(obj["topic_entities"]), list(obj["answers"]))

    def to_json(self) -> dict:
        return {"id": self.id, "question": self.question,
                "topic_entities": self.topic_entities, "answers": self.answers}


@dataclass
class RetrievalSample:
    example_id: str
    question: str
    topic: str
    chains: list[Chain]
    tier: str = "raw"

    def to_json(self) -> dict:
        return {
            "example_id": self.example_id,
            "question": self.question,
            "topic": self.topic,
            "tier": self.tier,
            "chains": [[{"relation": h.relation, "direction": h.direction.value} for h in c]
                       for c in self.chains],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RetrievalSample":
        chains = [tuple(DirectedHop(h["relation"], Direction(h["direction"])) for h in c)
                  for c in obj["chains"]]
        return cls(obj["example_id"], obj["question"], obj["topic"], chains, obj["tier"])


@dataclass(frozen=True)
class IndexingSample:
    pseudo_question: str
    relation: str

    def to_json(self) -> dict:
        return {"pseudo_question": self.pseudo_question, "relation": self.relation}

    @classmethod
    def from_json(cls, obj: dict) -> "IndexingSample":
        return cls(obj["pseudo_question"], obj["relation"])


@dataclass(frozen=True)
class QuestionTemplate:
    relation: str
    text: str

    def __post_init__(self):
        if self.text.count(PLACEHOLDER) != 1:
            raise ForgeError(f"template must contain exactly one {PLACEHOLDER}: {self.text!r}")


# -- JSONL helpers -----------------------------------------------------------

def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=False) + "\n")


def load_examples(path: str | Path) -> list[QAExample]:
    return [QAExample.from_json(o) for o in read_jsonl(path)]


def load_samples(path: str | Path) -> list[RetrievalSample]:
    return [RetrievalSample.from_json(o) for o in read_jsonl(path)]


# -- retrieval data ----------------------------------------------------------

def _mine_one(graph: KnowledgeGraph, ex: QAExample, max_hops: int) -> list[RetrievalSample]:
    answers = [graph.resolve(a) for a in ex.answers]
    answers = [a for a in answers if a is not None]
    if not answers:
        logger.info("skip %s: no answer resolves in graph", ex.id)
        return []
    out = []
    for topic_label in ex.topic_entities:
        topic = graph.resolve(topic_label)
        if topic is None:
            logger.info("skip topic %r of %s: not in graph", topic_label, ex.id)
            continue
        seen: set[Chain] = set()
        chains: list[Chain] = []
        for ans in answers:
            for seq in shortest_paths(graph, topic, ans, max_hops):
                labeled = tuple(DirectedHop(graph.relations.label(h.relation), h.direction) for h in seq)
                if labeled not in seen:
                    seen.add(labeled)
                    chains.append(labeled)
        if chains:
            out.append(RetrievalSample(ex.id, ex.question, topic_label, chains, "raw"))
        else:
            logger.info("skip topic %r of %s: no answer within %d hops", topic_label, ex.id, max_hops)
    return out


def mine_raw_retrieval(
    graph: KnowledgeGraph,
    examples: Sequence[QAExample],
    max_hops: int = 2,
    threads: int = 1,
) -> list[RetrievalSample]:
    """All shortest topic->answer hop sequences per example, unioned over answers.

    One sample is emitted per resolvable topic entity. Examples with no path
    within ``max_hops`` are dropped.
    """
    if max_hops < 1:
        raise ForgeError("max_hops must be >= 1")
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda ex: _mine_one(graph, ex, max_hops), examples))
    else:
        parts = [_mine_one(graph, ex, max_hops) for ex in examples]
    return [s for part in parts for s in part]


def filter_forward_only(samples: Sequence[RetrievalSample]) -> list[RetrievalSample]:
    out = []
    for s in samples:
        kept = [c for c in s.chains if all(h.direction is Direction.FORWARD for h in c)]
        if kept:
            out.append(replace(s, chains=kept, tier="filtered"))
    return out


def render_chain(chain: Chain) -> str:
    return " -- ".join(h.relation if h.direction is Direction.FORWARD else f"{h.relation} (inverse)"
                       for h in chain)


def selection_prompt(sample: RetrievalSample) -> str:
    path_list = "\n".join(f"{i}: {render_chain(c)}" for i, c in enumerate(sample.chains, 1))
    return prompts.fill(prompts.SELECT_PATHS, path_list=path_list, question=sample.question)


def parse_selection(text: str, n_candidates: int) -> list[int] | None:
    """Zero-based indices in ascending order.

    An empty reply means nothing was selected; ``None`` means the reply is not
    an index list at all.
    """
    if not text.strip():
        return []
    nums = re.findall(r"\d+", text)
    if not nums:
        return None
    picked = set()
    for tok in nums:
        i = int(tok)
        if 1 <= i <= n_candidates:
            picked.add(i - 1)
        else:
            logger.warning("selector index %d out of range 1..%d ignored", i, n_candidates)
    return sorted(picked)


def select_with_llm(
    samples: Sequence[RetrievalSample],
    selector: ChatClient,
    max_in_flight: int = 4,
) -> list[RetrievalSample]:
    """Keep the chains an LLM judge picks; original chain order is preserved.

    A garbled or failed reply for one example falls back to its forward-only
    chains. An unreachable selector aborts with :class:`SelectionAborted`.
    """
    def one(sample: RetrievalSample) -> RetrievalSample | None:
        try:
            reply = selector.complete(selection_prompt(sample))
            idx = parse_selection(reply.text, len(sample.chains))
        except ChatUnavailable:
            raise
        except ChatError as exc:
            logger.warning("selector failed on %s (%s); falling back to filtered", sample.example_id, exc)
            idx = None
        if idx is None:
            fallback = filter_forward_only([sample])
            return replace(fallback[0], tier="selected") if fallback else None
        if not idx:
            return None
        return replace(sample, chains=[sample.chains[i] for i in idx], tier="selected")

    results: list[RetrievalSample | None] = []
    with ThreadPoolExecutor(max(1, max_in_flight)) as pool:
        futures = [pool.submit(one, s) for s in samples]
        for i, fut in enumerate(futures):
            try:
                results.append(fut.result())
            except ChatUnavailable as exc:
                for f in futures[i + 1:]:
                    f.cancel()
                done = [r for r in results if r is not None]
                raise SelectionAborted(
                    f"selector unreachable after {i} of {len(samples)} examples: {exc}",
                    done, len(samples) - i) from exc
    return [r for r in results if r is not None]


# -- indexing data -----------------------------------------------------------

_PARAPHRASES = (
    "what is the {w} of [SUBJECT]?",
    "which entity is the {w} of [SUBJECT]?",
    "who or what is the {w} of [SUBJECT]?",
    "tell me the {w} of [SUBJECT]",
    "what {w} does [SUBJECT] have?",
    "name the {w} of [SUBJECT]",
    "[SUBJECT] has what {w}?",
    "what is listed as the {w} for [SUBJECT]?",
    "identify the {w} of [SUBJECT]",
    "what do we know as the {w} of [SUBJECT]?",
)


def relation_surface(relation: str) -> str:
    """Last dotted segment with underscores as spaces: ``people.person.sibling`` -> ``sibling``."""
    return relation.rsplit(".", 1)[-1].replace("_", " ")


def offline_templates(relation: str) -> list[str]:
    w = relation_surface(relation)
    return [p.format(w=w) for p in _PARAPHRASES]


def _strip_enumeration(line: str) -> str:
    return re.sub(r"^\s*(?:\d+[.):]|[-*•])\s*", "", line).strip().strip('"').strip()


def generate_templates(
    relation: str,
    triple_example: tuple[str, str, str],
    generator: ChatClient | None = None,
) -> list[QuestionTemplate]:
    """Up to ten question templates for ``relation``.

    ``generator=None`` selects the deterministic offline generator. Generated
    lines without exactly one placeholder are discarded.
    """
    if generator is None:
        lines = offline_templates(relation)
    else:
        prompt = prompts.fill(prompts.PSEUDO_QUESTIONS, relation=relation,
                              triple_example="(" + ", ".join(triple_example) + ")")
        lines = [_strip_enumeration(l) for l in generator.complete(prompt).text.splitlines()]
    out = []
    for line in lines:
        if line.count(PLACEHOLDER) != 1:
            if line:
                logger.debug("discarding template %r", line)
            continue
        out.append(QuestionTemplate(relation, line))
        if len(out) == MAX_TEMPLATES:
            break
    return out


def build_indexing_samples(
    graph: KnowledgeGraph,
    templates: Sequence[QuestionTemplate],
    per_template: int = 1,
    seed: int = 0,
) -> list[IndexingSample]:
    """Fill each template with subjects sampled from its relation's triples."""
    if per_template < 1:
        raise ForgeError("per_template must be >= 1")
    rng = random.Random(seed)
    counts: dict[str, int] = {}
    out = []
    for t in templates:
        rid = graph.resolve(t.relation, "relation")
        triples = graph.relation_triples(rid) if rid is not None else []
        if not triples:
            continue
        for _ in range(per_template):
            if counts.get(t.relation, 0) >= MAX_PSEUDO_PER_RELATION:
                break
            s = rng.choice(triples).subject
            out.append(IndexingSample(t.text.replace(PLACEHOLDER, graph.entities.label(s)), t.relation))
            counts[t.relation] = counts.get(t.relation, 0) + 1
    return out


def build_index_corpus(
    graph: KnowledgeGraph,
    generator: ChatClient | None = None,
    per_template: int = 1,
    seed: int = 0,
) -> list[IndexingSample]:
    templates = []
    for rid, label, _count in graph.relation_catalog():
        t = graph.relation_triples(rid)[0]
        example = (graph.entities.label(t.subject), label, graph.entities.label(t.object))
        templates.extend(generate_templates(label, example, generator))
    return build_indexing_samples(graph, templates, per_template, seed)


# -- diagnostics -------------------------------------------------------------

@dataclass
class DataStats:
    examples: int = 0
    chains: int = 0
    mean_chain_length: float = 0.0
    repeated_relation_fraction: float = 0.0
    inverse_hop_chains: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"examples": self.examples, "chains": self.chains,
                "mean_chain_length": self.mean_chain_length,
                "repeated_relation_fraction": self.repeated_relation_fraction,
                "inverse_hop_chains": self.inverse_hop_chains, **self.extra}


def has_repeated_relation(chain: Chain) -> bool:
    rels = [h.relation for h in chain]
    return len(set(rels)) < len(rels)


def data_stats(samples: Sequence[RetrievalSample]) -> DataStats:
    chains = [c for s in samples for c in s.chains]
    if not chains:
        return DataStats(examples=len({s.example_id for s in samples}))
    return DataStats(
        examples=len({s.example_id for s in samples}),
        chains=len(chains),
        mean_chain_length=sum(len(c) for c in chains) / len(chains),
        repeated_relation_fraction=sum(map(has_repeated_relation, chains)) / len(chains),
        inverse_hop_chains=sum(any(h.direction is Direction.INVERSE for h in c) for c in chains),
    )
