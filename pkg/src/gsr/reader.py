"""Subgraph serialisation for an external LLM reader, and answer parsing."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Sequence

from . import prompts
from .clients import ChatClient
from .kg import Direction, KnowledgeGraph
from .paths import PathConstrainedSubgraph, ReasoningPath

logger = logging.getLogger(__name__)

DEFAULT_TOKEN_BUDGET = 4096


@dataclass
class SubgraphRendering:
    format: str
    lines: list[str]
    truncated_lines: int = 0

    @property
    def text(self) -> str:
        return "\n".join(self.lines)

    @property
    def token_estimate(self) -> int:
        return sum(len(l.split()) for l in self.lines)


@dataclass
class ReaderAnswer:
    raw: str
    answers: list[str]
    usage: dict = field(default_factory=dict)


def render_path(graph: KnowledgeGraph, path: ReasoningPath) -> str:
    parts = [graph.entities.label(path.entities[0])]
    for hop, ent in zip(path.hops, path.entities[1:]):
        arrow = " -> " if hop.direction is Direction.FORWARD else " <- "
        parts.append(arrow + graph.relations.label(hop.relation) + arrow + graph.entities.label(ent))
    return "".join(parts)


def _budgeted(lines: list[str], budget: int | None) -> tuple[list[str], int]:
    if budget is None:
        return lines, 0
    kept, used = [], 0
    for line in lines:
        cost = len(line.split())
        if used + cost > budget:
            break
        kept.append(line)
        used += cost
    return kept, len(lines) - len(kept)


def _unique(lines) -> list[str]:
    return list(dict.fromkeys(lines))


def serialize_paths(
    subgraphs: Sequence[PathConstrainedSubgraph],
    graph: KnowledgeGraph,
    budget: int | None = DEFAULT_TOKEN_BUDGET,
) -> SubgraphRendering:
    """One line per reasoning path, e.g. ``a -> r1 -> b <- r2 <- c``.

    Lines keep chain-rank then discovery order; over-budget lines are dropped
    from the end.
    """
    lines = _unique(render_path(graph, p) for sg in subgraphs for p in sg.paths)
    kept, dropped = _budgeted(lines, budget)
    return SubgraphRendering("paths", kept, dropped)


def serialize_triples(
    subgraphs: Sequence[PathConstrainedSubgraph],
    graph: KnowledgeGraph,
    budget: int | None = DEFAULT_TOKEN_BUDGET,
) -> SubgraphRendering:
    """Each distinct stored triple once as ``s, r, o`` in first-seen order."""
    ent, rel = graph.entities.label, graph.relations.label
    lines = _unique(f"{ent(s)}, {rel(r)}, {ent(o)}"
                    for sg in subgraphs for p in sg.paths for s, r, o in p.triples())
    kept, dropped = _budgeted(lines, budget)
    return SubgraphRendering("triples", kept, dropped)


def reader_prompt(question: str, rendering: SubgraphRendering | None) -> str:
    context = rendering.text if rendering is not None else ""
    if rendering is not None and rendering.format == "triples":
        return prompts.fill(prompts.READER_TRIPLES, subgraph_triples=context, question=question)
    return prompts.fill(prompts.READER_PATHS, reasoning_paths=context, question=question)


_QUOTES = "\"'`“”‘’"


def _clean(item: str) -> str:
    item = re.sub(r"^\s*(?:[-*•]|\d+[.)])\s+", "", item)
    return item.strip().strip(_QUOTES).strip()


def parse_answer_list(raw: str) -> list[str]:
    """Best-effort ordered answer list from free-form reader output. Never raises."""
    text = (raw or "").strip()
    if not text:
        return []
    try:
        obj = json.loads(text)
    except ValueError:
        obj = None
    if isinstance(obj, list):
        return [s for s in (_clean(str(x)) for x in obj) if s]
    if isinstance(obj, str):
        return [_clean(obj)] if _clean(obj) else []

    m = re.fullmatch(r"\[(.*)\]", text, flags=re.S)
    if m:
        return [s for s in (_clean(x) for x in re.split(r",|\n", m.group(1))) if s]

    lines = [l for l in text.splitlines() if l.strip()]
    if len(lines) == 1:
        lines = lines[0].split(",")
    return [s for s in (_clean(l) for l in lines) if s]


def ask_reader(client: ChatClient, question: str, rendering: SubgraphRendering | None) -> ReaderAnswer:
    """One chat completion with the format-matching prompt; retries live in the client."""
    prompt = reader_prompt(question, rendering)
    reply = client.complete(prompt)
    return ReaderAnswer(reply.text, parse_answer_list(reply.text),
                        {"prompt_chars": reply.prompt_chars, "response_chars": reply.response_chars,
                         **(reply.usage or {})})
