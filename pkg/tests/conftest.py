from __future__ import annotations

import random

import pytest

from gsr.kg import KnowledgeGraph, ingest_triples

TOY_TSV = ["a\tr1\tb", "b\tr2\tc", "a\tg\tm", "c\tg\tm", "d\tr1\tb"]

# Mascot subgraph: six distinct championship events share the team hop
LOU_SEAL_EVENTS = ["2010 World Series", "2012 World Series", "2014 World Series",
                   "2010 NL Pennant", "2012 NL Pennant", "2014 NL Pennant"]


@pytest.fixture
def toy() -> KnowledgeGraph:
    return ingest_triples(TOY_TSV)


@pytest.fixture
def lou_seal() -> KnowledgeGraph:
    triples = [("Lou Seal", "sports.mascot.team", "San Francisco Giants")]
    triples += [(ev, "sports.sports_championship_event.champion", "San Francisco Giants") for ev in LOU_SEAL_EVENTS]
    return KnowledgeGraph.from_labeled(triples)


def random_graph(rng: random.Random, n_entities: int, n_relations: int, n_triples: int) -> KnowledgeGraph:
    ents = [f"e{i}" for i in range(n_entities)]
    rels = [f"r{i}" for i in range(n_relations)]
    return KnowledgeGraph.from_labeled(
        (rng.choice(ents), rng.choice(rels), rng.choice(ents)) for _ in range(n_triples))


# acceptance criteria append (name, passed, detail) here; printed after the run
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
