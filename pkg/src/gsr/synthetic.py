"""Seeded synthetic KG + template question corpus for hermetic end-to-end runs.

Entities are typed and every relation has a fixed domain and range. Every
person carries a ``gender`` edge to one of two hubs and a ``religion`` edge to
one of four, reproducing the uninformative ``gender -> gender`` shortest paths
that weak supervision picks up on real KGs.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .forge import QAExample, write_jsonl
from .kg import KnowledgeGraph

GENDER = "syn.person.gender"
# relation -> (domain type, range type)
SCHEMA = {
    "syn.person.mother": ("person", "person"),
    "syn.person.father": ("person", "person"),
    "syn.person.spouse": ("person", "person"),
    "syn.person.mentor": ("person", "person"),
    "syn.person.employer": ("person", "organization"),
    "syn.person.birthplace": ("person", "location"),
    "syn.person.religion": ("person", "religion"),
    "syn.location.capital": ("location", "location"),
    "syn.location.continent": ("location", "continent"),
    "syn.location.currency": ("location", "concept"),
    "syn.location.language": ("location", "concept"),
    "syn.organization.leader": ("organization", "person"),
    "syn.organization.founder": ("organization", "person"),
    "syn.organization.headquarters": ("organization", "location"),
    "syn.work.genre": ("work", "concept"),
    "syn.work.author": ("work", "person"),
    "syn.work.director": ("work", "person"),
    "syn.team.mascot": ("team", "concept"),
    "syn.team.coach": ("team", "person"),
}
RELATIONS = tuple(SCHEMA)
RELIGION = "syn.person.religion"
TYPE_SIZES = {"person": 70, "location": 34, "continent": 6, "organization": 30, "work": 25, "team": 15, "religion": 4, "concept": 14}

ONE_HOP = (
    "what is the {w} of {e}",
    "who is the {w} of {e}",
    "tell me the {w} of {e}",
    "which entity is the {w} of {e}",
    "name the {w} of {e}",
)
TWO_HOP = (
    "what is the {w2} of the {w1} of {e}",
    "who is the {w2} of the {w1} of {e}",
    "tell me the {w2} of the {w1} of {e}",
    "name the {w2} of the {w1} of {e}",
    "which entity is the {w2} of the {w1} of {e}",
)


def _word(relation: str) -> str:
    return relation.rsplit(".", 1)[-1]


@dataclass
class SyntheticCorpus:
    triples: list[tuple[str, str, str]]
    train: list[QAExample]
    test: list[QAExample]
    hops: dict[str, int]

    def graph(self) -> KnowledgeGraph:
        return KnowledgeGraph.from_labeled(self.triples)

    def write(self, directory: str | Path) -> dict[str, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {"kg": d / "kg.tsv", "train": d / "train.jsonl", "test": d / "test.jsonl", "hops": d / "hops.json"}
        with open(paths["kg"], "w", encoding="utf-8") as fh:
            fh.writelines(f"{s}\t{r}\t{o}\n" for s, r, o in self.triples)
        write_jsonl(paths["train"], (ex.to_json() for ex in self.train))
        write_jsonl(paths["test"], (ex.to_json() for ex in self.test))
        paths["hops"].write_text(json.dumps(self.hops, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return paths


def make_corpus(
    seed: int = 0,
    triples_per_relation: int = 75,
    n_questions: int = 400,
    n_train: int = 300,
) -> SyntheticCorpus:
    """Typed KG: 198 typed entities plus two gender hubs, relations respect a domain/range schema."""
    rng = random.Random(seed)
    typed = {t: [f"{t}_{i:03d}" for i in range(n)] for t, n in TYPE_SIZES.items()}
    triples: set[tuple[str, str, str]] = set()
    for e in typed["person"]:
        triples.add((e, GENDER, rng.choice(("male", "female"))))
        triples.add((e, RELIGION, rng.choice(typed["religion"])))
    for rel, (dom, rng_type) in SCHEMA.items():
        if rel == RELIGION:
            continue
        heads, tails, edges = typed[dom], typed[rng_type], set()
        while len(edges) < triples_per_relation:
            s, o = rng.choice(heads), rng.choice(tails)
            if o != s:
                edges.add((s, rel, o))
        triples |= edges
    triple_list = sorted(triples)

    fwd: dict[tuple[str, str], set[str]] = {}
    for s, r, o in triple_list:
        fwd.setdefault((s, r), set()).add(o)
    subjects = {rel: sorted({s for (s, r) in fwd if r == rel}) for rel in RELATIONS}

    questions: list[tuple[QAExample, int]] = []
    seen = set()
    while len(questions) < n_questions:
        hop = 1 if len(questions) % 2 == 0 else 2
        r1 = rng.choice(RELATIONS)
        topic = rng.choice(subjects[r1])
        mids = fwd[(topic, r1)]
        if hop == 1:
            answers = mids
            text = rng.choice(ONE_HOP).format(w=_word(r1), e=topic)
            key = (topic, r1)
        else:
            options = [r for r in RELATIONS if any((m, r) in fwd for m in mids)]
            if not options:
                continue
            r2 = rng.choice(options)
            answers = set().union(*(fwd.get((m, r2), set()) for m in mids))
            text = rng.choice(TWO_HOP).format(w1=_word(r1), w2=_word(r2), e=topic)
            key = (topic, r1, r2)
        answers = answers - {topic}
        if key in seen or not answers:
            continue
        seen.add(key)
        qid = f"syn-{len(questions):04d}"
        questions.append((QAExample(qid, text, [topic], sorted(answers)), hop))

    order = list(range(len(questions)))
    rng.shuffle(order)
    train = [questions[i][0] for i in sorted(order[:n_train])]
    test = [questions[i][0] for i in sorted(order[n_train:])]
    hops = {ex.id: h for ex, h in questions}
    return SyntheticCorpus(triple_list, train, test, hops)
