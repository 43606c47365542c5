"""Triple store with interned entities/relations and two-way adjacency indexes.

Snapshot layout (little-endian)::

    b"GSRKG" | version:u8 | header_len:u64 | header (UTF-8 JSON) | triples (int64, n x 3)

The JSON header holds ``{"entities": [...], "relations": [...], "n_triples": int}``.
Label order in the header defines the dense IDs, so a round trip preserves them.
"""
from __future__ import annotations

import json
import logging
import struct
from collections import defaultdict
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Iterable, NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"GSRKG"
SNAPSHOT_VERSION = 1


class KGError(Exception):
    """Raised on malformed input, bad IDs, or unreadable snapshots."""


class Direction(str, Enum):
    FORWARD = "f"
    INVERSE = "i"


class Triple(NamedTuple):
    subject: int
    relation: int
    object: int


class Interner:
    """Bijective label <-> dense id table."""

    def __init__(self, labels: Iterable[str] = ()):
        self._labels: list[str] = []
        self._ids: dict[str, int] = {}
        for label in labels:
            self.intern(label)

    def intern(self, label: str) -> int:
        idx = self._ids.get(label)
        if idx is None:
            idx = len(self._labels)
            self._ids[label] = idx
            self._labels.append(label)
        return idx

    def get(self, label: str) -> int | None:
        return self._ids.get(label)

    def label(self, idx: int) -> str:
        if not 0 <= idx < len(self._labels):
            raise KGError(f"id {idx} out of range (size {len(self._labels)})")
        return self._labels[idx]

    @property
    def labels(self) -> list[str]:
        return list(self._labels)

    def __len__(self) -> int:
        return len(self._labels)


class KnowledgeGraph:
    """Immutable after construction; safe to share between reader threads."""

    def __init__(self, entities: Interner, relations: Interner, triples: Iterable[tuple[int, int, int]]):
        self.entities = entities
        self.relations = relations
        fwd: dict[tuple[int, int], set[int]] = defaultdict(set)
        inv: dict[tuple[int, int], set[int]] = defaultdict(set)
        for s, r, o in triples:
            fwd[(s, r)].add(o)
            inv[(o, r)].add(s)
        self._forward = {k: tuple(sorted(v)) for k, v in fwd.items()}
        self._inverse = {k: tuple(sorted(v)) for k, v in inv.items()}

        out_edges: dict[int, list[tuple[int, int]]] = defaultdict(list)
        in_edges: dict[int, list[tuple[int, int]]] = defaultdict(list)
        by_relation: dict[int, list[Triple]] = defaultdict(list)
        for (s, r), objs in sorted(self._forward.items()):
            for o in objs:
                out_edges[s].append((r, o))
                in_edges[o].append((r, s))
                by_relation[r].append(Triple(s, r, o))
        for lst in in_edges.values():
            lst.sort()
        self._out = dict(out_edges)
        self._in = dict(in_edges)
        self._by_relation = dict(by_relation)
        self.n_triples = sum(len(v) for v in self._forward.values())

    # -- construction -----------------------------------------------------

    @classmethod
    def from_labeled(cls, records: Iterable[tuple[str, str, str]]) -> "KnowledgeGraph":
        entities, relations = Interner(), Interner()
        triples = []
        for s, r, o in records:
            triples.append((entities.intern(s), relations.intern(r), entities.intern(o)))
        return cls(entities, relations, triples)

    # -- queries ----------------------------------------------------------

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def resolve(self, label: str, kind: str = "entity") -> int | None:
        if kind == "entity":
            return self.entities.get(label)
        if kind == "relation":
            return self.relations.get(label)
        raise ValueError(f"kind must be 'entity' or 'relation', got {kind!r}")

    def _check_entity(self, e: int) -> None:
        if not 0 <= e < self.n_entities:
            raise KGError(f"entity id {e} out of range")

    def _check_relation(self, r: int) -> None:
        if not 0 <= r < self.n_relations:
            raise KGError(f"relation id {r} out of range")

    def neighbors(self, entity: int, relation: int, direction: Direction | str = Direction.FORWARD) -> tuple[int, ...]:
        self._check_entity(entity)
        self._check_relation(relation)
        index = self._forward if Direction(direction) is Direction.FORWARD else self._inverse
        return index.get((entity, relation), ())

    def out_edges(self, entity: int) -> list[tuple[int, int]]:
        """(relation, object) pairs leaving ``entity``, sorted."""
        return self._out.get(entity, [])

    def in_edges(self, entity: int) -> list[tuple[int, int]]:
        """(relation, subject) pairs entering ``entity``, sorted."""
        return self._in.get(entity, [])

    def relation_triples(self, relation: int) -> list[Triple]:
        self._check_relation(relation)
        return self._by_relation.get(relation, [])

    def triples(self) -> Iterable[Triple]:
        for r in sorted(self._by_relation):
            yield from self._by_relation[r]

    def relation_catalog(self) -> list[tuple[int, str, int]]:
        return [
            (r, self.relations.label(r), len(self._by_relation[r]))
            for r in range(self.n_relations)
            if self._by_relation.get(r)
        ]

    def has_triple(self, s: int, r: int, o: int) -> bool:
        return o in self._forward.get((s, r), ())

    def __repr__(self) -> str:
        return f"KnowledgeGraph(entities={self.n_entities}, relations={self.n_relations}, triples={self.n_triples})"


def ingest_triples(lines: Iterable[str]) -> KnowledgeGraph:
    """Build a graph from tab-separated ``subject<TAB>relation<TAB>object`` lines.

    Blank lines are skipped; duplicates collapse.
    """
    def records():
        for lineno, line in enumerate(lines, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise KGError(f"line {lineno}: expected 3 tab-separated fields, got {len(fields)}")
            if not all(fields):
                raise KGError(f"line {lineno}: empty label")
            yield fields[0], fields[1], fields[2]

    graph = KnowledgeGraph.from_labeled(records())
    logger.info("ingested %d entities, %d relations, %d triples",
                graph.n_entities, graph.n_relations, graph.n_triples)
    return graph


def load_tsv(path: str | Path) -> KnowledgeGraph:
    with open(path, encoding="utf-8") as fh:
        return ingest_triples(fh)


def snapshot_save(graph: KnowledgeGraph, sink: BinaryIO) -> None:
    header = json.dumps({
        "entities": graph.entities.labels,
        "relations": graph.relations.labels,
        "n_triples": graph.n_triples,
    }, ensure_ascii=False).encode("utf-8")
    arr = np.array([tuple(t) for t in graph.triples()], dtype="<i8").reshape(-1, 3)
    sink.write(SNAPSHOT_MAGIC)
    sink.write(struct.pack("<BQ", SNAPSHOT_VERSION, len(header)))
    sink.write(header)
    sink.write(arr.tobytes())


def snapshot_load(source: BinaryIO) -> KnowledgeGraph:
    magic = source.read(len(SNAPSHOT_MAGIC))
    if magic != SNAPSHOT_MAGIC:
        raise KGError("not a graph snapshot (bad magic)")
    head = source.read(9)
    if len(head) < 9:
        raise KGError("truncated snapshot header")
    version, header_len = struct.unpack("<BQ", head)
    if version != SNAPSHOT_VERSION:
        raise KGError(f"snapshot version mismatch: file has {version}, expected {SNAPSHOT_VERSION}")
    raw = source.read(header_len)
    if len(raw) < header_len:
        raise KGError("truncated snapshot header")
    header = json.loads(raw.decode("utf-8"))
    n = header["n_triples"]
    body = source.read(n * 3 * 8)
    if len(body) < n * 3 * 8:
        raise KGError(f"truncated snapshot body: expected {n} triples")
    arr = np.frombuffer(body, dtype="<i8").reshape(-1, 3)
    return KnowledgeGraph(Interner(header["entities"]), Interner(header["relations"]),
                          (tuple(int(x) for x in row) for row in arr))


def save_snapshot(graph: KnowledgeGraph, path: str | Path) -> None:
    with open(path, "wb") as fh:
        snapshot_save(graph, fh)


def load_snapshot(path: str | Path) -> KnowledgeGraph:
    with open(path, "rb") as fh:
        return snapshot_load(fh)
