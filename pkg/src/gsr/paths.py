"""Chain execution, validity checks and shortest-path mining over a KnowledgeGraph."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Sequence

from .kg import Direction, KGError, KnowledgeGraph

MAX_PATHS = 10_000
MAX_FRONTIER = 100_000
MAX_SHORTEST = 1_000


class Traversal(str, Enum):
    FORWARD_ONLY = "forward_only"
    BIDIRECTIONAL = "bidirectional"


class DirectedHop(NamedTuple):
    relation: int | str
    direction: Direction


@dataclass(frozen=True)
class SubgraphId:
    topic: int
    chain: tuple[int, ...]


@dataclass(frozen=True)
class ReasoningPath:
    entities: tuple[int, ...]
    hops: tuple[DirectedHop, ...]

    def triples(self) -> list[tuple[int, int, int]]:
        """Stored (s, r, o) orientation of each hop."""
        out = []
        for i, hop in enumerate(self.hops):
            a, b = self.entities[i], self.entities[i + 1]
            out.append((a, hop.relation, b) if hop.direction is Direction.FORWARD else (b, hop.relation, a))
        return out


@dataclass
class PathConstrainedSubgraph:
    id: SubgraphId
    paths: list[ReasoningPath]
    terminals: set[int]
    truncated: bool = False


def _hop_options(traversal: Traversal) -> tuple[Direction, ...]:
    if Traversal(traversal) is Traversal.FORWARD_ONLY:
        return (Direction.FORWARD,)
    return (Direction.FORWARD, Direction.INVERSE)


def execute_chain(
    graph: KnowledgeGraph,
    sid: SubgraphId,
    traversal: Traversal | str = Traversal.BIDIRECTIONAL,
    max_paths: int = MAX_PATHS,
    max_frontier: int = MAX_FRONTIER,
) -> PathConstrainedSubgraph:
    """Walk ``sid.chain`` from ``sid.topic`` and collect every realised path.

    Terminals are propagated set-wise, so they stay exact when only the path
    list hits ``max_paths``. If the frontier itself exceeds ``max_frontier`` it
    is cut (lowest ids kept) and ``truncated`` is set.
    """
    graph._check_entity(sid.topic)
    for r in sid.chain:
        graph._check_relation(r)
    directions = _hop_options(traversal)
    truncated = False

    frontier = {sid.topic}
    paths = [ReasoningPath((sid.topic,), ())]
    for r in sid.chain:
        nxt: set[int] = set()
        for e in sorted(frontier):
            for d in directions:
                nxt.update(graph.neighbors(e, r, d))
        if len(nxt) > max_frontier:
            nxt = set(sorted(nxt)[:max_frontier])
            truncated = True
        frontier = nxt

        new_paths = []
        for p in paths:
            tail = p.entities[-1]
            for d in directions:
                for e in graph.neighbors(tail, r, d):
                    if e not in frontier:
                        continue
                    if len(new_paths) >= max_paths:
                        truncated = True
                        break
                    new_paths.append(ReasoningPath(p.entities + (e,), p.hops + (DirectedHop(r, d),)))
        paths = new_paths
        if not frontier:
            paths = []
            break

    return PathConstrainedSubgraph(sid, paths, frontier, truncated)


def is_valid_chain(
    graph: KnowledgeGraph,
    topic: int,
    chain: Sequence[int],
    traversal: Traversal | str = Traversal.BIDIRECTIONAL,
) -> bool:
    """True iff at least one walk completes the chain. Early-exit DFS."""
    graph._check_entity(topic)
    if any(not 0 <= r < graph.n_relations for r in chain):
        return False
    directions = _hop_options(traversal)
    n = len(chain)
    dead: set[tuple[int, int]] = set()

    stack = [(topic, 0)]
    while stack:
        e, depth = stack.pop()
        if depth == n:
            return True
        if (e, depth) in dead:
            continue
        dead.add((e, depth))
        for d in directions:
            for nb in graph.neighbors(e, chain[depth], d):
                if (nb, depth + 1) not in dead:
                    stack.append((nb, depth + 1))
    return False


def shortest_paths(
    graph: KnowledgeGraph,
    source: int,
    target: int,
    max_hops: int,
    limit: int = MAX_SHORTEST,
) -> list[tuple[DirectedHop, ...]]:
    """All distinct minimal-length directed-hop sequences from source to target.

    Every triple may be crossed in either direction; the direction is recorded.
    Returns ``[]`` when the distance exceeds ``max_hops``.
    """
    graph._check_entity(source)
    graph._check_entity(target)
    if max_hops < 1:
        raise KGError("max_hops must be >= 1")
    if source == target:
        return [()]

    dist = {source: 0}
    preds: dict[int, set[tuple[int, DirectedHop]]] = {}
    queue = deque([source])
    while queue:
        e = queue.popleft()
        de = dist[e]
        if de >= max_hops or (target in dist and de >= dist[target]):
            break
        steps = [(o, DirectedHop(r, Direction.FORWARD)) for r, o in graph.out_edges(e)]
        steps += [(s, DirectedHop(r, Direction.INVERSE)) for r, s in graph.in_edges(e)]
        for nb, hop in steps:
            dn = dist.get(nb)
            if dn is None:
                dist[nb] = de + 1
                preds[nb] = {(e, hop)}
                queue.append(nb)
            elif dn == de + 1:
                preds[nb].add((e, hop))

    if target not in dist:
        return []

    # walk predecessor DAG backwards; dedupe by hop sequence
    found: set[tuple[DirectedHop, ...]] = set()
    stack: list[tuple[int, tuple[DirectedHop, ...]]] = [(target, ())]
    seen: set[tuple[int, tuple[DirectedHop, ...]]] = set()
    while stack:
        e, suffix = stack.pop()
        if (e, suffix) in seen:
            continue
        seen.add((e, suffix))
        if e == source:
            found.add(suffix)
            if len(found) >= limit:
                break
            continue
        for prev, hop in sorted(preds[e], key=lambda x: (x[0], x[1].relation, x[1].direction.value)):
            stack.append((prev, (hop,) + suffix))
    return sorted(found, key=lambda seq: [(h.relation, h.direction.value) for h in seq])


def chain_relations(hops: Sequence[DirectedHop]) -> tuple:
    return tuple(h.relation for h in hops)


def follow_hops(graph: KnowledgeGraph, topic: int, hops: Sequence[DirectedHop]) -> set[int]:
    """Entities reached by walking ``hops`` honouring each recorded direction."""
    frontier = {topic}
    for hop in hops:
        nxt: set[int] = set()
        for e in frontier:
            nxt.update(graph.neighbors(e, hop.relation, hop.direction))
        frontier = nxt
    return frontier
