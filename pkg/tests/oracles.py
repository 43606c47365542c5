"""Brute-force reference implementations used by the unit and acceptance tests."""
from __future__ import annotations

import itertools
import math

from gsr.kg import KnowledgeGraph


def flat_triples(g: KnowledgeGraph) -> list[tuple[int, int, int]]:
    return [tuple(t) for t in g.triples()]


def dfs_paths(g: KnowledgeGraph, topic: int, chain, bidirectional: bool):
    """Every (entities, hops) walk realising ``chain``, by scanning the flat triple list at each step."""
    flat = flat_triples(g)
    out = []

    def rec(ents, hops, depth):
        if depth == len(chain):
            out.append((tuple(ents), tuple(hops)))
            return
        r, here = chain[depth], ents[-1]
        for s, rr, o in flat:
            if rr != r:
                continue
            if s == here:
                rec(ents + [o], hops + [(r, "f")], depth + 1)
            if bidirectional and o == here:
                rec(ents + [s], hops + [(r, "i")], depth + 1)

    rec([topic], [], 0)
    return out


def dfs_terminals(g, topic, chain, bidirectional) -> set[int]:
    return {ents[-1] for ents, _ in dfs_paths(g, topic, chain, bidirectional)}


def floyd_warshall(g: KnowledgeGraph) -> list[list[float]]:
    n = g.n_entities
    d = [[math.inf] * n for _ in range(n)]
    for i in range(n):
        d[i][i] = 0
    for s, _, o in flat_triples(g):
        if s != o:
            d[s][o] = d[o][s] = 1
    for k in range(n):
        dk = d[k]
        for i in range(n):
            dik = d[i][k]
            if dik == math.inf:
                continue
            di = d[i]
            for j in range(n):
                if dik + dk[j] < di[j]:
                    di[j] = dik + dk[j]
    return d


def all_hop_sequences(g: KnowledgeGraph, src: int, tgt: int, length: int) -> set[tuple]:
    """Every directed-hop sequence of exactly ``length`` leading src -> tgt (brute force)."""
    flat = flat_triples(g)
    found = set()

    def rec(e, hops):
        if len(hops) == length:
            if e == tgt:
                found.add(tuple(hops))
            return
        for s, r, o in flat:
            if s == e:
                rec(o, hops + [(r, "f")])
            if o == e:
                rec(s, hops + [(r, "i")])

    rec(src, [])
    return found


def retrieval_prf(retrieved, gold):
    r, g = set(retrieved), set(gold)
    hit = sum(1 for x in r if x in g)
    p = hit / len(r) if r else 0.0
    rec = hit / len(g)
    f = 2 * p * rec / (p + rec) if p + rec else 0.0
    return p, rec, f


def all_chains(n_rel: int, max_len: int):
    for length in range(max_len + 1):
        yield from itertools.product(range(n_rel), repeat=length)
