"""Concept hierarchy: edge-list parsing, ancestral subtree extraction, adjacency queries."""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np


class GraphError(ValueError):
    pass


class ParseError(GraphError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """Directed multi-parent DAG over interned concept ids.

    ``codes[i]`` is the external code of node ``i``; ``edges`` is an ``(E, 2)``
    int array of ``(parent, child)`` index pairs.
    """

    codes: tuple[str, ...]
    edges: np.ndarray
    parents: tuple[tuple[int, ...], ...] = field(repr=False)
    children: tuple[tuple[int, ...], ...] = field(repr=False)
    index: dict = field(repr=False, compare=False)

    @classmethod
    def from_pairs(cls, codes: Sequence[str], pairs: Iterable[tuple[int, int]]) -> "KnowledgeGraph":
        codes = tuple(codes)
        n = len(codes)
        seen = set()
        ordered = []
        for p, c in pairs:
            p, c = int(p), int(c)
            if p == c:
                raise GraphError(f"self-loop on {codes[p]!r}")
            if not (0 <= p < n and 0 <= c < n):
                raise GraphError(f"edge endpoint out of range: ({p}, {c})")
            if (p, c) not in seen:
                seen.add((p, c))
                ordered.append((p, c))
        parents: list[list[int]] = [[] for _ in range(n)]
        children: list[list[int]] = [[] for _ in range(n)]
        for p, c in ordered:
            parents[c].append(p)
            children[p].append(c)
        edges = np.array(ordered, dtype=np.int64).reshape(-1, 2)
        edges.setflags(write=False)
        index = {code: i for i, code in enumerate(codes)}
        if len(index) != n:
            raise GraphError("duplicate concept codes")
        graph = cls(
            codes=codes,
            edges=edges,
            parents=tuple(tuple(p) for p in parents),
            children=tuple(tuple(c) for c in children),
            index=index,
        )
        graph._check_acyclic()
        return graph

    @property
    def n_nodes(self) -> int:
        return len(self.codes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def __len__(self) -> int:
        return self.n_nodes

    def id_of(self, code: str) -> int:
        try:
            return self.index[code]
        except KeyError:
            raise KeyError(f"unknown concept {code!r}") from None

    def roots(self) -> list[int]:
        return [i for i, p in enumerate(self.parents) if not p]

    def has_edge(self, u: int, v: int) -> bool:
        self._check_id(u)
        self._check_id(v)
        return v in self.children[u]

    def neighbors(self, u: int, directed: bool) -> np.ndarray:
        """Nodes ``w`` with ``is_connected(u, w, directed)`` true, sorted."""
        nb = set(self.children[u])
        if not directed:
            nb.update(self.parents[u])
        return np.array(sorted(nb), dtype=np.int64)

    def digest(self) -> str:
        h = hashlib.sha256()
        for p, c in sorted((self.codes[p], self.codes[c]) for p, c in self.edges):
            h.update(f"{p}\t{c}\n".encode())
        for code in sorted(self.codes):
            h.update(f"{code}\n".encode())
        return h.hexdigest()

    def _check_id(self, u: int) -> None:
        if not 0 <= u < self.n_nodes:
            raise KeyError(f"unknown concept id {u}")

    def _check_acyclic(self) -> None:
        indeg = np.array([len(p) for p in self.parents], dtype=np.int64)
        queue = deque(np.flatnonzero(indeg == 0).tolist())
        visited = 0
        while queue:
            u = queue.popleft()
            visited += 1
            for c in self.children[u]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if visited != self.n_nodes:
            stuck = [self.codes[i] for i in np.flatnonzero(indeg > 0)[:5]]
            raise GraphError(f"hierarchy contains a cycle (involving e.g. {stuck})")


def parse_edge_list(stream: TextIO | Iterable[str]) -> KnowledgeGraph:
    """Read ``parent<TAB>child`` lines. Blank lines and ``#`` comments are skipped."""
    codes: list[str] = []
    index: dict[str, int] = {}
    pairs = []

    def intern(code: str) -> int:
        i = index.get(code)
        if i is None:
            i = index[code] = len(codes)
            codes.append(code)
        return i

    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(lineno, f"expected 2 tab-separated fields, got {len(fields)}")
        parent, child = (f.strip() for f in fields)
        if not parent or not child:
            raise ParseError(lineno, "empty concept code")
        if parent == child:
            raise ParseError(lineno, f"self-loop on {parent!r}")
        pairs.append((intern(parent), intern(child)))
    return KnowledgeGraph.from_pairs(codes, pairs)


def resolve_observed(graph: KnowledgeGraph, codes: Iterable[str]) -> tuple[frozenset[int], list[str]]:
    """Map observed codes to node ids. Returns ``(observed_ids, unresolved_codes)``."""
    observed = set()
    unresolved = []
    for code in codes:
        code = code.strip()
        if not code or code.startswith("#"):
            continue
        i = graph.index.get(code)
        if i is None:
            unresolved.append(code)
        else:
            observed.add(i)
    return frozenset(observed), unresolved


def ancestors_closure(graph: KnowledgeGraph, observed: Iterable[int]) -> set[int]:
    keep = set()
    queue = deque()
    for u in observed:
        graph._check_id(u)
        if u not in keep:
            keep.add(u)
            queue.append(u)
    while queue:
        u = queue.popleft()
        for p in graph.parents[u]:
            if p not in keep:
                keep.add(p)
                queue.append(p)
    return keep


def extract_ancestral_subtree(graph: KnowledgeGraph, observed: Iterable[int]) -> KnowledgeGraph:
    """Observed concepts plus every ancestor, with all edges among retained nodes.

    Node order follows the input graph, so the result is stable across runs.
    """
    observed = list(observed)
    if not observed:
        raise GraphError("observed set is empty: nothing to embed")
    keep = sorted(ancestors_closure(graph, observed))
    remap = {old: new for new, old in enumerate(keep)}
    pairs = [(remap[p], remap[c]) for p, c in graph.edges.tolist() if p in remap and c in remap]
    return KnowledgeGraph.from_pairs([graph.codes[i] for i in keep], pairs)


def is_connected(graph: KnowledgeGraph, u: int, v: int, directed: bool) -> bool:
    if directed:
        return graph.has_edge(u, v)
    return graph.has_edge(u, v) or graph.has_edge(v, u)


def balanced_tree(branching: int, depth: int, prefix: str = "n") -> KnowledgeGraph:
    """Complete tree with ``depth`` levels below the root (1 + b + ... + b**depth nodes)."""
    codes = [f"{prefix}0"]
    pairs = []
    frontier = [0]
    for _ in range(depth):
        nxt = []
        for p in frontier:
            for _ in range(branching):
                c = len(codes)
                codes.append(f"{prefix}{c}")
                pairs.append((p, c))
                nxt.append(c)
        frontier = nxt
    return KnowledgeGraph.from_pairs(codes, pairs)


def write_edge_list(graph: KnowledgeGraph, stream: TextIO) -> None:
    for p, c in graph.edges.tolist():
        stream.write(f"{graph.codes[p]}\t{graph.codes[c]}\n")
