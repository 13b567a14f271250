"""Synthetic taxonomies and cohorts for desk-scale experiments."""

from __future__ import annotations

from collections import deque

import numpy as np

from .config import TrainingConfig
from .features import PatientRecord
from .hierarchy import KnowledgeGraph
from .manifold import project_to_ball
from .trainer import EmbeddingTable


def random_dag(n: int, rng: np.random.Generator, second_parent_prob: float = 0.2, prefix: str = "c") -> KnowledgeGraph:
    """Single-root DAG: node ``i`` attaches to a random earlier node, sometimes to two."""
    pairs = set()
    for i in range(1, n):
        pairs.add((int(rng.integers(i)), i))
        if i > 2 and rng.random() < second_parent_prob:
            pairs.add((int(rng.integers(i)), i))
    return KnowledgeGraph.from_pairs([f"{prefix}{i}" for i in range(n)], sorted(pairs))


def descendants(graph: KnowledgeGraph, root: int) -> set[int]:
    seen = {root}
    queue = deque([root])
    while queue:
        for c in graph.children[queue.popleft()]:
            if c not in seen:
                seen.add(c)
                queue.append(c)
    return seen


def subtree_cohort(
    graph: KnowledgeGraph,
    subtree_root: int,
    n_patients: int,
    rng: np.random.Generator,
    max_concepts: int = 4,
    label_noise: float = 0.05,
) -> tuple[list[PatientRecord], np.ndarray]:
    """Patients with 1..max_concepts random concepts; label = any concept under ``subtree_root``.

    Each label is flipped with probability ``label_noise``.
    """
    members = descendants(graph, subtree_root)
    pool = np.array([i for i in range(graph.n_nodes) if graph.parents[i]])
    records, labels = [], []
    for p in range(n_patients):
        k = int(rng.integers(1, max_concepts + 1))
        picked = rng.choice(pool, size=k, replace=False)
        y = int(any(int(i) in members for i in picked))
        if rng.random() < label_noise:
            y = 1 - y
        records.append(PatientRecord(
            patient_id=f"p{p}",
            concepts=[graph.codes[i] for i in picked],
            covariates=[f"drug{int(rng.integers(20))}"],
            age=float(rng.integers(45, 66)),
            sex=float(rng.integers(2)),
            cci=float(rng.integers(0, 5)),
            label=y,
        ))
        labels.append(y)
    return records, np.array(labels)


def random_table(codes, dim: int, rng: np.random.Generator, radius: float = 0.5) -> EmbeddingTable:
    """Isotropic random ball points with typical norm ``radius``."""
    vecs = project_to_ball(rng.normal(0.0, radius / np.sqrt(dim), size=(len(codes), dim)))
    return EmbeddingTable(tuple(codes), vecs, TrainingConfig(dim=dim))
