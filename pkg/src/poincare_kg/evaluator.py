"""Mean-rank evaluation, hyperparameter sweeps, and AUROC / calibration metrics."""

from __future__ import annotations

import csv
import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .config import PAPER_BURN_INS, PAPER_DIMS, PAPER_NEGATIVES, TrainingConfig
from .hierarchy import KnowledgeGraph
from .manifold import distance_grad_unchecked
from .trainer import EmbeddingTable, NegativeSampler, train

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("dim", "burn_in_epochs", "negatives_k", "directed", "mean_rank", "wall_time_s")


class MetricError(ValueError):
    pass


# ---------------------------------------------------------------- mean rank


@dataclass(frozen=True)
class CandidatePolicy:
    """``all`` ranks against every non-neighbour; ``sampled`` draws ``k`` of them per edge."""

    kind: str = "all"
    k: int = 0

    @classmethod
    def parse(cls, text: str) -> "CandidatePolicy":
        text = text.strip()
        if text == "all":
            return cls("all")
        if text.startswith("sampled:"):
            k = int(text.split(":", 1)[1])
            if k < 1:
                raise ValueError("sampled:<k> needs k >= 1")
            return cls("sampled", k)
        raise ValueError(f"unknown candidate policy {text!r} (expected 'all' or 'sampled:<k>')")

    def __str__(self) -> str:
        return "all" if self.kind == "all" else f"sampled({self.k})"


@dataclass
class RankReport:
    mean_rank: float
    ranks: list[int]
    evaluated_edges: int
    candidate_policy: str

    def to_dict(self) -> dict:
        return {
            "mean_rank": self.mean_rank,
            "evaluated_edges": self.evaluated_edges,
            "candidate_policy": self.candidate_policy,
            "ranks": self.ranks,
        }


def _edge_rank(vecs, u, v, candidates) -> int:
    # pessimistic ties: equal-distance candidates rank ahead of the true item
    d, _, _ = distance_grad_unchecked(vecs[u], vecs[np.concatenate(([v], candidates))])
    return 1 + int(np.count_nonzero(d[1:] <= d[0]))


def mean_rank(
    graph: KnowledgeGraph,
    table: EmbeddingTable | np.ndarray,
    policy: CandidatePolicy | str = "all",
    seed: int = 0,
    threads: int = 1,
) -> RankReport:
    """Rank each true child among ``{v}`` plus all nodes unconnected to ``u`` (undirected)."""
    if isinstance(policy, str):
        policy = CandidatePolicy.parse(policy)
    vecs = table.aligned(graph) if isinstance(table, EmbeddingTable) else np.asarray(table, dtype=np.float64)
    if vecs.shape[0] != graph.n_nodes:
        raise KeyError(f"table has {vecs.shape[0]} rows for {graph.n_nodes} nodes")
    sampler = NegativeSampler(graph, directed=False)
    edges = graph.edges.tolist()
    if not edges:
        raise MetricError("graph has no edges to evaluate")
    edge_seeds = np.random.SeedSequence(seed).spawn(len(edges)) if policy.kind == "sampled" else None

    def rank_of(i):
        u, v = edges[i]
        if policy.kind == "all":
            cands = sampler.eligible(u)
        else:
            cands = sampler.sample(u, policy.k, np.random.default_rng(edge_seeds[i]))
        return _edge_rank(vecs, u, v, cands)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            ranks = list(pool.map(rank_of, range(len(edges))))
    else:
        ranks = [rank_of(i) for i in range(len(edges))]
    return RankReport(float(np.mean(ranks)), ranks, len(ranks), str(policy))


# ------------------------------------------------------------------- sweep


@dataclass(frozen=True)
class GridSpec:
    dims: tuple[int, ...] = PAPER_DIMS
    burn_in_epochs: tuple[int, ...] = PAPER_BURN_INS
    negatives_k: tuple[int, ...] = PAPER_NEGATIVES
    directed: tuple[bool, ...] = (True, False)

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        aliases = {"dim": "dims", "dims": "dims", "burn_in_epochs": "burn_in_epochs",
                   "negatives_k": "negatives_k", "directed": "directed"}
        kwargs = {}
        for key, values in data.items():
            if key not in aliases:
                raise ValueError(f"unknown grid axis {key!r}")
            if not isinstance(values, list):
                values = [values]
            kwargs[aliases[key]] = tuple(values)
        return cls(**kwargs)

    def cells(self) -> list[tuple[int, int, int, bool]]:
        return list(itertools.product(self.dims, self.burn_in_epochs, self.negatives_k, self.directed))

    def __len__(self) -> int:
        return len(self.dims) * len(self.burn_in_epochs) * len(self.negatives_k) * len(self.directed)


@dataclass
class SweepRow:
    dim: int
    burn_in_epochs: int
    negatives_k: int
    directed: bool
    mean_rank: float
    wall_time_s: float
    error: str | None = None


@dataclass
class SweepReport:
    rows: list[SweepRow] = field(default_factory=list)
    candidate_policy: str = "all"

    def write_csv(self, path_or_stream) -> None:
        own = isinstance(path_or_stream, (str, bytes)) or hasattr(path_or_stream, "__fspath__")
        fh = open(path_or_stream, "w", newline="", encoding="utf-8") if own else path_or_stream
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                w.writerow([r.dim, r.burn_in_epochs, r.negatives_k, str(r.directed).lower(),
                            repr(r.mean_rank), f"{r.wall_time_s:.3f}"])
        finally:
            if own:
                fh.close()

    def failures(self) -> list[tuple[int, str]]:
        return [(i, r.error) for i, r in enumerate(self.rows) if r.error]


def _run_cell(graph, base: TrainingConfig, cell, policy: CandidatePolicy) -> SweepRow:
    dim, burn_in, k, directed = cell
    start = time.perf_counter()
    try:
        cfg = base.with_(dim=dim, burn_in_epochs=burn_in, negatives_k=k, directed=directed)
        table = train(graph, cfg)
        mr = mean_rank(graph, table, policy, seed=base.seed).mean_rank
        err = None
    except Exception as exc:  # recorded per row; the sweep continues
        log.warning("sweep cell %s failed: %s", cell, exc)
        mr, err = float("nan"), f"{type(exc).__name__}: {exc}"
    return SweepRow(dim, burn_in, k, directed, mr, time.perf_counter() - start, err)


def run_sweep(
    graph: KnowledgeGraph,
    grid: GridSpec,
    base: TrainingConfig,
    policy: CandidatePolicy | str = "all",
    workers: int = 1,
) -> SweepReport:
    """Train and evaluate one embedding per grid cell, all with ``base.seed``.

    Rows come back in grid order (dim, burn-in, negatives, directedness) for any
    worker count.
    """
    if isinstance(policy, str):
        policy = CandidatePolicy.parse(policy)
    cells = grid.cells()
    if not cells:
        raise ValueError("empty hyperparameter grid")
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_run_cell, itertools.repeat(graph), itertools.repeat(base), cells,
                                 itertools.repeat(policy)))
    else:
        rows = [_run_cell(graph, base, c, policy) for c in cells]
    return SweepReport(rows, str(policy))


# --------------------------------------------------------- prediction metrics


def _check_preds(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError("scores and labels must be 1-d arrays of equal length")
    if not np.all(np.isfinite(scores)):
        raise MetricError("non-finite prediction")
    if not np.all((labels == 0) | (labels == 1)):
        raise MetricError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUROC: P(random positive outscores random negative), ties count 1/2."""
    scores, labels = _check_preds(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC undefined for single-class labels")
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def calibration_eavg(probs: Sequence[float], labels: Sequence[int], n_bins: int = 10) -> float:
    """Count-weighted mean of ``|observed rate - mean prediction|`` over equal-count bins."""
    probs, labels = _check_preds(probs, labels)
    if n_bins < 1:
        raise MetricError("n_bins must be >= 1")
    if len(probs) == 0:
        raise MetricError("no predictions")
    if np.any((probs < 0) | (probs > 1)):
        raise MetricError("probabilities must lie in [0, 1]")
    order = np.argsort(probs, kind="stable")
    total = 0.0
    n = len(probs)
    for idx in np.array_split(order, min(n_bins, n)):
        total += len(idx) / n * abs(labels[idx].mean() - probs[idx].mean())
    return float(total)


def expected_random_mean_rank(graph: KnowledgeGraph) -> float:
    """Mean rank of a uniformly random ranking: average of ``(m + 1) / 2`` over edges."""
    sampler = NegativeSampler(graph, directed=False)
    m = [len(sampler.eligible(u)) + 1 for u, _ in graph.edges.tolist()]
    return float(np.mean([(x + 1) / 2.0 for x in m]))


def read_predictions(stream: Iterable[str]) -> tuple[np.ndarray, np.ndarray]:
    reader = csv.DictReader(stream)
    if reader.fieldnames is None or set(reader.fieldnames) != {"prediction", "label"}:
        raise MetricError("prediction CSV needs header 'prediction,label'")
    preds, labels = [], []
    for row in reader:
        preds.append(float(row["prediction"]))
        labels.append(int(row["label"]))
    return np.array(preds), np.array(labels)
