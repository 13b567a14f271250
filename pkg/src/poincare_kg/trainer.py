"""Riemannian SGD training of Poincaré embeddings with sampled negatives."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import TrainingConfig
from .hierarchy import KnowledgeGraph
from .manifold import DomainError, check_ball, distance_grad_unchecked, project_to_ball, riemannian_rescale, sqnorm

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class DegenerateGraphError(TrainingError):
    pass


@dataclass
class EmbeddingTable:
    codes: tuple[str, ...]
    vectors: np.ndarray
    config: TrainingConfig
    graph_digest: str = ""
    final_loss: float = float("nan")
    epochs: int = 0
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.shape != (len(self.codes), self.config.dim):
            raise ValueError(
                f"vectors shape {self.vectors.shape} does not match {len(self.codes)} codes x dim {self.config.dim}"
            )
        self._index = {c: i for i, c in enumerate(self.codes)}

    @property
    def dim(self) -> int:
        return self.config.dim

    def __len__(self) -> int:
        return len(self.codes)

    def __contains__(self, code: str) -> bool:
        return code in self._index

    def vector(self, code: str) -> np.ndarray:
        return self.vectors[self._index[code]]

    def aligned(self, graph: KnowledgeGraph) -> np.ndarray:
        """Vectors in ``graph`` node order; raises ``KeyError`` listing uncovered codes."""
        missing = [c for c in graph.codes if c not in self._index]
        if missing:
            raise KeyError(f"embedding lacks {len(missing)} graph node(s): {missing[:20]}")
        return self.vectors[[self._index[c] for c in graph.codes]]

    def metadata(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "final_loss": self.final_loss,
            "epochs": self.epochs,
            "graph_digest": self.graph_digest,
            "n_nodes": len(self.codes),
        }


@dataclass(frozen=True)
class NegativeSample:
    anchor: int
    sampled: np.ndarray


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    learning_rate: float


def init_embeddings(graph: KnowledgeGraph, config: TrainingConfig, rng: np.random.Generator | None = None) -> EmbeddingTable:
    if graph.n_nodes == 0:
        raise DegenerateGraphError("graph has no nodes")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    r = config.init_range
    vectors = rng.uniform(-r, r, size=(graph.n_nodes, config.dim))
    return EmbeddingTable(graph.codes, vectors, config, graph_digest=graph.digest())


class NegativeSampler:
    """Uniform sampling without replacement from nodes not connected to the anchor.

    The anchor itself is never sampled. Exclusion lists are built lazily and cached.
    """

    def __init__(self, graph: KnowledgeGraph, directed: bool):
        self.graph = graph
        self.directed = directed
        self._excluded: list[Optional[np.ndarray]] = [None] * graph.n_nodes

    def excluded(self, u: int) -> np.ndarray:
        ex = self._excluded[u]
        if ex is None:
            ex = np.union1d(self.graph.neighbors(u, self.directed), [u])
            self._excluded[u] = ex
        return ex

    def eligible(self, u: int) -> np.ndarray:
        return np.setdiff1d(np.arange(self.graph.n_nodes), self.excluded(u), assume_unique=True)

    def sample(self, u: int, k: int, rng: np.random.Generator) -> np.ndarray:
        n = self.graph.n_nodes
        ex = self.excluded(u)
        n_eligible = n - len(ex)
        if n_eligible <= 0:
            raise DegenerateGraphError(f"node {self.graph.codes[u]!r} has no non-neighbours to sample")
        if k >= n_eligible:
            return self.eligible(u)
        if n_eligible * 2 < n or n <= 4 * k:
            return rng.choice(self.eligible(u), size=k, replace=False)
        # first k distinct eligible draws of an iid stream form a uniform k-subset
        got = np.empty(0, dtype=np.int64)
        while len(got) < k:
            draw = rng.integers(0, n, size=2 * k)
            cand = np.concatenate((got, draw[~np.isin(draw, ex)]))
            _, first = np.unique(cand, return_index=True)
            got = cand[np.sort(first)][:k]
        return got


def sample_negatives(graph: KnowledgeGraph, u: int, config: TrainingConfig, rng: np.random.Generator) -> NegativeSample:
    sampler = NegativeSampler(graph, config.directed)
    return NegativeSample(u, sampler.sample(u, config.negatives_k, rng))


def _loss_and_grads(vecs: np.ndarray, u: int, v: int, negs: np.ndarray, include_self: bool):
    """Cross-entropy of ``v`` against ``negs`` for anchor ``u``.

    Returns ``(loss, rows, grads)`` where ``rows = [u, v, *negs]`` and ``grads``
    holds the matching Euclidean gradients.
    """
    targets = np.concatenate(([v], negs))
    dist, gu, gt = distance_grad_unchecked(vecs[u], vecs[targets])
    logits = -dist
    shift = logits.max()
    if include_self:
        # d(u, u) = 0 contributes a constant exp(0) competitor
        shift = max(shift, 0.0)
    ex = np.exp(logits - shift)
    denom = ex.sum() + (np.exp(-shift) if include_self else 0.0)
    probs = ex / denom
    loss = dist[0] + shift + np.log(denom)
    dl_dd = -probs
    dl_dd[0] += 1.0
    grad_u = dl_dd @ gu
    grad_t = dl_dd[:, None] * gt
    rows = np.concatenate(([u], targets))
    grads = np.vstack((grad_u[None, :], grad_t))
    return float(loss), rows, grads


def pair_loss(table: EmbeddingTable, u: int, v: int, negatives: NegativeSample) -> tuple[float, dict[int, np.ndarray]]:
    """Loss for one positive edge and the Euclidean gradient for each involved node."""
    if u == v:
        raise ValueError("invalid edge: u == v")
    if negatives.anchor != u:
        raise ValueError("negative sample anchored at a different node")
    loss, rows, grads = _loss_and_grads(
        table.vectors, u, v, np.asarray(negatives.sampled, dtype=np.int64), table.config.include_self_in_denominator
    )
    return loss, {int(r): g for r, g in zip(rows, grads)}


def _apply_update(vecs: np.ndarray, rows: np.ndarray, grads: np.ndarray, lr: float, eps: float) -> None:
    if not np.all(np.isfinite(grads)):
        bad = rows[~np.all(np.isfinite(grads), axis=1)]
        raise TrainingError(f"non-finite gradient for rows {bad.tolist()}; norms {np.sqrt(sqnorm(vecs[bad])).tolist()}")
    old = vecs[rows]
    scale = ((1.0 - sqnorm(old)) ** 2 / 4.0)[:, None]
    vecs[rows] = project_to_ball(old - lr * scale * grads, eps)


def rsgd_step(table: EmbeddingTable, node: int, euclidean_grad, effective_lr: float) -> np.ndarray:
    grad = np.asarray(euclidean_grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite gradient for node {node}: {grad}")
    eps = table.config.epsilon
    old = check_ball(table.vectors[node], eps)
    new = project_to_ball(old - effective_lr * riemannian_rescale(old, grad, eps), eps)
    table.vectors[node] = new
    return new


def lr_schedule(config: TrainingConfig) -> list[float]:
    lr = config.learning_rate
    return [lr / 10.0 if e < config.burn_in_epochs else lr for e in range(config.epochs)]


def _run_edges(vecs, edges, order, sampler, config, lr, rng, check_containment) -> float:
    total = 0.0
    k = config.negatives_k
    include_self = config.include_self_in_denominator
    eps = config.epsilon
    for i in order:
        u, v = edges[i]
        negs = sampler.sample(u, k, rng)
        loss, rows, grads = _loss_and_grads(vecs, u, v, negs, include_self)
        if not np.isfinite(loss) or loss < 0:
            raise TrainingError(f"invalid loss {loss} on edge ({u}, {v})")
        _apply_update(vecs, rows, grads, lr, eps)
        if check_containment:
            try:
                check_ball(vecs[rows], eps)
            except DomainError as exc:
                raise TrainingError(f"containment violated after update of edge ({u}, {v}): {exc}") from exc
        total += loss
    return total


def train(
    graph: KnowledgeGraph,
    config: TrainingConfig,
    progress: Callable[[EpochStats], None] | None = None,
    threads: int = 1,
    check_containment: bool = False,
) -> EmbeddingTable:
    """Fit an embedding table.

    With ``threads == 1`` the result is a pure function of ``(graph, config)``.
    With more threads, each epoch's shuffled edges are split into shards that
    update the shared table concurrently without locks; results then vary
    between runs.
    """
    if graph.n_edges == 0:
        raise DegenerateGraphError("graph has no edges to train on")
    rng = np.random.default_rng(config.seed)
    table = init_embeddings(graph, config, rng)
    vecs = table.vectors
    edges = graph.edges.tolist()
    sampler = NegativeSampler(graph, config.directed)
    history = []
    for epoch, lr in enumerate(lr_schedule(config)):
        order = rng.permutation(len(edges))
        if threads <= 1:
            total = _run_edges(vecs, edges, order, sampler, config, lr, rng, check_containment)
        else:
            total = _run_parallel(vecs, edges, order, sampler, config, lr, epoch, threads, check_containment)
        mean = total / len(edges)
        history.append(mean)
        if progress is not None:
            progress(EpochStats(epoch, mean, lr))
        log.debug("epoch %d lr %.4g loss %.6f", epoch, lr, mean)
    table.loss_history = history
    table.final_loss = history[-1]
    table.epochs = config.epochs
    return table


def _run_parallel(vecs, edges, order, sampler, config, lr, epoch, threads, check_containment) -> float:
    shards = np.array_split(order, threads)
    seeds = np.random.SeedSequence([config.seed & (2**64 - 1), epoch]).spawn(threads)
    totals = [0.0] * threads
    errors: list[BaseException] = []

    def work(i):
        try:
            rng = np.random.default_rng(seeds[i])
            totals[i] = _run_edges(vecs, edges, shards[i], sampler, config, lr, rng, check_containment)
        except BaseException as exc:  # re-raised on the caller's thread
            errors.append(exc)

    workers = [threading.Thread(target=work, args=(i,)) for i in range(threads)]
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    if errors:
        raise errors[0]
    return sum(totals)
