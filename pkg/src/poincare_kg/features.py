"""Downstream features from trained embeddings.

Taxonomy concepts are represented by a frozen tangent-space table (log map of
the ball vectors at the origin) plus a trainable additive offset; all other
covariates get a randomly initialised trainable Euclidean table.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .manifold import log_map_origin
from .trainer import EmbeddingTable

log = logging.getLogger(__name__)

RESNET_EUCLIDEAN_DIM = 256
TRANSFORMER_EUCLIDEAN_DIM = 192


class FeatureError(ValueError):
    pass


@dataclass
class PatientRecord:
    patient_id: str
    concepts: list[str] = field(default_factory=list)
    covariates: list[str] = field(default_factory=list)
    age: float = 0.0
    sex: float = 0.0
    cci: float = 0.0
    label: int | None = None

    def __post_init__(self):
        # keep first occurrence, preserve order
        self.concepts = list(dict.fromkeys(self.concepts))
        self.covariates = list(dict.fromkeys(self.covariates))


@dataclass
class FeatureSpace:
    codes: tuple[str, ...]
    ball: np.ndarray
    frozen: np.ndarray
    offsets: np.ndarray
    euclidean_ids: tuple[str, ...]
    euclidean: np.ndarray

    def __post_init__(self):
        if self.frozen.shape != self.offsets.shape:
            raise FeatureError("offset table must match the frozen table's shape")
        self.frozen.setflags(write=False)
        self.ball.setflags(write=False)
        self._tax = {c: i for i, c in enumerate(self.codes)}
        self._euc = {c: i for i, c in enumerate(self.euclidean_ids)}

    @property
    def dim(self) -> int:
        return self.frozen.shape[1]

    def is_taxonomy(self, code: str) -> bool:
        return code in self._tax

    def is_euclidean(self, code: str) -> bool:
        return code in self._euc

    def tax_index(self, code: str) -> int:
        return self._tax[code]

    def euc_index(self, code: str) -> int:
        return self._euc[code]


def build_feature_space(
    table: EmbeddingTable,
    non_taxonomy_ids: Iterable[str] = (),
    rng: np.random.Generator | int | None = 0,
    euclidean_dim: int = RESNET_EUCLIDEAN_DIM,
    euclidean_scale: float = 0.1,
) -> FeatureSpace:
    if table.vectors.ndim != 2 or table.vectors.shape[1] != table.dim:
        raise FeatureError(f"embedding vectors have shape {table.vectors.shape}, expected dim {table.dim}")
    rng = np.random.default_rng(rng)
    ball = np.array(table.vectors, dtype=np.float64)
    frozen = log_map_origin(ball, table.config.epsilon)
    ids = tuple(c for c in dict.fromkeys(non_taxonomy_ids) if c not in table)
    euclidean = rng.normal(0.0, euclidean_scale, size=(len(ids), euclidean_dim))
    return FeatureSpace(tuple(table.codes), ball, frozen, np.zeros_like(frozen), ids, euclidean)


def effective_embedding(space: FeatureSpace, concept: str) -> np.ndarray:
    if space.is_taxonomy(concept):
        i = space.tax_index(concept)
        return space.frozen[i] + space.offsets[i]
    if space.is_euclidean(concept):
        return space.euclidean[space.euc_index(concept)].copy()
    raise KeyError(f"unknown concept {concept!r}")


def average_patient_vector(space: FeatureSpace, record: PatientRecord, domain: str = "tangent") -> np.ndarray:
    """Mean of the record's taxonomy embeddings; zero vector if it has none.

    ``domain="ball"`` averages raw ball coordinates first and log-maps the mean
    (offsets are still averaged in tangent space).
    """
    idx = [space.tax_index(c) for c in record.concepts if space.is_taxonomy(c)]
    if not idx:
        log.debug("record %s has no taxonomy concepts", record.patient_id)
        return np.zeros(space.dim)
    if domain == "tangent":
        return (space.frozen[idx] + space.offsets[idx]).mean(axis=0)
    if domain == "ball":
        return log_map_origin(space.ball[idx].mean(axis=0)) + space.offsets[idx].mean(axis=0)
    raise ValueError(f"unknown averaging domain {domain!r}")


def average_covariate_vector(space: FeatureSpace, record: PatientRecord) -> np.ndarray:
    ids = [c for c in record.covariates + record.concepts if space.is_euclidean(c)]
    if not ids:
        return np.zeros(space.euclidean.shape[1])
    return space.euclidean[[space.euc_index(c) for c in ids]].mean(axis=0)


def padded_sequence(space: FeatureSpace, record: PatientRecord, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Taxonomy tokens in record order, zero-padded to ``max_len``; mask marks real tokens."""
    tokens = [effective_embedding(space, c) for c in record.concepts if space.is_taxonomy(c)]
    if len(tokens) > max_len:
        raise FeatureError(f"record {record.patient_id} has {len(tokens)} concepts > max_len {max_len}")
    seq = np.zeros((max_len, space.dim))
    mask = np.zeros(max_len, dtype=bool)
    if tokens:
        seq[: len(tokens)] = tokens
        mask[: len(tokens)] = True
    return seq, mask


def cohort_max_len(space: FeatureSpace, records: Iterable[PatientRecord]) -> int:
    return max((sum(space.is_taxonomy(c) for c in r.concepts) for r in records), default=0)


# ------------------------------------------------------------- linear probe


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LinearProbe:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray
    n_iter: int = 0

    def decision(self, features) -> np.ndarray:
        x = (np.asarray(features, dtype=np.float64) - self.mean) / self.scale
        return x @ self.weights + self.bias

    def predict_proba(self, features) -> np.ndarray:
        return _sigmoid(self.decision(features))


def _check_probe_inputs(features, labels):
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise FeatureError("features must be (n, d) with one label per row")
    if len(y) < 2 or len(np.unique(y)) != 2 or not np.all((y == 0) | (y == 1)):
        raise FeatureError("need at least two examples covering both classes 0 and 1")
    if not np.all(np.isfinite(x)):
        raise FeatureError("non-finite features")
    return x, y


def linear_probe_train(
    features,
    labels,
    l2: float = 1e-4,
    tol: float = 1e-6,
    max_iter: int = 20000,
) -> LinearProbe:
    """Logistic regression by full-batch gradient descent on standardised features.

    The step size is ``1/L`` for the loss's Lipschitz constant, so descent is
    monotone; iteration stops once the gradient norm drops below ``tol``.
    """
    x, y = _check_probe_inputs(features, labels)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    z = (x - mean) / scale
    n, d = z.shape
    a = np.hstack((z, np.ones((n, 1))))
    lipschitz = 0.25 * np.linalg.norm(a, 2) ** 2 / n + l2
    step = 1.0 / lipschitz
    theta = np.zeros(d + 1)
    reg = np.full(d + 1, l2)
    reg[-1] = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        grad = a.T @ (_sigmoid(a @ theta) - y) / n + reg * theta
        if np.linalg.norm(grad) < tol:
            break
        theta -= step * grad
    return LinearProbe(theta[:-1], float(theta[-1]), mean, scale, it)


def fit_probe_with_offsets(
    space: FeatureSpace,
    records: Sequence[PatientRecord],
    labels,
    lr: float = 0.1,
    epochs: int = 200,
    l2: float = 1e-4,
) -> LinearProbe:
    """Jointly fit a logistic probe on averaged patient vectors and the additive offsets.

    Only ``space.offsets`` and the returned probe change; the frozen table is
    read-only.
    """
    y = np.asarray(labels, dtype=np.float64)
    if len(records) != len(y):
        raise FeatureError("one label per record required")
    rows = [[space.tax_index(c) for c in r.concepts if space.is_taxonomy(c)] for r in records]
    w = np.zeros(space.dim)
    b = 0.0
    n = len(records)
    for _ in range(epochs):
        x = np.array([(space.frozen[ix] + space.offsets[ix]).mean(axis=0) if ix else np.zeros(space.dim) for ix in rows])
        err = _sigmoid(x @ w + b) - y
        gw = x.T @ err / n + l2 * w
        gb = err.mean()
        g_off = np.zeros_like(space.offsets)
        for e, ix in zip(err, rows):
            if ix:
                np.add.at(g_off, ix, e * w / (len(ix) * n))
        w -= lr * gw
        b -= lr * gb
        space.offsets -= lr * (g_off + l2 * space.offsets)
    return LinearProbe(w, float(b), np.zeros(space.dim), np.ones(space.dim), epochs)


# ------------------------------------------------------------------- I/O


def _parse_sex(text: str) -> float:
    t = text.strip().lower()
    if t in ("m", "male"):
        return 1.0
    if t in ("f", "female"):
        return 0.0
    return float(t) if t else 0.0


def read_patients(stream) -> list[PatientRecord]:
    """Rows of ``patient_id,label,concept_list,covariate_list,age,sex,cci``; lists are ';'-separated."""
    records = []
    reader = csv.reader(stream)
    for lineno, row in enumerate(reader, start=1):
        if not row or row[0].startswith("#"):
            continue
        if lineno == 1 and row[0] == "patient_id":
            continue
        if len(row) != 7:
            raise FeatureError(f"patients line {lineno}: expected 7 fields, got {len(row)}")
        pid, label, concepts, covs, age, sex, cci = row
        try:
            records.append(PatientRecord(
                patient_id=pid,
                label=int(label) if label.strip() else None,
                concepts=[c for c in concepts.split(";") if c],
                covariates=[c for c in covs.split(";") if c],
                age=float(age) if age.strip() else 0.0,
                sex=_parse_sex(sex),
                cci=float(cci) if cci.strip() else 0.0,
            ))
        except ValueError as exc:
            raise FeatureError(f"patients line {lineno}: {exc}") from exc
    return records
