"""File formats: embedding/tangent TSV, JSON sidecars and run manifests."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, TrainingConfig
from .trainer import EmbeddingTable


class FormatError(ValueError):
    pass


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sidecar(path: str | Path, suffix: str) -> Path:
    return Path(f"{os.fspath(path)}.{suffix}")


def write_json(path: str | Path, data) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_vectors_tsv(path, codes, vectors: np.ndarray, prefix: str = "x") -> None:
    dim = vectors.shape[1]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(["concept_id"] + [f"{prefix}{i}" for i in range(dim)]) + "\n")
        for code, row in zip(codes, vectors):
            fh.write(code + "\t" + "\t".join(_fmt(v) for v in row) + "\n")


def read_vectors_tsv(path, prefix: str = "x") -> tuple[list[str], np.ndarray]:
    codes, rows = [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if not header or header[0] != "concept_id" or len(header) < 2:
            raise FormatError(f"{path}: missing 'concept_id' header")
        dim = len(header) - 1
        if header[1:] != [f"{prefix}{i}" for i in range(dim)]:
            raise FormatError(f"{path}: unexpected column names {header[1:4]}...")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != dim + 1:
                raise FormatError(f"{path} line {lineno}: expected {dim + 1} fields, got {len(fields)}")
            try:
                rows.append([float(v) for v in fields[1:]])
            except ValueError as exc:
                raise FormatError(f"{path} line {lineno}: {exc}") from exc
            codes.append(fields[0])
    if len(set(codes)) != len(codes):
        raise FormatError(f"{path}: duplicate concept ids")
    vecs = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    if not np.all(np.isfinite(vecs)):
        raise FormatError(f"{path}: non-finite values")
    return codes, vecs


def save_embedding(table: EmbeddingTable, path) -> None:
    write_vectors_tsv(path, table.codes, table.vectors)
    write_json(sidecar(path, "meta.json"), table.metadata())


def load_embedding(path) -> EmbeddingTable:
    codes, vecs = read_vectors_tsv(path)
    meta_path = sidecar(path, "meta.json")
    meta = {}
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{meta_path}: {exc}") from exc
    try:
        cfg = TrainingConfig.from_dict(meta["config"]) if "config" in meta else TrainingConfig(dim=vecs.shape[1])
    except ConfigError as exc:
        raise FormatError(f"{meta_path}: {exc}") from exc
    if cfg.dim != vecs.shape[1]:
        raise FormatError(f"{path}: {vecs.shape[1]} columns but metadata says dim {cfg.dim}")
    norms = np.sqrt((vecs**2).sum(axis=1))
    if np.any(norms >= 1.0):
        raise FormatError(f"{path}: vectors outside the unit ball")
    return EmbeddingTable(
        tuple(codes), vecs, cfg,
        graph_digest=meta.get("graph_digest", ""),
        final_loss=float(meta.get("final_loss", float("nan"))),
        epochs=int(meta.get("epochs", 0)),
    )


def write_manifest(out_path, command: str, inputs: dict, outputs: list, seed=None, config_digest=None, extra=None) -> Path:
    """Manifest next to ``out_path``. Only content-derived fields, so reruns are byte-identical."""
    manifest = {
        "command": command,
        "toolkit_version": __version__,
        "seed": seed,
        "config_digest": config_digest,
        "inputs": {k: {"path": os.path.basename(v), "sha256": file_digest(v)} for k, v in inputs.items()},
        "outputs": {os.path.basename(p): file_digest(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = sidecar(out_path, "manifest.json")
    write_json(path, manifest)
    return path
