"""Command-line pipelines: extract, train, sweep, eval, export-tangent, features."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, TrainingConfig
from .evaluator import CandidatePolicy, GridSpec, mean_rank, run_sweep
from .features import (
    RESNET_EUCLIDEAN_DIM,
    TRANSFORMER_EUCLIDEAN_DIM,
    FeatureError,
    average_covariate_vector,
    average_patient_vector,
    build_feature_space,
    cohort_max_len,
    padded_sequence,
    read_patients,
)
from .hierarchy import GraphError, KnowledgeGraph, extract_ancestral_subtree, parse_edge_list, resolve_observed, write_edge_list
from .io import FormatError, file_digest, load_embedding, save_embedding, sidecar, write_json, write_manifest, write_vectors_tsv
from .manifold import log_map_origin
from .trainer import TrainingError, train

log = logging.getLogger("poincare_kg")


class CLIError(Exception):
    pass


def _read_graph(path) -> KnowledgeGraph:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_edge_list(fh)
    except GraphError as exc:
        raise CLIError(f"{path}: {exc}") from exc


def _load_config(args) -> TrainingConfig:
    try:
        cfg = TrainingConfig.load(args.config) if args.config else TrainingConfig()
        if args.seed is not None:
            cfg = cfg.with_(seed=args.seed)
    except (ConfigError, TypeError) as exc:
        raise CLIError(str(exc)) from exc
    return cfg


def cmd_extract(args) -> None:
    graph = _read_graph(args.edges)
    with open(args.observed, encoding="utf-8") as fh:
        observed, unresolved = resolve_observed(graph, fh)
    if unresolved:
        print(f"warning: {len(unresolved)} observed code(s) not in hierarchy: {', '.join(unresolved[:20])}",
              file=sys.stderr)
    if not observed:
        raise CLIError("observed set is empty after resolution: nothing to extract")
    sub = extract_ancestral_subtree(graph, observed)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        write_edge_list(sub, fh)
    outputs = [out]
    meta = {
        "n_nodes": sub.n_nodes,
        "n_edges": sub.n_edges,
        "n_observed": len(observed),
        "n_unresolved": len(unresolved),
        "input_digest": file_digest(args.edges),
        "observed_digest": file_digest(args.observed),
        "graph_digest": sub.digest(),
    }
    write_json(sidecar(out, "meta.json"), meta)
    codes_path = sidecar(out, "codes.tsv")
    with open(codes_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("index\tconcept_id\n")
        for i, code in enumerate(sub.codes):
            fh.write(f"{i}\t{code}\n")
    outputs += [sidecar(out, "meta.json"), codes_path]
    if unresolved:
        unres_path = sidecar(out, "unresolved.txt")
        unres_path.write_text("".join(c + "\n" for c in unresolved), encoding="utf-8")
        outputs.append(unres_path)
    write_manifest(out, "extract", {"edges": args.edges, "observed": args.observed}, outputs)
    print(f"subtree: {sub.n_nodes} nodes, {sub.n_edges} edges ({len(observed)} observed)")


def cmd_train(args) -> None:
    cfg = _load_config(args)
    graph = _read_graph(args.edges)
    start = time.perf_counter()

    def progress(stats):
        log.info("epoch %d  lr %.4g  loss %.6f", stats.epoch, stats.learning_rate, stats.mean_loss)

    try:
        table = train(graph, cfg, progress=progress, threads=args.threads)
    except TrainingError as exc:
        raise CLIError(f"training failed: {exc}") from exc
    out = Path(args.out)
    save_embedding(table, out)
    inputs = {"edges": args.edges}
    if args.config:
        inputs["config"] = args.config
    write_manifest(out, "train", inputs, [out, sidecar(out, "meta.json")], seed=cfg.seed,
                   config_digest=cfg.digest(), extra={"threads": args.threads, "deterministic": args.threads <= 1})
    # timing lives outside the manifest so deterministic reruns stay byte-identical
    write_json(sidecar(out, "timing.json"), {"wall_time_s": time.perf_counter() - start})
    print(f"trained {graph.n_nodes} nodes, dim {cfg.dim}, final loss {table.final_loss:.6f}")


def cmd_sweep(args) -> None:
    base = _load_config(args)
    graph = _read_graph(args.edges)
    try:
        with open(args.grid, encoding="utf-8") as fh:
            grid = GridSpec.from_dict(json.load(fh))
    except (ValueError, TypeError) as exc:
        raise CLIError(f"{args.grid}: {exc}") from exc
    if len(grid) == 0:
        raise CLIError("empty hyperparameter grid")
    report = run_sweep(graph, grid, base, CandidatePolicy.parse(args.candidate_policy), workers=args.threads)
    out = Path(args.out)
    report.write_csv(out)
    inputs = {"edges": args.edges, "grid": args.grid}
    if args.config:
        inputs["config"] = args.config
    failures = [{"row": i, "error": e} for i, e in report.failures()]
    write_manifest(out, "sweep", inputs, [out], seed=base.seed, config_digest=base.digest(),
                   extra={"rows": len(report.rows), "failures": failures, "candidate_policy": report.candidate_policy})
    print(f"sweep: {len(report.rows)} rows, {len(failures)} failed")


def cmd_eval(args) -> None:
    graph = _read_graph(args.edges)
    try:
        table = load_embedding(args.embedding)
    except FormatError as exc:
        raise CLIError(str(exc)) from exc
    missing = [c for c in graph.codes if c not in table]
    if missing:
        raise CLIError(f"embedding does not cover {len(missing)} graph node(s): {', '.join(missing[:50])}")
    report = mean_rank(graph, table, CandidatePolicy.parse(args.candidate_policy),
                       seed=args.seed if args.seed is not None else 0, threads=args.threads)
    data = report.to_dict()
    if args.out:
        out = Path(args.out)
        write_json(out, data)
        write_manifest(out, "eval", {"edges": args.edges, "embedding": args.embedding}, [out], seed=args.seed)
    else:
        json.dump(data, sys.stdout, indent=2)
        sys.stdout.write("\n")
    print(f"mean rank {report.mean_rank:.4f} over {report.evaluated_edges} edges ({report.candidate_policy})",
          file=sys.stderr)


def cmd_export_tangent(args) -> None:
    try:
        table = load_embedding(args.embedding)
        tangent = log_map_origin(table.vectors, table.config.epsilon)
    except (FormatError, ValueError) as exc:
        raise CLIError(f"{args.embedding}: {exc}") from exc
    out = Path(args.out)
    write_vectors_tsv(out, table.codes, tangent, prefix="t")
    write_manifest(out, "export-tangent", {"embedding": args.embedding}, [out])


def cmd_features(args) -> None:
    try:
        table = load_embedding(args.embedding)
        with open(args.patients, encoding="utf-8", newline="") as fh:
            records = read_patients(fh)
    except (FormatError, FeatureError) as exc:
        raise CLIError(str(exc)) from exc
    if args.euclidean_vocab:
        vocab = [l.strip() for l in Path(args.euclidean_vocab).read_text(encoding="utf-8").splitlines() if l.strip()]
    else:
        vocab = [c for r in records for c in r.covariates + r.concepts if c not in table]
    edim = args.euclidean_dim or (RESNET_EUCLIDEAN_DIM if args.mode == "average" else TRANSFORMER_EUCLIDEAN_DIM)
    seed = args.seed if args.seed is not None else table.config.seed
    space = build_feature_space(table, vocab, rng=seed, euclidean_dim=edim)

    unknown = sorted({c for r in records for c in r.concepts + r.covariates
                      if not space.is_taxonomy(c) and not space.is_euclidean(c)})
    if unknown:
        print(f"warning: {len(unknown)} unknown concept id(s) skipped: {', '.join(unknown[:20])}", file=sys.stderr)
    routed = sum(1 for r in records for c in r.concepts if not space.is_taxonomy(c) and space.is_euclidean(c))
    empty = sum(1 for r in records if not any(space.is_taxonomy(c) for c in r.concepts))

    out = Path(args.out)
    extra = {"mode": args.mode, "n_patients": len(records), "unknown_count": len(unknown), "unknown_ids": unknown,
             "routed_to_euclidean": routed, "records_without_taxonomy_concepts": empty}
    label = lambda r: "" if r.label is None else str(r.label)  # noqa: E731
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        if args.mode == "average":
            cols = ([f"f{i}" for i in range(space.dim)] + [f"e{i}" for i in range(edim)] + ["age", "sex", "cci"])
            fh.write("\t".join(["patient_id", "label"] + cols) + "\n")
            for r in records:
                vec = np.concatenate((average_patient_vector(space, r, args.averaging),
                                      average_covariate_vector(space, r), [r.age, r.sex, r.cci]))
                fh.write("\t".join([r.patient_id, label(r)] + [repr(float(v)) for v in vec]) + "\n")
        else:
            max_len = cohort_max_len(space, records)
            extra["max_len"] = max_len
            fh.write("\t".join(["patient_id", "label", "position", "mask"] + [f"t{i}" for i in range(space.dim)]) + "\n")
            for r in records:
                seq, mask = padded_sequence(space, r, max_len)
                for pos, (vec, m) in enumerate(zip(seq, mask)):
                    fh.write("\t".join([r.patient_id, label(r), str(pos), str(int(m))]
                                       + [repr(float(v)) for v in vec]) + "\n")
    inputs = {"embedding": args.embedding, "patients": args.patients}
    if args.euclidean_vocab:
        inputs["euclidean_vocab"] = args.euclidean_vocab
    write_manifest(out, "features", inputs, [out], seed=seed, extra=extra)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poincare-kg", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=False, policy=False, out_required=True):
        p.add_argument("--out", required=out_required)
        p.add_argument("--threads", type=int, default=1, help="1 = deterministic")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        if config:
            p.add_argument("--config", default=None, help="training config JSON")
        if policy:
            p.add_argument("--candidate-policy", default="all", help="all | sampled:<k>")
        return p

    p = common(sub.add_parser("extract", help="ancestral subtree of observed concepts"))
    p.add_argument("edges")
    p.add_argument("observed")
    p.set_defaults(func=cmd_extract)

    p = common(sub.add_parser("train", help="train a Poincaré embedding"), config=True)
    p.add_argument("edges")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("sweep", help="hyperparameter grid -> mean-rank CSV"), config=True, policy=True)
    p.add_argument("edges")
    p.add_argument("grid")
    p.set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("eval", help="mean rank of an embedding"), policy=True, out_required=False)
    p.add_argument("edges")
    p.add_argument("embedding")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("export-tangent", help="log-map embeddings to the tangent space at 0"))
    p.add_argument("embedding")
    p.set_defaults(func=cmd_export_tangent)

    p = common(sub.add_parser("features", help="patient features from embeddings"))
    p.add_argument("embedding")
    p.add_argument("patients")
    p.add_argument("--mode", choices=("average", "sequence"), default="average")
    p.add_argument("--averaging", choices=("tangent", "ball"), default="tangent")
    p.add_argument("--euclidean-dim", type=int, default=None)
    p.add_argument("--euclidean-vocab", default=None, help="ids with Euclidean embeddings (default: all non-taxonomy ids)")
    p.set_defaults(func=cmd_features)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
