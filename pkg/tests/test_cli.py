import csv
import json

import numpy as np
import pytest

from poincare_kg.cli import main
from poincare_kg.hierarchy import balanced_tree, write_edge_list
from poincare_kg.io import file_digest, load_embedding, read_vectors_tsv, sidecar, write_vectors_tsv
from poincare_kg.manifold import distance


@pytest.fixture
def tree_file(tmp_path):
    path = tmp_path / "tree.tsv"
    with open(path, "w") as fh:
        write_edge_list(balanced_tree(2, 3), fh)
    return path


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"dim": 3, "epochs": 20, "burn_in_epochs": 5, "negatives_k": 4, "seed": 11}))
    return path


@pytest.fixture
def trained(tmp_path, tree_file, config_file):
    out = tmp_path / "emb.tsv"
    assert main(["train", str(tree_file), "--config", str(config_file), "--out", str(out)]) == 0
    return out


def test_extract_chain(tmp_path):
    edges = tmp_path / "e.tsv"
    edges.write_text("a\tb\nb\tc\nx\ty\n")
    obs = tmp_path / "obs.txt"
    obs.write_text("c\nmissing\n")
    out = tmp_path / "sub.tsv"
    assert main(["extract", str(edges), str(obs), "--out", str(out)]) == 0
    meta = json.loads(sidecar(out, "meta.json").read_text())
    assert (meta["n_nodes"], meta["n_edges"], meta["n_observed"]) == (3, 2, 1)
    assert meta["input_digest"] == file_digest(edges)
    assert sidecar(out, "unresolved.txt").read_text() == "missing\n"
    assert sorted(out.read_text().splitlines()) == ["a\tb", "b\tc"]
    assert sidecar(out, "manifest.json").exists()
    assert sidecar(out, "codes.tsv").read_text().splitlines()[0] == "index\tconcept_id"


def test_extract_empty_observed(tmp_path, capsys):
    edges = tmp_path / "e.tsv"
    edges.write_text("a\tb\n")
    obs = tmp_path / "obs.txt"
    obs.write_text("")
    assert main(["extract", str(edges), str(obs), "--out", str(tmp_path / "o")]) != 0
    assert "empty" in capsys.readouterr().err


def test_extract_parse_failure(tmp_path):
    edges = tmp_path / "e.tsv"
    edges.write_text("a\tb\nbroken\n")
    obs = tmp_path / "obs.txt"
    obs.write_text("b\n")
    assert main(["extract", str(edges), str(obs), "--out", str(tmp_path / "o")]) != 0


def test_train_outputs(trained):
    header = trained.read_text().splitlines()[0].split("\t")
    assert header == ["concept_id", "x0", "x1", "x2"]
    table = load_embedding(trained)
    assert len(table) == 15 and table.config.seed == 11
    manifest = json.loads(sidecar(trained, "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["outputs"]["emb.tsv"] == file_digest(trained)


def test_train_is_bit_reproducible(tmp_path, tree_file, config_file):
    digests = []
    for run in ("r1", "r2"):
        d = tmp_path / run
        d.mkdir()
        out = d / "emb.tsv"
        assert main(["train", str(tree_file), "--config", str(config_file), "--out", str(out)]) == 0
        digests.append((out.read_bytes(), sidecar(out, "meta.json").read_bytes(),
                        sidecar(out, "manifest.json").read_bytes()))
    assert digests[0] == digests[1]


def test_train_seed_flag_overrides(tmp_path, tree_file, config_file):
    out = tmp_path / "emb.tsv"
    assert main(["train", str(tree_file), "--config", str(config_file), "--seed", "5", "--out", str(out)]) == 0
    assert load_embedding(out).config.seed == 5


@pytest.mark.parametrize("cfg, needle", [
    ({"epochs": 5, "burn_in_epochs": 10}, "burn_in_epochs"),
    ({"dims": 3}, "dims"),
])
def test_train_rejects_bad_config(tmp_path, tree_file, capsys, cfg, needle):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    assert main(["train", str(tree_file), "--config", str(path), "--out", str(tmp_path / "x.tsv")]) != 0
    assert needle in capsys.readouterr().err


def test_train_paper_selected_config(tmp_path, tree_file):
    path = tmp_path / "paper.json"
    path.write_text(json.dumps({"dim": 10, "burn_in_epochs": 10, "negatives_k": 100, "directed": True, "epochs": 12}))
    assert main(["train", str(tree_file), "--config", str(path), "--out", str(tmp_path / "p.tsv")]) == 0


def test_sweep_one_cell_and_empty(tmp_path, tree_file, config_file):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"dim": [2], "burn_in_epochs": [5], "negatives_k": [3], "directed": [True]}))
    out = tmp_path / "sweep.csv"
    assert main(["sweep", str(tree_file), str(grid), "--config", str(config_file), "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 1
    assert list(rows[0]) == ["dim", "burn_in_epochs", "negatives_k", "directed", "mean_rank", "wall_time_s"]
    grid.write_text(json.dumps({"dim": []}))
    assert main(["sweep", str(tree_file), str(grid), "--config", str(config_file), "--out", str(out)]) != 0


def test_eval_report(tmp_path, tree_file, trained):
    out = tmp_path / "rank.json"
    assert main(["eval", str(tree_file), str(trained), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["candidate_policy"] == "all"
    assert report["mean_rank"] == pytest.approx(np.mean(report["ranks"]))
    assert main(["eval", str(tree_file), str(trained), "--out", str(out), "--candidate-policy", "sampled:3"]) == 0
    assert json.loads(out.read_text())["candidate_policy"] == "sampled(3)"


def test_eval_coverage_gap(tmp_path, tree_file, capsys):
    emb = tmp_path / "partial.tsv"
    write_vectors_tsv(emb, ["n0", "n1"], np.zeros((2, 2)))
    assert main(["eval", str(tree_file), str(emb)]) != 0
    assert "n2" in capsys.readouterr().err


def test_export_tangent(tmp_path):
    emb = tmp_path / "emb.tsv"
    vecs = np.array([[0.0, 0.0], [0.5, 0.0], [-0.3, 0.9]])
    write_vectors_tsv(emb, ["o", "a", "b"], vecs)
    out1, out2 = tmp_path / "t1.tsv", tmp_path / "t2.tsv"
    assert main(["export-tangent", str(emb), "--out", str(out1)]) == 0
    assert main(["export-tangent", str(emb), "--out", str(out2)]) == 0
    assert file_digest(out1) == file_digest(out2)
    codes, tangent = read_vectors_tsv(out1, prefix="t")
    assert codes == ["o", "a", "b"]
    assert np.array_equal(tangent[0], [0.0, 0.0])
    for t, v in zip(tangent, vecs):
        assert abs(np.linalg.norm(t) - distance(np.zeros(2), v)) <= 1e-9


def test_export_tangent_corrupt(tmp_path):
    emb = tmp_path / "bad.tsv"
    emb.write_text("concept_id\tx0\tx1\na\t0.1\n")
    assert main(["export-tangent", str(emb), "--out", str(tmp_path / "t.tsv")]) != 0
    emb.write_text("concept_id\tx0\tx1\na\t0.9\t0.9\n")
    assert main(["export-tangent", str(emb), "--out", str(tmp_path / "t.tsv")]) != 0


@pytest.fixture
def patients(tmp_path):
    path = tmp_path / "patients.csv"
    path.write_text(
        "patient_id,label,concept_list,covariate_list,age,sex,cci\n"
        "p1,1,n3;n4,drugA,50,M,1\n"
        "p2,0,n7;cond_x;n1;n2,drugB;drugA,60,F,0\n"
        "p3,0,,,47,F,2\n"
    )
    return path


def test_features_average(tmp_path, trained, patients):
    vocab = tmp_path / "vocab.txt"
    vocab.write_text("drugA\ndrugB\n")
    out = tmp_path / "feat.tsv"
    assert main(["features", str(trained), str(patients), "--mode", "average", "--euclidean-dim", "4",
                 "--euclidean-vocab", str(vocab), "--out", str(out)]) == 0
    rows = list(csv.reader(out.open(), delimiter="\t"))
    assert rows[0][:3] == ["patient_id", "label", "f0"] and rows[0][-3:] == ["age", "sex", "cci"]
    assert len(rows[0]) == 2 + 3 + 4 + 3
    assert len(rows) == 4
    manifest = json.loads(sidecar(out, "manifest.json").read_text())
    assert manifest["unknown_count"] == 1 and manifest["unknown_ids"] == ["cond_x"]
    assert manifest["records_without_taxonomy_concepts"] == 1


def test_features_fallback_to_euclidean(tmp_path, trained, patients):
    out = tmp_path / "feat.tsv"
    assert main(["features", str(trained), str(patients), "--out", str(out)]) == 0
    manifest = json.loads(sidecar(out, "manifest.json").read_text())
    assert manifest["unknown_count"] == 0
    assert manifest["routed_to_euclidean"] == 1
    header = out.read_text().splitlines()[0].split("\t")
    assert len(header) == 2 + 3 + 256 + 3


def test_features_sequence(tmp_path, trained, patients):
    out = tmp_path / "seq.tsv"
    assert main(["features", str(trained), str(patients), "--mode", "sequence", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open(), delimiter="\t"))
    manifest = json.loads(sidecar(out, "manifest.json").read_text())
    assert manifest["max_len"] == 3
    assert len(rows) == 3 * 3
    masks = {}
    for r in rows:
        masks.setdefault(r["patient_id"], []).append(int(r["mask"]))
    assert masks == {"p1": [1, 1, 0], "p2": [1, 1, 1], "p3": [0, 0, 0]}
