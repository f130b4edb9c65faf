import json

import numpy as np
import pytest

from pclf import load_checkpoint, load_dataset
from pclf.cli import main


@pytest.fixture
def rating_files(tmp_path):
    """Two tiny tab-separated domains on different source scales."""
    rng = np.random.default_rng(0)
    d0 = tmp_path / "movies.tsv"
    lines = []
    for u in range(8):
        for v in rng.choice(10, size=6, replace=False):
            lines.append(f"u{u}\tm{v}\t{rng.integers(1, 6)}")
    d0.write_text("\n".join(lines) + "\n")
    d1 = tmp_path / "books.tsv"
    lines = []
    for u in range(7):
        for v in rng.choice(9, size=5, replace=False):
            lines.append(f"u{u}\tb{v}\t{rng.integers(0, 10)}")
    d1.write_text("\n".join(lines) + "\n")
    return str(d0), str(d1)


def _ingest(rating_files, tmp_path, capsys):
    out = str(tmp_path / "dataset")
    rc = main([
        "ingest",
        "--input", rating_files[0], "--scale", "1:5",
        "--input", rating_files[1], "--scale", "0:9",
        "--out", out,
    ])
    assert rc == 0
    return out, capsys.readouterr().out


class TestIngest:
    def test_two_domain_ingest(self, rating_files, tmp_path, capsys):
        out, printed = _ingest(rating_files, tmp_path, capsys)
        assert "domains=2" in printed
        assert "domain 0: users=8 items=10 ratings=48" in printed
        ds = load_dataset(out)
        assert ds.n_domains == 2
        assert ds.n_levels == 5

    def test_missing_file_names_path(self, tmp_path, capsys):
        rc = main([
            "ingest", "--input", str(tmp_path / "gone.tsv"), "--scale", "1:5",
            "--out", str(tmp_path / "d"),
        ])
        assert rc == 1
        assert "gone.tsv" in capsys.readouterr().err

    def test_min_user_ratings_honored(self, rating_files, tmp_path, capsys):
        rc = main([
            "ingest",
            "--input", rating_files[0], "--scale", "1:5",
            "--select-users", "8", "--min-user-ratings", "5",
            "--out", str(tmp_path / "d"),
        ])
        assert rc == 0
        assert "users=8" in capsys.readouterr().out
        # threshold above every user's count is infeasible
        rc = main([
            "ingest",
            "--input", rating_files[0], "--scale", "1:5",
            "--select-users", "8", "--min-user-ratings", "6",
            "--out", str(tmp_path / "d2"),
        ])
        assert rc == 1


class TestTrain:
    def test_defaults_record_paper_hyperparameters(self, rating_files, tmp_path, capsys):
        dataset, _ = _ingest(rating_files, tmp_path, capsys)
        ckpt_path = str(tmp_path / "model.json")
        rc = main([
            "train", "--dataset", dataset, "--out", ckpt_path,
            "--betas", "1.0", "--max-iters", "3",
        ])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "K=20 T=10 L=15,15" in printed
        ckpt = load_checkpoint(ckpt_path)
        assert ckpt.model_kind == "pclf"
        d = ckpt.params.dims
        assert d.n_user_clusters == 20
        assert d.n_common_clusters == 10
        assert d.n_specific_clusters == (15, 15)
        assert ckpt.default_w1 == [0.35, 0.35]

    def test_fmm_rejects_two_domains(self, rating_files, tmp_path, capsys):
        dataset, _ = _ingest(rating_files, tmp_path, capsys)
        rc = main([
            "train", "--dataset", dataset, "--model", "fmm",
            "--out", str(tmp_path / "m.json"), "--betas", "1.0",
        ])
        assert rc == 1
        assert "single-domain" in capsys.readouterr().err

    def test_seed_reproducible_checkpoints(self, rating_files, tmp_path, capsys):
        dataset, _ = _ingest(rating_files, tmp_path, capsys)
        args = [
            "train", "--dataset", dataset, "-K", "3", "-T", "2", "-L", "2",
            "--betas", "0.5,1.0", "--max-iters", "4", "--seed", "11",
        ]
        a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
        assert main(args + ["--out", a]) == 0
        assert main(args + ["--out", b]) == 0
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_nmf_single_domain(self, rating_files, tmp_path, capsys):
        out = str(tmp_path / "d1only")
        rc = main(["ingest", "--input", rating_files[0], "--scale", "1:5", "--out", out])
        assert rc == 0
        ckpt_path = str(tmp_path / "nmf.json")
        rc = main([
            "train", "--dataset", out, "--model", "nmf",
            "--rank", "2", "--nmf-iters", "20", "--out", ckpt_path,
        ])
        assert rc == 0
        assert load_checkpoint(ckpt_path).model_kind == "nmf"


@pytest.fixture
def trained(rating_files, tmp_path, capsys):
    dataset, _ = _ingest(rating_files, tmp_path, capsys)
    ckpt = str(tmp_path / "model.json")
    rc = main([
        "train", "--dataset", dataset, "-K", "3", "-T", "2", "-L", "2",
        "--betas", "1.0", "--max-iters", "5", "--out", ckpt,
    ])
    assert rc == 0
    capsys.readouterr()
    return dataset, ckpt


class TestPredict:
    def test_default_w1_in_header(self, trained, tmp_path, capsys):
        _, ckpt = trained
        out = str(tmp_path / "preds.csv")
        rc = main(["predict", "--checkpoint", ckpt, "--cell", "0,0,0", "--out", out])
        assert rc == 0
        lines = open(out).read().splitlines()
        assert lines[0].startswith("#") and "w1=0.35" in lines[0]
        assert lines[1] == "user_domain,user_idx,item_domain,item_idx,predicted_rating,cross"

    def test_cross_cell_flagged(self, trained, tmp_path):
        _, ckpt = trained
        out = str(tmp_path / "preds.csv")
        rc = main([
            "predict", "--checkpoint", ckpt,
            "--cell", "0,1,1,2",   # user domain 0, item domain 1
            "--cell", "0,1,1",     # in-domain
            "--out", out,
        ])
        assert rc == 0
        rows = [l.split(",") for l in open(out).read().splitlines()[2:]]
        assert rows[0][-1] == "1" and rows[1][-1] == "0"

    def test_w1_one_matches_common_component(self, trained, tmp_path):
        _, ckpt_path = trained
        out = str(tmp_path / "preds.csv")
        rc = main([
            "predict", "--checkpoint", ckpt_path, "--w1", "1.0",
            "--cell", "0,0,0", "--out", out,
        ])
        assert rc == 0
        value = float(open(out).read().splitlines()[2].split(",")[4])
        from pclf import (PredictionWeights, cluster_rating_matrices,
                          memberships, predict)
        ckpt = load_checkpoint(ckpt_path)
        mats = cluster_rating_matrices(ckpt.params)
        mems = memberships(ckpt.params)
        expected = predict(
            ckpt.params, mats, mems, PredictionWeights.common_only(2), 0, 0, 0
        )
        assert value == pytest.approx(expected, abs=5e-7)

    def test_complete_domain_format(self, trained, tmp_path):
        _, ckpt = trained
        out = str(tmp_path / "full.csv")
        rc = main(["predict", "--checkpoint", ckpt, "--complete", "0", "--out", out])
        assert rc == 0
        lines = open(out).read().splitlines()
        assert lines[1] == "domain,user_idx,item_idx,predicted_rating"
        assert len(lines) == 2 + 8 * 10
        first = lines[2].split(",")
        assert first[:3] == ["0", "0", "0"]
        assert 1.0 <= float(first[3]) <= 5.0

    def test_cells_file(self, trained, tmp_path):
        _, ckpt = trained
        cells = tmp_path / "cells.txt"
        cells.write_text("0,0,0\n0,1,2\n")
        rc = main([
            "predict", "--checkpoint", ckpt, "--cells", str(cells),
            "--out", str(tmp_path / "p.csv"),
        ])
        assert rc == 0
        assert len(open(tmp_path / "p.csv").read().splitlines()) == 4

    def test_nothing_to_predict(self, trained, capsys):
        _, ckpt = trained
        rc = main(["predict", "--checkpoint", ckpt])
        assert rc == 1
        assert "nothing to predict" in capsys.readouterr().err


class TestInspect:
    def test_prints_dims_and_matrices(self, trained, capsys):
        _, ckpt = trained
        rc = main(["inspect", "--checkpoint", ckpt])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "K=3 T=2 L=2,2" in printed
        assert "common cluster-level rating matrix" in printed
        assert "user cluster 0 top users" in printed

    def test_version_mismatch_nonzero(self, trained, tmp_path, capsys):
        _, ckpt = trained
        text = open(ckpt).read().replace("pclf-model-v1", "pclf-model-v2")
        bad = tmp_path / "bad.json"
        bad.write_text(text)
        rc = main(["inspect", "--checkpoint", str(bad)])
        assert rc == 1
        err = capsys.readouterr().err
        assert "pclf-model-v1" in err and "pclf-model-v2" in err

    def test_s_matrix_entries_in_range(self, trained, capsys):
        _, ckpt_path = trained
        ckpt = load_checkpoint(ckpt_path)
        from pclf import cluster_rating_matrices
        mats = cluster_rating_matrices(ckpt.params)
        assert (mats.s_com >= 1.0).all() and (mats.s_com <= 5.0).all()

    def test_single_cluster_checkpoint(self, trained, tmp_path, capsys):
        dataset, _ = trained
        ckpt = str(tmp_path / "tiny.json")
        rc = main([
            "train", "--dataset", dataset, "-K", "1", "-T", "1", "-L", "1",
            "--betas", "1.0", "--max-iters", "2", "--out", ckpt,
        ])
        assert rc == 0
        capsys.readouterr()
        assert main(["inspect", "--checkpoint", ckpt]) == 0
        printed = capsys.readouterr().out
        assert "K=1 T=1 L=1,1" in printed
        # the one-cell common matrix is the mean rating, inside [1, 5]
        value = float(printed.split("[[")[1].split("]]")[0])
        assert 1.0 <= value <= 5.0


class TestSynthAndEvaluate:
    def test_synth_writes_dataset(self, tmp_path, capsys):
        out = str(tmp_path / "synth")
        rc = main([
            "synth", "--domains", "2", "-K", "2", "-T", "2", "-L", "2",
            "--users", "10", "--items", "8", "--density", "0.5",
            "--seed", "3", "--out", out,
            "--params-out", str(tmp_path / "true.json"),
        ])
        assert rc == 0
        ds = load_dataset(out)
        assert ds.n_domains == 2
        assert load_checkpoint(str(tmp_path / "true.json")).model_kind == "pclf"

    def test_evaluate_minimal_config(self, tmp_path, capsys):
        config = {
            "synthetic": {
                "Z": 2, "K": 2, "T": 2, "L": [1, 1], "R": 5,
                "M": [14, 14], "N": [10, 10], "w1": 0.6,
                "density": 0.5, "seed": 2,
            },
            "given_n": [5],
            "n_train_users": 9,
            "dims": {"K": 2, "T": 2, "L": [1, 1]},
            "models": ["pclf", "fmm"],
            "train": {"beta_schedule": [1.0], "max_iters_per_beta": 4},
            "n_repeats": 1,
        }
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(config))
        out = str(tmp_path / "results")
        rc = main(["evaluate", "--config", str(cfg_path), "--out", out])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "pclf" in printed and "fmm" in printed
        results = open(f"{out}/results.csv").read().splitlines()
        assert results[0] == "model,domain,given_n,repeat,mae"
        assert len(results) == 1 + 2 * 2
        table = open(f"{out}/table.txt").read()
        assert "given5" in table

    def test_invalid_config_key_named(self, tmp_path, capsys):
        cfg = tmp_path / "config.json"
        cfg.write_text(json.dumps({"plum": 1, "given_n": [5], "n_train_users": 1,
                                   "dims": {}, "models": ["pclf"]}))
        rc = main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "plum" in capsys.readouterr().err

    def test_evaluate_file_domains_with_subset(self, tmp_path, capsys):
        rng = np.random.default_rng(7)
        paths = []
        for d, scale_hi in enumerate((5, 9)):
            lines = []
            for u in range(30):
                for v in rng.choice(25, size=12, replace=False):
                    lines.append(f"u{u}\ti{v}\t{rng.integers(0 if d else 1, scale_hi + 1)}")
            p = tmp_path / f"dom{d}.tsv"
            p.write_text("\n".join(lines) + "\n")
            paths.append(str(p))
        config = {
            "domains": [
                {"path": paths[0], "scale": {"min": 1, "max": 5}, "name": "movies"},
                {"path": paths[1], "scale": {"min": 0, "max": 9}, "name": "books"},
            ],
            "subset": {"n_users": 25, "n_items": 20, "min_user_ratings": 5},
            "given_n": [5],
            "n_train_users": 15,
            "dims": {"K": 2, "T": 2, "L": [1, 1]},
            "models": ["pclf"],
            "train": {"beta_schedule": [1.0], "max_iters_per_beta": 4},
            "n_repeats": 2,
            "base_seed": 1,
        }
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(config))
        out = str(tmp_path / "results")
        rc = main(["evaluate", "--config", str(cfg_path), "--out", out])
        assert rc == 0
        table = open(f"{out}/table.txt").read()
        assert "movies" in table and "books" in table
        results = open(f"{out}/results.csv").read().splitlines()
        assert len(results) == 1 + 2 * 2  # two domains x two repeats

    def test_repeats_flag_overrides(self, tmp_path, capsys):
        config = {
            "synthetic": {
                "Z": 2, "K": 2, "T": 2, "L": [1, 1], "R": 5,
                "M": [12, 12], "N": [8, 8], "w1": 0.6,
                "density": 0.5, "seed": 2,
            },
            "given_n": [5],
            "n_train_users": 8,
            "dims": {"K": 2, "T": 2, "L": [1, 1]},
            "models": ["pclf"],
            "train": {"beta_schedule": [1.0], "max_iters_per_beta": 3},
            "n_repeats": 5,
        }
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(config))
        out = str(tmp_path / "results")
        rc = main(["evaluate", "--config", str(cfg_path), "--out", out, "--repeats", "2"])
        assert rc == 0
        results = open(f"{out}/results.csv").read().splitlines()
        assert len(results) == 1 + 2 * 2
