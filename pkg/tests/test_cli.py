import os
from fractions import Fraction

import numpy as np
import pytest

from rvhash import retrieval as R
from rvhash.cli import main
from rvhash.data import write_idx
from rvhash.train import load_checkpoint

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Small 3-class 12x12 blob corpus as IDX files."""
    root = tmp_path_factory.mktemp("corpus")
    rng = np.random.default_rng(0)
    n = 240
    labels = rng.integers(0, 3, n).astype(np.uint8)
    base = np.zeros((3, 12, 12))
    base[0, :4] = 0.9
    base[1, 4:8] = 0.9
    base[2, :, :6] = 0.6
    images = np.clip(base[labels] + rng.normal(0, 0.05, (n, 12, 12)), 0, 1)
    images = (images * 255).astype(np.uint8)
    ip, lp = root / "imgs-idx3", root / "labels-idx1"
    write_idx(ip, lp, images, labels)
    return ip, lp


def write_cfg(path, images, labels, **overrides):
    base = {
        "data_format": "idx",
        "images": images,
        "labels": labels,
        "clusters": 2,
        "code_bits": 16,
        "d1": 16,
        "d2": 16,
        "epochs": 2,
        "batch_size": 32,
        "train_fraction": 0.75,
        "query_count": 20,
        "seed": 11,
    }
    base.update(overrides)
    with open(path, "w", encoding="utf-8") as f:
        f.write("# test configuration\n")
        for k, v in base.items():
            if isinstance(v, bool):
                v = "true" if v else "false"
            f.write(f"{k} = {v}\n")
    return path


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory, corpus):
    """One trained pipeline shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("run")
    cfg = write_cfg(root / "run.cfg", *corpus, out_dir=str(root / "out"))
    assert main(["train", "--config", str(cfg)]) == 0
    ck = root / "out" / "checkpoint.rvck"
    db = root / "db.rvhc"
    qs = root / "q.rvhc"
    assert main(["hash", "--config", str(cfg), "--checkpoint", str(ck),
                 "--split", "database", "--out", str(db)]) == 0
    assert main(["hash", "--config", str(cfg), "--checkpoint", str(ck),
                 "--split", "queries", "--out", str(qs)]) == 0
    return {"cfg": cfg, "ck": ck, "db": db, "queries": qs, "root": root}


class TestConfigParsing:
    def test_unknown_key_names_line(self, tmp_path, corpus, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("clusters = 2\nwibble = 3\n")
        assert main(["train", "--config", str(cfg)]) == 1
        err = capsys.readouterr().err
        assert "2" in err and "wibble" in err

    def test_bad_value_names_key_and_line(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("epochs = banana\n")
        assert main(["train", "--config", str(cfg)]) == 1
        err = capsys.readouterr().err
        assert "epochs" in err and ":1" in err

    def test_missing_config_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == 1

    def test_usage_error_exit_code(self):
        assert main(["train"]) == 1  # missing --config

    def test_comments_and_blanks_ok(self, tmp_path, corpus, capsys):
        cfg = write_cfg(tmp_path / "c.cfg", *corpus, epochs=1,
                        out_dir=str(tmp_path / "o"))
        with open(cfg, "a") as f:
            f.write("\n# trailing comment\n  \n")
        assert main(["train", "--config", str(cfg)]) == 0


class TestTrainCommand:
    def test_outputs_exist(self, trained_run):
        out = trained_run["root"] / "out"
        for name in ("checkpoint.rvck", "train_log.tsv", "top1.tsv", "config_echo.cfg"):
            assert (out / name).exists()
        log_lines = (out / "train_log.tsv").read_text().strip().split("\n")
        assert len(log_lines) == 2
        assert all(len(line.split("\t")) == 5 for line in log_lines)
        echo = (out / "config_echo.cfg").read_text()
        assert "clusters = 2" in echo and "seed = 11" in echo

    def test_seed_override_changes_echo(self, tmp_path, corpus):
        cfg = write_cfg(tmp_path / "c.cfg", *corpus, epochs=1, out_dir=str(tmp_path / "o"))
        assert main(["train", "--config", str(cfg), "--seed", "99",
                     "--out", str(tmp_path / "o2")]) == 0
        assert "seed = 99" in (tmp_path / "o2" / "config_echo.cfg").read_text()

    def test_determinism_byte_identical(self, tmp_path, corpus):
        cfg1 = write_cfg(tmp_path / "a.cfg", *corpus, epochs=1, out_dir=str(tmp_path / "oa"))
        cfg2 = write_cfg(tmp_path / "b.cfg", *corpus, epochs=1, out_dir=str(tmp_path / "ob"))
        assert main(["train", "--config", str(cfg1)]) == 0
        assert main(["train", "--config", str(cfg2)]) == 0
        a = (tmp_path / "oa" / "checkpoint.rvck").read_bytes()
        b = (tmp_path / "ob" / "checkpoint.rvck").read_bytes()
        assert a == b

    def test_ssdh_only_variant_trains(self, tmp_path, corpus):
        cfg = write_cfg(tmp_path / "c.cfg", *corpus, variant="ssdh_only", epochs=1,
                        out_dir=str(tmp_path / "o"))
        assert main(["train", "--config", str(cfg)]) == 0
        ck = load_checkpoint(tmp_path / "o" / "checkpoint.rvck")
        assert "vlad/anchors" not in ck.tensors
        assert "transform/fc1_w" in ck.tensors


class TestHashCommand:
    def test_code_files_valid(self, trained_run):
        db = R.read_codes(trained_run["db"])
        qs = R.read_codes(trained_run["queries"])
        assert db.length == 16 and qs.length == 16
        assert len(db) == 60 and len(qs) == 20
        assert set(qs.ids) <= set(db.ids)

    def test_same_inputs_identical_files(self, trained_run, tmp_path):
        out = tmp_path / "again.rvhc"
        assert main(["hash", "--config", str(trained_run["cfg"]),
                     "--checkpoint", str(trained_run["ck"]),
                     "--split", "database", "--out", str(out)]) == 0
        assert out.read_bytes() == trained_run["db"].read_bytes()

    def test_code_bits_mismatch_is_error(self, trained_run, tmp_path, corpus, capsys):
        cfg = write_cfg(tmp_path / "c.cfg", *corpus, code_bits=32, epochs=1)
        rc = main(["hash", "--config", str(cfg), "--checkpoint", str(trained_run["ck"]),
                   "--split", "database", "--out", str(tmp_path / "x.rvhc")])
        assert rc == 2
        assert "hash/" in capsys.readouterr().err

    def test_empty_split_gives_count_zero_file(self, trained_run, tmp_path, corpus):
        cfg = write_cfg(tmp_path / "c.cfg", *corpus, query_count=0)
        out = tmp_path / "empty.rvhc"
        assert main(["hash", "--config", str(cfg), "--checkpoint", str(trained_run["ck"]),
                     "--split", "queries", "--out", str(out)]) == 0
        assert len(R.read_codes(out)) == 0


class TestEvalCommand:
    def test_metrics_files(self, trained_run, tmp_path):
        out = tmp_path / "metrics"
        assert main(["eval", "--db", str(trained_run["db"]),
                     "--queries", str(trained_run["queries"]), "--out", str(out)]) == 0
        pr = (out / "pr_curve.tsv").read_text().strip().split("\n")
        assert len(pr) == 101
        map_lines = (out / "map.tsv").read_text().strip().split("\n")
        assert map_lines[-1].startswith("mAP\t")
        value = float(map_lines[-1].split("\t")[1])
        assert 0.0 <= value <= 1.0

    def test_committed_fixture_reproduces_hand_enumerated_map(self, tmp_path, capsys):
        out = tmp_path / "m"
        rc = main(["eval", "--db", os.path.join(FIXTURES, "map_db.rvhc"),
                   "--queries", os.path.join(FIXTURES, "map_queries.rvhc"),
                   "--out", str(out)])
        assert rc == 0
        map_lines = (out / "map.tsv").read_text().strip().split("\n")
        got = float(map_lines[-1].split("\t")[1])
        want = Fraction(34, 45)   # (1 + 2/3 + 3/5) / 3 per query
        assert abs(got - float(want)) < 1e-12
        assert round(got, 4) == 0.7556

    def test_length_mismatch(self, trained_run, tmp_path, capsys):
        other = tmp_path / "l8.rvhc"
        db = R.CodeDatabase(length=8, ids=np.array([0], dtype=np.uint64),
                            labels=np.zeros(1, dtype=np.uint32),
                            words=R.pack_bits(np.ones((1, 8), dtype=np.uint8)))
        R.write_codes(other, db)
        rc = main(["eval", "--db", str(trained_run["db"]), "--queries", str(other),
                   "--out", str(tmp_path / "x")])
        assert rc == 2
        assert "length mismatch" in capsys.readouterr().err

    def test_all_queries_excluded_is_data_error(self, tmp_path, capsys):
        # db == queries with unique labels: the only relevant item is the
        # query itself, which self-exclusion removes
        path = tmp_path / "uniq.rvhc"
        bits = np.eye(4, 16, dtype=np.uint8)
        db = R.CodeDatabase(length=16, ids=np.arange(4, dtype=np.uint64),
                            labels=np.arange(4, dtype=np.uint32),
                            words=R.pack_bits(bits))
        R.write_codes(path, db)
        rc = main(["eval", "--db", str(path), "--queries", str(path),
                   "--out", str(tmp_path / "x")])
        assert rc == 2
        assert "excluded" in capsys.readouterr().err

    def test_include_self_via_config(self, tmp_path, corpus, capsys):
        path = tmp_path / "uniq.rvhc"
        bits = np.eye(4, 16, dtype=np.uint8)
        db = R.CodeDatabase(length=16, ids=np.arange(4, dtype=np.uint64),
                            labels=np.arange(4, dtype=np.uint32),
                            words=R.pack_bits(bits))
        R.write_codes(path, db)
        cfg = write_cfg(tmp_path / "c.cfg", *corpus, include_self=True)
        rc = main(["eval", "--db", str(path), "--queries", str(path),
                   "--out", str(tmp_path / "m"), "--config", str(cfg)])
        assert rc == 0
        map_lines = (tmp_path / "m" / "map.tsv").read_text().strip().split("\n")
        assert map_lines[-1] == "mAP\t1.0"

    def test_determinism_byte_identical_tsvs(self, trained_run, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["eval", "--db", str(trained_run["db"]),
                         "--queries", str(trained_run["queries"]), "--out", str(out)]) == 0
        assert (a / "map.tsv").read_bytes() == (b / "map.tsv").read_bytes()
        assert (a / "pr_curve.tsv").read_bytes() == (b / "pr_curve.tsv").read_bytes()


class TestRealValuedEval:
    def test_backbone_only_pipeline(self, tmp_path, corpus, capsys):
        cfg = write_cfg(tmp_path / "c.cfg", *corpus, variant="backbone_only", epochs=1,
                        out_dir=str(tmp_path / "o"))
        assert main(["train", "--config", str(cfg)]) == 0
        ck = tmp_path / "o" / "checkpoint.rvck"
        db, qs = tmp_path / "db.rvf", tmp_path / "q.rvf"
        assert main(["hash", "--config", str(cfg), "--checkpoint", str(ck),
                     "--split", "database", "--out", str(db)]) == 0
        assert main(["hash", "--config", str(cfg), "--checkpoint", str(ck),
                     "--split", "queries", "--out", str(qs)]) == 0
        rc = main(["eval", "--db", str(db), "--queries", str(qs),
                   "--out", str(tmp_path / "m"), "--config", str(cfg),
                   "--metric", "euclidean"])
        assert rc == 0
        lines = (tmp_path / "m" / "map.tsv").read_text().strip().split("\n")
        assert lines[-1].startswith("mAP\t")

    def test_format_mismatch_rejected(self, trained_run, tmp_path, corpus):
        cfg = write_cfg(tmp_path / "c.cfg", *corpus, variant="backbone_only", epochs=1,
                        out_dir=str(tmp_path / "o"))
        assert main(["train", "--config", str(cfg)]) == 0
        db = tmp_path / "db.rvf"
        assert main(["hash", "--config", str(cfg),
                     "--checkpoint", str(tmp_path / "o" / "checkpoint.rvck"),
                     "--split", "database", "--out", str(db)]) == 0
        rc = main(["eval", "--db", str(db), "--queries", str(trained_run["queries"]),
                   "--out", str(tmp_path / "x")])
        assert rc == 2


class TestSearchCommand:
    def test_top_k_output(self, trained_run, capsys):
        assert main(["search", "--db", str(trained_run["db"]),
                     "--queries", str(trained_run["queries"]),
                     "--index", "0", "--top", "5"]) == 0
        out = capsys.readouterr().out.strip().split("\n")
        assert out[0] == "rank\tdb_id\tdistance\tlabel_match"
        assert len(out) == 6
        dists = [int(line.split("\t")[2]) for line in out[1:]]
        assert dists == sorted(dists)

    def test_index_out_of_range(self, trained_run, capsys):
        assert main(["search", "--db", str(trained_run["db"]),
                     "--queries", str(trained_run["queries"]), "--index", "999"]) == 1


class TestGradcheckCommand:
    def test_default_passes(self, capsys):
        assert main(["gradcheck", "--seeds", "2"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_corruption_detected(self, capsys):
        assert main(["gradcheck", "--seeds", "1", "--corrupt", "hash_sigmoid"]) == 3
        out = capsys.readouterr().out
        assert "FAIL" in out
