import hashlib

import numpy as np
import pytest

from actcache.cli import run
from actcache.dumps import write_labels, write_tensor_dump
from actcache.reporting import read_csv


@pytest.fixture
def feature_dump(tmp_path):
    rng = np.random.default_rng(0)
    feats = rng.uniform(-1, 1, (12, 4, 8, 8)).astype(np.float32)
    labels = rng.integers(0, 4, 12)
    fpath = tmp_path / "feats.bin"
    lpath = tmp_path / "labels.txt"
    write_tensor_dump(fpath, feats)
    write_labels(lpath, labels)
    return fpath, lpath, feats, labels


class TestBuildInspect:
    def test_build_then_inspect(self, tmp_path, feature_dump, capsys):
        fpath, lpath, feats, _ = feature_dump
        out = tmp_path / "cache.afc"
        code = run([
            "build", "--features", str(fpath), "--labels", str(lpath),
            "--out", str(out), "--tau", "1e-2", "--chunk-size", "2",
        ])
        assert code == 0
        assert out.exists()
        code = run(["inspect", str(out), "--verify"])
        captured = capsys.readouterr().out
        assert code == 0
        assert "n)     12" in captured.replace("samples (", "samples (")
        assert "0.01" in captured
        assert "chunk count     6" in captured
        assert "all valid" in captured

    def test_inspect_does_not_modify(self, tmp_path, feature_dump):
        fpath, lpath, _, _ = feature_dump
        out = tmp_path / "cache.afc"
        run(["build", "--features", str(fpath), "--labels", str(lpath), "--out", str(out)])
        before = hashlib.sha256(out.read_bytes()).hexdigest()
        run(["inspect", str(out), "--verify"])
        after = hashlib.sha256(out.read_bytes()).hexdigest()
        assert before == after

    def test_build_reproducible(self, tmp_path, feature_dump):
        fpath, lpath, _, _ = feature_dump
        a, b = tmp_path / "a.afc", tmp_path / "b.afc"
        argv = ["build", "--features", str(fpath), "--labels", str(lpath), "--seed", "9"]
        run(argv + ["--out", str(a)])
        run(argv + ["--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_build_with_channel_aug(self, tmp_path, feature_dump):
        fpath, lpath, feats, _ = feature_dump
        rng = np.random.default_rng(1)
        flipped = rng.uniform(-1, 1, feats.shape).astype(np.float32)
        apath = tmp_path / "aug.bin"
        write_tensor_dump(apath, flipped)
        out = tmp_path / "cache.afc"
        code = run([
            "build", "--features", str(fpath), "--labels", str(lpath),
            "--out", str(out), "--aug", "channel", "--gamma", "0.5",
            "--aug-features", str(apath),
        ])
        assert code == 0
        from actcache import open_cache

        with open_cache(out, verify=True) as handle:
            assert handle.header.aug_kind == "channel"
            assert handle.payload_per_sample == 2

    def test_missing_input_exits_2(self, tmp_path):
        code = run([
            "build", "--features", str(tmp_path / "none.bin"),
            "--labels", str(tmp_path / "none.txt"), "--out", str(tmp_path / "c.afc"),
        ])
        assert code == 2

    def test_corrupt_cache_exits_3(self, tmp_path, feature_dump):
        fpath, lpath, _, _ = feature_dump
        out = tmp_path / "cache.afc"
        run(["build", "--features", str(fpath), "--labels", str(lpath), "--out", str(out)])
        blob = bytearray(out.read_bytes())
        blob[400] ^= 0xFF
        out.write_bytes(bytes(blob))
        assert run(["inspect", str(out), "--verify"]) == 3

    def test_unknown_flag_exits_64(self):
        assert run(["inspect", "x.afc", "--frobnicate"]) == 64

    def test_missing_subcommand_exits_64(self):
        assert run([]) == 64

    def test_bad_flag_value_exits_64(self, tmp_path):
        assert run(["profile", "--chunks", "1,banana"]) == 64


class TestProfileCommand:
    def test_profile_csv_shape(self, tmp_path, capsys):
        out = tmp_path / "profile.csv"
        code = run([
            "profile", "--n", "16", "--chunks", "1,2,4,8,16",
            "--tau", "1e-2", "--seed", "3", "--out", str(out), "--no-figures",
        ])
        assert code == 0
        rows = read_csv(out)
        assert [r["chunk_size"] for r in rows] == ["1", "2", "4", "8", "16"]
        assert set(rows[0]) == {"chunk_size", "ratio", "encode_s", "decode_s_per_sample"}

    def test_profile_ratios_reproducible(self, tmp_path):
        argv = ["profile", "--n", "8", "--chunks", "1,2,4", "--tau", "1e-2", "--seed", "5",
                "--no-figures"]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run(argv + ["--out", str(a)])
        run(argv + ["--out", str(b)])
        ra = [r["ratio"] for r in read_csv(a)]
        rb = [r["ratio"] for r in read_csv(b)]
        assert ra == rb

    def test_profile_renders_figure(self, tmp_path):
        out = tmp_path / "profile.csv"
        code = run(["profile", "--n", "8", "--chunks", "1,2", "--out", str(out)])
        assert code == 0
        assert (tmp_path / "profile.png").exists()

    def test_profile_on_dump(self, tmp_path, feature_dump):
        fpath, _, _, _ = feature_dump
        out = tmp_path / "p.csv"
        code = run([
            "profile", "--features", str(fpath), "--chunks", "1,2,4",
            "--out", str(out), "--no-figures",
        ])
        assert code == 0
        assert len(read_csv(out)) == 3


class TestBenchCommand:
    def test_bench_rows_and_figure(self, tmp_path):
        out = tmp_path / "bench.csv"
        code = run([
            "bench", "--n", "8", "--taus", "0,1e-2", "--chunk-size", "2",
            "--seed", "1", "--out", str(out),
        ])
        assert code == 0
        rows = read_csv(out)
        assert [r["tau"] for r in rows] == ["0", "0.01"]
        assert (tmp_path / "bench.png").exists()

    def test_bench_ratio_deterministic_with_workers(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        base = ["bench", "--n", "8", "--taus", "1e-2", "--seed", "2", "--no-figures"]
        run(base + ["--workers", "1", "--out", str(a)])
        run(base + ["--workers", "4", "--out", str(b)])
        assert read_csv(a)[0]["ratio"] == read_csv(b)[0]["ratio"]


class TestCostReportCommand:
    def test_totals(self, tmp_path, capsys):
        stages = tmp_path / "stages.csv"
        stages.write_text(
            "stage,flops_per_sample,memory,epochs,samples\r\n"
            "0,1.66e9,630,30,50000\r\n"
            "1,1.08e9,278,30,50000\r\n"
            "2,0.53e9,99,100,50000\r\n"
        )
        out = tmp_path / "totals.csv"
        code = run(["cost-report", "--stages", str(stages), "--out", str(out), "--no-figures"])
        assert code == 0
        rows = read_csv(out)
        assert rows[-1]["stage"] == "total"
        assert float(rows[-1]["flops_total"]) == pytest.approx(6.76e15)
        assert float(rows[-1]["min_mem"]) == 99

    def test_missing_stages_exits_2(self, tmp_path):
        assert run(["cost-report", "--stages", str(tmp_path / "no.csv")]) == 2


class TestE2ECommand:
    def test_small_e2e_smoke(self, tmp_path, capsys):
        out = tmp_path / "e2e.csv"
        code = run([
            "e2e", "--tau", "1e-2", "--gamma", "0.25", "--seed", "7",
            "--seed-count", "1", "--n-train", "200", "--n-test", "100",
            "--epochs", "5", "--out", str(out), "--no-figures",
        ])
        assert code == 0
        rows = read_csv(out)
        assert len(rows) == 2  # one seed + mean
        captured = capsys.readouterr().out
        assert "sim-aware aug >= naive flip" in captured
