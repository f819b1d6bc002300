import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from qpix import circuit as cq
from qpix import datasets, imgenc
from qpix import mps as M
from qpix.cli import main

from conftest import snapshot


@pytest.fixture
def idx_file(tmp_path):
    imgs, labels = datasets.synthetic_digits(12, seed=5, side=8)
    path = tmp_path / "train.idx"
    path.write_bytes(imgenc.dump_idx_images(imgs))
    (tmp_path / "labels.idx").write_bytes(imgenc.dump_idx_labels(labels))
    return path


def compress_args(idx_file, out, *extra):
    return ["compress", "--dataset", f"idx:{idx_file}", "--side", "8", "--gateset", "so4",
            "--layers", "2", "--sweeps", "5", "--out", str(out), *extra]


def test_compress_writes_circuits_and_reports(idx_file, tmp_path):
    out = tmp_path / "run"
    assert main(compress_args(idx_file, out, "--limit", "10")) == 0
    assert len(list(out.glob("*.qcirc"))) == 10
    reports = sorted(out.glob("0*.json"))
    assert len(reports) == 10
    rep = json.loads(reports[0].read_text())
    assert set(rep) == {"dataset", "imageId", "gateSet", "layers", "cnots", "infidelity",
                        "sweepOverlapTrace", "bfgsIterations", "wallTimeSeconds"}
    assert rep["cnots"] == cq.cnots_for("so4", 7, 2)
    manifest = json.loads((out / "manifest.json").read_text())
    assert all(v["status"] == "done" for v in manifest["items"].values())
    assert len(manifest["items"]) == 10


def test_compress_limit_zero(idx_file, tmp_path):
    out = tmp_path / "empty"
    assert main(compress_args(idx_file, out, "--limit", "0")) == 0
    assert json.loads((out / "manifest.json").read_text())["items"] == {}


def test_compress_usage_errors(idx_file, tmp_path, capsys):
    assert main(compress_args(idx_file, tmp_path / "x", "--gateset", "u3")) == 2
    assert main(["compress", "--out", str(tmp_path)]) == 2
    assert main(["frobnicate"]) == 2
    assert main(compress_args(tmp_path / "missing.idx", tmp_path / "y")) == 2


def test_compress_resumes(idx_file, tmp_path):
    out = tmp_path / "run"
    assert main(compress_args(idx_file, out, "--limit", "3", "--no-bfgs")) == 0
    first = (out / "000001.qcirc").stat().st_mtime_ns
    (out / "000002.qcirc").unlink()
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["items"]["000000"]["status"] = "pending"
    (out / "manifest.json").write_text(json.dumps(manifest))
    assert main(compress_args(idx_file, out, "--limit", "3", "--no-bfgs")) == 0
    assert (out / "000001.qcirc").stat().st_mtime_ns == first
    assert (out / "000002.qcirc").exists()


def test_compress_parallel_matches_serial(idx_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(compress_args(idx_file, a, "--limit", "4")) == 0
    assert main(compress_args(idx_file, b, "--limit", "4", "--jobs", "2")) == 0
    assert snapshot(a) == snapshot(b)


def test_verify_reproduces_reported_infidelity(idx_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(compress_args(idx_file, out, "--limit", "2")) == 0
    rep = json.loads((out / "000001.json").read_text())
    capsys.readouterr()
    code = main(["verify", "--circuit", str(out / "000001.qcirc"), "--dataset",
                 f"idx:{idx_file}", "--index", "1", "--side", "8", "--threshold", "1"])
    assert code == 0
    inf = float(capsys.readouterr().out.split()[-1])
    assert inf <= rep["infidelity"] + 1e-9


def test_verify_identity_circuit(tmp_path, capsys):
    rng = np.random.default_rng(0)
    img = rng.random((4, 4))
    (tmp_path / "img.pgm").write_bytes(imgenc.dump_pnm(img))
    (tmp_path / "id.qcirc").write_text(cq.export_circuit(cq.DecomposedCircuit(5, [])))
    code = main(["verify", "--circuit", str(tmp_path / "id.qcirc"),
                 "--image", str(tmp_path / "img.pgm"), "--side", "4"])
    assert code == 1
    inf = float(capsys.readouterr().out.split()[-1])
    # |0...0> overlaps only the first pixel's cosine amplitude
    x0 = imgenc.load_pnm(imgenc.dump_pnm(img))[0, 0]
    assert inf == pytest.approx(1 - np.cos(np.pi * x0 / 2) ** 2 / 16, abs=1e-12)
    assert inf >= 1 - 1 / 16


def test_verify_corrupted_circuit(tmp_path, capsys):
    (tmp_path / "bad.qcirc").write_text("qcirc 1\nqubits 5\ncx 0 1\nry 9 0.1\n")
    (tmp_path / "img.pgm").write_bytes(imgenc.dump_pnm(np.zeros((4, 4))))
    code = main(["verify", "--circuit", str(tmp_path / "bad.qcirc"),
                 "--image", str(tmp_path / "img.pgm"), "--side", "4"])
    assert code == 2
    assert "line 4" in capsys.readouterr().err


def test_encode_and_gram(idx_file, tmp_path):
    states = tmp_path / "states"
    assert main(["encode", "--dataset", "digits", "--limit", "6", "--side", "8",
                 "--out", str(states)]) == 0
    files = sorted(states.glob("*.mps"))
    assert len(files) == 6
    m = M.loads(files[0].read_bytes())
    assert len(m) == 7
    assert (states / "labels.csv").exists()
    assert main(["gram", "--states", str(states), "--out", str(tmp_path / "k.csv")]) == 0
    rows = list(csv.reader((tmp_path / "k.csv").open()))
    assert rows[0] == ["id"] + [f.stem for f in files]
    k = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    np.testing.assert_allclose(k, k.T)
    np.testing.assert_allclose(np.diag(k), 1.0, atol=1e-10)


def test_gram_needs_directory(tmp_path):
    assert main(["gram", "--states", str(tmp_path / "nope"), "--out", "k.csv"]) == 2


def test_train_report(tmp_path):
    out = tmp_path / "report.json"
    code = main(["train", "--model", "mps", "--chi", "4", "--copies", "1", "--folds", "5",
                 "--epochs", "5", "--classes", "0,1", "--limit", "200", "--side", "8",
                 "--batch-size", "50", "--out", str(out)])
    assert code == 0
    rep = json.loads(out.read_text())
    assert len(rep["folds"]) == 5
    assert all(len(f) == 6 and f[-1]["epoch"] == 5 for f in rep["folds"])
    assert rep["model"] == "mps"


def test_train_idx_needs_labels(idx_file, tmp_path):
    out = tmp_path / "idx.json"
    base = ["train", "--dataset", f"idx:{idx_file}", "--side", "8", "--chi", "2",
            "--folds", "2", "--epochs", "1", "--batch-size", "6", "--out", str(out)]
    assert main(base) == 2
    assert main(base + ["--labels", str(idx_file.parent / "labels.idx")]) == 0
    assert len(json.loads(out.read_text())["folds"]) == 2


def test_resolution_experiment_rejects_color_scheme_on_gray(tmp_path):
    code = main(["experiment", "resolution", "--dataset", "digits", "--limit", "1",
                 "--scheme", "mcrqi", "--out", str(tmp_path / "r")])
    assert code == 2


def test_train_vqc_runs(tmp_path):
    out = tmp_path / "vqc.json"
    code = main(["train", "--model", "vqc", "--classes", "0,1", "--limit", "10",
                 "--side", "4", "--folds", "2", "--epochs", "1", "--batch-size", "5",
                 "--out", str(out)])
    assert code == 0
    assert len(json.loads(out.read_text())["folds"]) == 2


def test_experiment_entropy_columns(tmp_path):
    pytest.importorskip("skimage")
    out = tmp_path / "ent"
    code = main(["experiment", "entropy", "--schemes", "mcrqi,omulti,tmulti", "--limit", "2",
                 "--resolutions", "4,8", "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader((out / "entropy.csv").open()))
    assert {"mcrqi", "dmulti", "tmulti"} <= set(rows[0])
    assert len(rows) == 2


def test_experiment_cnot_table(tmp_path):
    out = tmp_path / "cnot"
    code = main(["experiment", "cnot", "--dataset", "digits", "--limit", "2", "--side", "8",
                 "--gatesets", "so4,sparse", "--layers", "1,2", "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader((out / "infidelity_vs_cnot.csv").open()))
    assert len(rows) == 4
    assert (out / "fits.csv").exists()


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("QPIX_SEED", "7")
    a = tmp_path / "a"
    assert main(["encode", "--dataset", "digits", "--limit", "2", "--side", "4",
                 "--out", str(a)]) == 0
    b = tmp_path / "b"
    assert main(["encode", "--dataset", "digits", "--limit", "2", "--side", "4",
                 "--seed", "7", "--out", str(b)]) == 0
    assert snapshot(a) == snapshot(b)
    monkeypatch.setenv("QPIX_SEED", "x")
    assert main(["encode", "--dataset", "digits", "--limit", "1", "--out", str(a)]) == 2


def test_config_file_defaults(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"side": 4, "limit": 3}))
    out = tmp_path / "e"
    assert main(["--config", str(cfg), "encode", "--dataset", "digits", "--out", str(out)]) == 0
    files = sorted(out.glob("*.mps"))
    assert len(files) == 3 and len(M.loads(files[0].read_bytes())) == 5


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "qpix", "gram", "--states",
                          str(tmp_path / "missing"), "--out", "k.csv"],
                         capture_output=True, text=True)
    assert res.returncode == 2
    assert "not a directory" in res.stderr
