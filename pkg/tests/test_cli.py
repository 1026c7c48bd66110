import json
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest

import ndcp
from ndcp.cli import main
from ndcp.dataset import make_two_gaussians, write_csv

BUNDLED = Path(ndcp.__file__).parent / "data"


@pytest.fixture
def files(tmp_path):
    d = make_two_gaussians(50, seed=9, n_features=2)
    train = tmp_path / "train.csv"
    write_csv(train, d.subset(range(40)))
    query = tmp_path / "query.csv"
    write_csv(query, d.subset(range(40, 45)))
    return train, query


def test_inspect(files, capsys):
    train, _ = files
    assert main(["inspect", str(train), "--label-column", "label"]) == 0
    out = capsys.readouterr().out
    assert "n = 40" in out and "p = 2" in out and "class balance" in out
    assert main(["inspect", str(train), "--porcelain"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["n"] == 40 and info["class0"] + info["class1"] == 40


def test_predict_deterministic(files, capsys):
    train, query = files
    args = ["predict", "--train", str(train), "--query", str(query), "--seed", "1", "--n-trees", "10"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first
    lines = first.splitlines()
    assert lines[0] == "index,p0,p1" and len(lines) == 6


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["predict", "--train", "x.csv"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2


def test_operational_error_exit_1(tmp_path, capsys):
    assert main(["inspect", str(tmp_path / "nope.csv")]) == 1
    assert "nope.csv" in capsys.readouterr().err


def test_help_documents_flags(capsys):
    with pytest.raises(SystemExit):
        main(["serve-source", "--help"])
    text = capsys.readouterr().out
    for flag in ("--data", "--label-column", "--port", "--seed", "--encoding"):
        assert flag in text


def test_run_bundled_fixture(tmp_path, capsys):
    out = tmp_path / "reports"
    assert main(["run", "--config", str(BUNDLED / "synthetic.toml"), "--out", str(out), "--porcelain"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["records"] == 10
    names = {p.name for p in out.iterdir()}
    assert {"metrics.csv", "smalltcp.csv", "manifest.json", "wilcoxon_validity.csv",
            "wilcoxon_efficiency.csv", "calibration_Pooled.csv", "calibration_RandSrc2.2.csv"} <= names
    assert set(p.name for p in tmp_path.iterdir()) == {"reports"}

    again = tmp_path / "again"
    assert main(["replay", "--manifest", str(out / "manifest.json"), "--out", str(again)]) == 0
    assert (again / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_serve_and_coordinate_match_predict(files, tmp_path, capsys):
    train, query = files
    port = free_port()
    proc = subprocess.Popen(
        [sys.executable, "-m", "ndcp", "serve-source", "--data", str(train), "--port", str(port),
         "--seed", "3", "--n-trees", "10"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE,
    )
    try:
        deadline = time.time() + 60
        while True:
            try:
                socket.create_connection(("127.0.0.1", port), timeout=1).close()
                break
            except OSError:
                if time.time() > deadline or proc.poll() is not None:
                    raise RuntimeError(proc.stderr.read().decode())
                time.sleep(0.2)
        out = tmp_path / "agg.csv"
        assert main(["coordinate", "--sources", f"127.0.0.1:{port}", "--query", str(query),
                     "--drop-column", "label", "--out", str(out), "--shutdown"]) == 0
        assert proc.wait(timeout=30) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
    assert main(["predict", "--train", str(train), "--query", str(query), "--seed", "3", "--n-trees", "10"]) == 0
    assert out.read_text() == capsys.readouterr().out
