import csv
import json

import numpy as np
import pytest

from caqubo.cli import main
from caqubo.datasets import load_with_header
from caqubo.qubo import QuboMatrix, dump_qubo, energy


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    args = ["synth", "--n-users", "100", "--n-items", "120", "--n-features", "10", "--n-informative", "3"]
    assert main(args + ["--density", "0.05", "--seed", "4", "--out", str(d / "data")]) == 0
    return d


def test_synth_outputs(synth):
    data = synth / "data"
    assert load_with_header(data / "icm.tsv").shape == (120, 10)
    planted = [int(v) for v in (data / "planted.txt").read_text().split()]
    assert len(planted) == 3


def test_split_mistats_counterfactual(synth, tmp_path):
    data = synth / "data"
    assert main(["split", "--urm", str(data / "urm.tsv"), "--out", str(tmp_path), "--seed", "1"]) == 0
    train, test = tmp_path / "urm_train.tsv", tmp_path / "urm_test.tsv"
    assert load_with_header(train).shape == load_with_header(test).shape

    assert main(["mistats", "--icm", str(data / "icm.tsv"), "--urm-train", str(train), "--out", str(tmp_path / "mi")]) == 0
    mi = (tmp_path / "mi" / "mi.tsv").read_text().splitlines()
    cmi = (tmp_path / "mi" / "cmi.tsv").read_text().splitlines()
    assert len(mi) == 10 and len(cmi) == 90
    assert all(float(line.split("\t")[1]) >= 0 for line in mi)

    out = tmp_path / "cf"
    argv = ["counterfactual", "--icm", str(data / "icm.tsv"), "--urm-train", str(train), "--urm-test", str(test)]
    assert main(argv + ["--features", "0,3", "--out", str(out)]) == 0
    meta = json.loads((out / "e.json").read_text())
    assert set(meta) >= {"base_ndcg", "eval", "knn", "m"}
    rows = [ln.split("\t") for ln in (out / "e.tsv").read_text().splitlines() if not ln.startswith("#")]
    assert [int(r[0]) for r in rows] == [0, 3]
    for _, e, without in rows:
        assert float(e) == pytest.approx(meta["base_ndcg"] - float(without), abs=1e-12)


def test_grid_then_eval_reproduces(synth, tmp_path, capsys):
    data = synth / "data"
    out = tmp_path / "grid"
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(f"urm = {data / 'urm.tsv'}\nicm = {data / 'icm.tsv'}\nlambda_grid = 0, 1e3\nk_grid = 3\n")
    assert main(["grid", "--config", str(cfg), "--output-dir", str(out), "--k-grid", "3,5", "--no-cache"]) == 0
    assert not (out / ".cache").exists()
    rows = list(csv.DictReader((out / "report.csv").open()))
    assert len(rows) == 5
    capsys.readouterr()
    for row in rows:
        if row["kind"] == "baseline":
            continue
        argv = ["eval", "--urm-train", str(out / "urm_train.tsv"), "--urm-test", str(out / "urm_test.tsv")]
        argv += ["--icm", str(out / "icm.tsv"), "--mask", str(out / row["mask_file"]), "--digits", "17"]
        assert main(argv) == 0
        assert float(capsys.readouterr().out) == float(row["ndcg"])


def test_eval_prints_four_decimals(synth, tmp_path, capsys):
    data = synth / "data"
    main(["split", "--urm", str(data / "urm.tsv"), "--out", str(tmp_path)])
    (tmp_path / "mask.txt").write_text("0\n1\n2\n")
    capsys.readouterr()
    argv = ["eval", "--urm-train", str(tmp_path / "urm_train.tsv"), "--urm-test", str(tmp_path / "urm_test.tsv")]
    assert main(argv + ["--icm", str(data / "icm.tsv"), "--mask", str(tmp_path / "mask.txt")]) == 0
    text = capsys.readouterr().out.strip()
    assert len(text.split(".")[1]) == 4


def test_select_writes_mask_and_qubo(synth, tmp_path):
    data = synth / "data"
    out = tmp_path / "sel"
    argv = ["select", "--urm", str(data / "urm.tsv"), "--icm", str(data / "icm.tsv"), "--lambda-grid", "1e3"]
    assert main(argv + ["--k-grid", "4", "--output-dir", str(out), "--solver", "exhaustive"]) == 0
    assert (out / "mask.txt").exists()
    # solving the dumped QUBO exhaustively returns the same mask
    assert main(["solve", str(out / "qubo.txt"), "--exhaustive", "--out", str(tmp_path / "solved")]) == 0
    assert (tmp_path / "solved" / "mask.txt").read_text() == (out / "mask.txt").read_text()


def test_solve_sa_with_votes(tmp_path, capsys):
    qm = QuboMatrix(np.diag([-1.0, 2.0, -3.0]), 0.5)
    dump_qubo(qm, tmp_path / "q.txt")
    argv = ["solve", str(tmp_path / "q.txt"), "--runs", "3", "--seed", "7", "--sweeps", "50", "--out", str(tmp_path / "o")]
    assert main(argv) == 0
    summary = json.loads((tmp_path / "o" / "solve.json").read_text())
    assert summary["popcount"] == 2 and summary["seeds"] == [7, 8, 9]
    assert summary["energy"] == energy(qm, [1, 0, 1])
    assert (tmp_path / "o" / "mask.txt").read_text() == "0\n2\n"


def test_failure_exit_code(tmp_path, capsys):
    rc = main(["grid", "--urm", str(tmp_path / "nope.tsv"), "--icm", str(tmp_path / "nope.tsv")])
    assert rc == 1
    assert "[load]" in capsys.readouterr().err


def test_bad_config_value(tmp_path, capsys):
    assert main(["grid", "--k-grid", "", "--urm", "x", "--icm", "y"]) == 1
    assert "k_grid" in capsys.readouterr().err
