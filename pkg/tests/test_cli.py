import csv
import json
import subprocess
import sys

import pytest

from trisym.cli import CSV_COLUMNS, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, _ = run(capsys, *argv)
    assert code == 0
    return json.loads(out)


def test_seq_example(capsys):
    rep = run_json(capsys, "simulate", "seq", "--kernel", "syrk", "--n1", "4", "--n2", "2", "--M", "8", "--seed", "1")
    assert rep["ledger"]["reads"] == 34 and rep["ledger"]["writes"] == 10
    assert rep["correctness"]["bitwise_equal"] is True
    assert rep["ratios"]["reads_over_leading"] > 0


def test_par_2d_example(capsys):
    rep = run_json(capsys, "simulate", "par", "--kernel", "symm", "--n1", "12", "--n2", "4", "--P", "12", "--algo", "2d")
    # 12 rows pad to 18 so that each of the 9 row blocks has 2 rows
    assert rep["ledger"]["max_words_received"] == pytest.approx(2 * 18 * 4 / 3 * (1 - 1 / 12))
    assert rep["correctness"]["ok"]


def test_par_limited_memory_claim(capsys):
    rep = run_json(capsys, "simulate", "par", "--kernel", "syr2k", "--n1", "144", "--n2", "288", "--P", "48",
                   "--algo", "3d-lim", "--x", "4")
    assert rep["params"]["p1"] == 12 and rep["params"]["p2"] == 4 and rep["params"]["b"] == 6
    claim = rep["memory_claim"]
    assert claim["holds"] == (claim["peak"] <= claim["budget"])


def test_par_selected_grid(capsys):
    rep = run_json(capsys, "simulate", "par", "--kernel", "syrk", "--n1", "16", "--n2", "16", "--P", "60")
    assert (rep["params"]["algo"], rep["params"]["p1"], rep["params"]["p2"]) == ("3d", 12, 5)


@pytest.mark.parametrize("kernel, n1, n2, P, algo", [
    ("syrk", 100, 10000, 10, "1d"), ("symm", 1000, 10, 12, "2d"), ("syrk", 16, 16, 60, "3d")])
def test_grid_cases(capsys, kernel, n1, n2, P, algo):
    rep = run_json(capsys, "grid", "--kernel", kernel, "--n1", str(n1), "--n2", str(n2), "--P", str(P))
    assert rep["choice"]["algo"] == algo


def test_grid_limited(capsys):
    rep = run_json(capsys, "grid", "--kernel", "syrk", "--n1", "144", "--n2", "288", "--P", "48", "--x", "4")
    assert rep["limited"] == {"p1": 12, "p2": 4, "b": 6, "c": 3}


def test_bounds(capsys):
    rep = run_json(capsys, "bounds", "--kernel", "syrk", "--n1", "16", "--n2", "16", "--M", "64", "--P", "60")
    assert rep["memindep"]["case"] == 3
    assert rep["seq_lb"] == pytest.approx(16 * 15 * 16 / (2 ** 0.5 * 8) - 128)


@pytest.mark.parametrize("kind, c", [("affine", "3"), ("projective", "4"), ("steiner15", None)])
@pytest.mark.parametrize("fmt", ["text", "json"])
def test_gen_check_round_trip(capsys, tmp_path, kind, c, fmt):
    path = tmp_path / "p.tbp"
    argv = ["partition", "gen", "--kind", kind, "--diagonals", "--format", fmt, "--out", str(path)]
    if c:
        argv += ["--c", c]
    assert run(capsys, *argv)[0] == 0
    code, out, _ = run(capsys, "partition", "check", "--file", str(path))
    assert code == 0 and "diagonals=" in out


def test_gen_to_stdout_pipes_into_check():
    gen = subprocess.run([sys.executable, "-m", "trisym", "partition", "gen", "--kind", "affine", "--c", "2"],
                         capture_output=True, text=True, check=True)
    chk = subprocess.run([sys.executable, "-m", "trisym", "partition", "check", "--file", "/dev/stdin"],
                         input=gen.stdout, capture_output=True, text=True)
    assert chk.returncode == 0, chk.stderr


def test_check_bad_file_exit_1(capsys, tmp_path):
    bad = tmp_path / "bad.tbp"
    bad.write_text("steiner 4 2\n0 1\n0 1\n0 2\n0 3\n1 2\n1 3\n")
    code, out, err = run(capsys, "partition", "check", "--file", str(bad))
    assert code == 1
    assert "duplicated pair: {0, 1}" in out + err or "duplicated pair: (0, 1)" in out + err


def test_missing_file_exit_1(capsys, tmp_path):
    assert run(capsys, "partition", "check", "--file", str(tmp_path / "nope"))[0] == 1


@pytest.mark.parametrize("argv", [
    ["simulate", "seq", "--kernel", "syrk", "--n1", "4", "--n2", "2"],
    ["simulate", "par", "--kernel", "syrk", "--n1", "4", "--n2", "2"],
    ["simulate", "seq", "--kernel", "syrk", "--n1", "4,8", "--n2", "2", "--M", "8"],
    ["simulate", "par", "--kernel", "syrk", "--n1", "36", "--n2", "2", "--P", "12", "--algo", "3d-lim"],
    ["partition", "gen", "--kind", "affine"],
])
def test_usage_errors_exit_2(capsys, argv):
    assert run(capsys, *argv)[0] == 2


def test_argparse_error_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "seq", "--kernel", "gemm", "--n1", "4", "--n2", "2", "--M", "8"])
    assert exc.value.code == 2


def test_engine_error_exit_1(capsys):
    code, _, err = run(capsys, "simulate", "seq", "--kernel", "syrk", "--n1", "8", "--n2", "2", "--M", "2")
    assert code == 1 and err.startswith("trisym:")


def test_report_determinism(capsys):
    argv = ["simulate", "par", "--kernel", "syr2k", "--n1", "18", "--n2", "6", "--P", "24", "--seed", "3"]
    a, b = run_json(capsys, *argv), run_json(capsys, *argv)
    assert "timestamp" in a
    a.pop("timestamp"), b.pop("timestamp")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_sweep_csv(capsys, tmp_path):
    out = tmp_path / "runs.csv"
    for _ in range(2):
        rep = run_json(capsys, "simulate", "seq", "--kernel", "syr2k", "--n1", "6,9", "--n2", "3",
                       "--M", "16,32", "--sweep", "--csv", str(out))
        assert len(rep["reports"]) == 4
    with out.open() as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 1 + 8
    assert all(r[CSV_COLUMNS.index("correct")] == "True" for r in rows[1:])


def test_dump_and_load(capsys, tmp_path):
    path = tmp_path / "ops.npz"
    base = ["simulate", "seq", "--kernel", "symm", "--n1", "7", "--n2", "3", "--M", "24"]
    a = run_json(capsys, *base, "--seed", "5", "--dump", str(path))
    b = run_json(capsys, *base, "--seed", "99", "--load", str(path))
    assert a["ledger"] == b["ledger"] and b["correctness"]["bitwise_equal"]
