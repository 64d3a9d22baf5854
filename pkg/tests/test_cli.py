import csv
import io
import json
import math
import subprocess
import sys

import pytest

from gauss_plp import library_path
from gauss_plp.algebra import normal_pdf
from gauss_plp.cli import RunConfig, emit_json, main, parse_grid, run
from gauss_plp.engine import answer_query
from gauss_plp.program import parse_program


def lib(name):
    return str(library_path(name))


def call(argv):
    out, err = io.StringIO(), io.StringIO()
    old = sys.stdout, sys.stderr
    sys.stdout, sys.stderr = out, err
    try:
        code = main(argv)
    finally:
        sys.stdout, sys.stderr = old
    return code, out.getvalue(), err.getvalue()


def test_mixture_text():
    code, out, _ = call(["run", lib("mixture"), "-q", "widget(X)."])
    assert code == 0
    assert out.splitlines()[0] == "0.3 * N(X; 2.5, 1.1) + 0.7 * N(X; 3.5, 1.1)"


def test_kalman_grid_csv():
    code, out, _ = call(["run", lib("kalman"), "-q", "kf(1,T).", "--normalize", "--grid", "T:-4:8:7",
                         "--format", "csv"])
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["value", "density"]
    assert len(rows) == 8
    xs = [float(r[0]) for r in rows[1:]]
    assert xs == [-4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 8.0]
    for x, (_, d) in zip(xs, rows[1:]):
        assert math.isclose(float(d), normal_pdf(x, 5 / 3, 2 / 3), rel_tol=1e-11, abs_tol=1e-300)


def test_q_table():
    code, out, _ = call(["run", lib("q"), "-q", "q(Y)."])
    assert code == 0
    lines = out.splitlines()
    i = lines.index("Y\tprobability")
    assert lines[i + 1:i + 4] == ["1\t0.3", "2\t1", "3\t0.7"]


def test_q_csv_without_grid():
    code, out, _ = call(["run", lib("q"), "-q", "q(Y)", "--format", "csv"])
    assert code == 0
    assert out == "value,density\n1,0.3\n2,1\n3,0.7\n"


def test_json_layout():
    code, out, _ = call(["run", lib("mixture"), "-q", "widget(X).", "--format", "json"])
    assert code == 0
    doc = json.loads(out)
    assert list(doc) == ["terms", "meta"]
    assert [t["coeff"] for t in doc["terms"]] == [0.3, 0.7]
    t0 = doc["terms"][0]
    assert list(t0) == ["coeff", "deltas", "gaussians", "constraints"]
    assert t0["gaussians"] == [{"arg": {"coeffs": {"X": 1.0}, "const": 0.0}, "mean": 2.5, "variance": 1.1}]
    assert doc["meta"] == {"derivations": 1, "depth": 5}


def test_json_trivial_and_zero():
    p = parse_program("ok.\nno :- fail_here.\nfail_here :- 1 = 2.\n")
    one = json.loads(emit_json(answer_query(p, "ok.")))
    assert one["terms"] == [{"coeff": 1.0, "deltas": [], "gaussians": [], "constraints": []}]
    zero = json.loads(emit_json(answer_query(p, "no.")))
    assert zero["terms"] == []


def test_text_and_json_agree():
    for name, q in (("mixture", "widget(X)."), ("kalman", "kf(1,T)."), ("hybrid", "structure(Z).")):
        _, text, _ = call(["run", lib(name), "-q", q])
        _, js, _ = call(["run", lib(name), "-q", q, "--format", "json"])
        first = text.splitlines()[0]
        for t in json.loads(js)["terms"]:
            assert f"{t['coeff']:.12g}" in first
            for g in t["gaussians"]:
                assert f"; {g['mean']:.12g}, {g['variance']:.12g})" in first
            for d in t["deltas"]:
                v = d["value"]
                assert f"delta({d['var']}={v:.12g})" in first if isinstance(v, float) else v in first


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.pl"
    bad.write_text("p(X :- q.\n")
    code, _, err = call(["run", str(bad), "-q", "p(X)."])
    assert code == 2 and "[parse]" in err and "line 1" in err
    code, _, err = call(["run", str(tmp_path / "missing.pl"), "-q", "p(X)."])
    assert code == 2 and "[io]" in err
    zero = tmp_path / "zero.pl"
    zero.write_text("p(a).\n")
    code, out, _ = call(["run", str(zero), "-q", "p(b)."])
    assert code == 1 and out.strip() == "0"
    code, _, err = call(["run", lib("q"), "-q", "nothing(X)."])
    assert code == 2 and "[derive] unknown predicate" in err
    code, _, err = call(["run", lib("mixture"), "-q", "widget(X).", "--format", "csv"])
    assert code == 2 and "[output]" in err


def test_validation_error_exit(tmp_path):
    f = tmp_path / "v.pl"
    f.write_text("values(m, [a, b]).\n:- set_sw(m, [0.5, 0.6]).\n")
    code, _, err = call(["run", str(f), "-q", "true."])
    assert code == 2 and "sum to 1.1" in err


def test_depth_flag(tmp_path):
    f = tmp_path / "loop.pl"
    f.write_text("loop :- loop.\n")
    code, _, err = call(["run", str(f), "-q", "loop.", "--depth", "30"])
    assert code == 2 and "30" in err
    code, _, err = call(["run", str(f), "-q", "loop.", "--depth", "0"])
    assert code == 2


def test_check_enumeration():
    code, out, _ = call(["run", lib("q"), "-q", "q(Y).", "--check"])
    assert code == 0
    assert out.splitlines()[-1].startswith("check: enumeration") and out.rstrip().endswith("PASS")


def test_check_sampling_reported_in_json():
    code, out, _ = call(["run", lib("mixture"), "-q", "widget(X).", "--check", "--format", "json", "--seed", "4"])
    assert code == 0
    doc = json.loads(out)
    assert doc["check"]["oracle"] == "sampling" and doc["check"]["passed"] is True


def test_grid_parsing():
    assert parse_grid("T:-4:8:7") == ("T", -4.0, 8.0, 7)
    import argparse
    for bad in ("T:1:2", "T:2:1:5", "T:0:1:1", "T:a:1:3"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_grid(bad)
    with pytest.raises(ValueError):
        RunConfig("x.pl", "p.", grid=("T", 0.0, 1.0, 1))
    with pytest.raises(ValueError):
        RunConfig("x.pl", "p.", depth_limit=0)


def test_run_with_explicit_streams():
    out, err = io.StringIO(), io.StringIO()
    assert run(RunConfig(lib("hybrid"), "structure(Z)."), out, err) == 0
    assert out.getvalue().startswith("0.3 * N(Z; 2, 1) + 0.35 * delta(Z=1) + 0.35 * delta(Z=2)")


def test_byte_identical_runs():
    args = [sys.executable, "-m", "gauss_plp.cli", "run", lib("mixture"), "-q", "widget(X).",
            "--check", "--seed", "7", "--grid", "X:0:5:6", "--format", "json"]
    a = subprocess.run(args, capture_output=True, check=True).stdout
    b = subprocess.run(args, capture_output=True, check=True).stdout
    assert a == b and a
