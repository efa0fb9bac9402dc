import json
import os
import subprocess
import sys

import pytest

from corpus import CORPUS
from veinlab.cli import EXIT_BUDGET, EXIT_INPUT, EXIT_OK, EXIT_REFUTED, main

CONSTRUCT = ["construct", "--s-tree", "samples/s_sparse.tree", "--u-family", "samples/u_short.tree",
             "--registry", "samples/reg.toml", "--vein", "(r2 fin (r0 leaf))", "--triples", "0,0,0;1,0,0"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def zero_at(tmp_path):
    p = tmp_path / "zero_at.flow"
    p.write_text(CORPUS["ZERO_AT"][0])
    return str(p)


# vein ----------------------------------------------------------------------------------

def test_double_prime_of_v21(capsys):
    code, out, _ = run(capsys, "vein", "op", "double-prime;normalize", "--in", "samples/v21.vein")
    assert code == EXIT_OK and out.strip() == "(r1 inf (r0 leaf))"


def test_vein_actions(capsys):
    assert run(capsys, "vein", "normalize", "(r0 fin (r1 inf (r0 leaf)))")[1].strip() == "(r1 inf (r0 leaf))"
    assert run(capsys, "vein", "print", "--vein", "(r2 fin ; c\n (r0 leaf))")[1].strip() == "(r2 fin (r0 leaf))"
    code, out, _ = run(capsys, "vein", "op", "preset-chain YX 1")
    assert code == EXIT_OK and out.count("r2 fin") == 2
    code, out, _ = run(capsys, "vein", "op", "concat (r1 inf (r0 leaf));inc-fin 2;closure", "--in",
                       "samples/v21.vein")
    assert out.strip() == "(r0 inf (r2 fin (r0 inf (r2 fin (r1 inf (r0 leaf))))))"
    code, out, _ = run(capsys, "vein", "op", "tree-of", "--in", "samples/v21.vein", "--depth", "2")
    assert out.splitlines()[0] == "<>\tr0\tinf"


def test_vein_errors_carry_columns(capsys):
    code, _, err = run(capsys, "vein", "parse", "(r2 fin (r0 leef))")
    assert code == EXIT_INPUT and "column 13" in err
    code, _, err = run(capsys, "vein", "op", "wobble", "--in", "samples/v21.vein")
    assert code == EXIT_INPUT and "wobble" in err
    assert run(capsys, "vein", "op", "prime", "--vein", "(r1 fin (r1 fin (r0 leaf)))")[0] == EXIT_INPUT


# flow ------------------------------------------------------------------------------------

def test_flow_eval_dir(capsys):
    code, out, _ = run(capsys, "flow", "eval", "--flow", "samples/dir.flow", "--point", "0/0", "--bits", "4")
    assert code == EXIT_OK and out == "1111\n"


def test_flow_eval_budget_and_undefined(capsys, zero_at, tmp_path):
    code, _, err = run(capsys, "flow", "eval", "--flow", zero_at, "--point", "/1", "--stages", "100")
    assert code == EXIT_BUDGET and "budget" in err
    never = tmp_path / "never.flow"
    never.write_text(CORPUS["NEVER"][0])
    code, _, err = run(capsys, "flow", "eval", "--flow", str(never), "--point", "/0", "--stages", "50")
    assert code == EXIT_INPUT and "undefined" in err


def test_flow_eval_reads_the_budget_from_the_environment(capsys, zero_at, monkeypatch):
    monkeypatch.setenv("VEINLAB_BUDGET_DEFAULT", "40")
    code, _, err = run(capsys, "flow", "eval", "--flow", zero_at, "--point", "/1")
    assert code == EXIT_BUDGET and "40 stages" in err


def test_flow_tp_trace(capsys):
    code, out, _ = run(capsys, "flow", "tp-trace", "--flow", "samples/dir.flow", "--point", "/0110",
                       "--stages", "4")
    recs = [json.loads(line) for line in out.splitlines()]
    assert code == EXIT_OK and [r["stage"] for r in recs] == [1, 2, 3, 4]
    assert recs[-1]["tp"] == "<0>" and recs[-1]["timers"]["<>"] == 4


def test_flow_totalize(capsys, zero_at, tmp_path):
    code, out, _ = run(capsys, "flow", "totalize", "--in", zero_at)
    assert code == EXIT_OK and "totalize = true" in out
    dest = tmp_path / "tot.flow"
    assert run(capsys, "flow", "totalize", "--in", zero_at, "--out", str(dest))[0] == EXIT_OK
    code, _, err = run(capsys, "flow", "eval", "--flow", str(dest), "--point", "/1", "--stages", "200")
    # the totalized flow decides that 1^w lies in no outcome
    assert code == EXIT_INPUT and "nowhere" in err


def test_flow_file_errors(capsys, tmp_path):
    bad = tmp_path / "bad.flow"
    bad.write_text('name = "x"\n[tree]\n"<>" = "r2 fin 2"\n"<*>" = "r0 lef"\n')
    code, _, err = run(capsys, "flow", "eval", "--flow", str(bad))
    assert code == EXIT_INPUT and f"{bad}:4:1" in err
    assert run(capsys, "flow", "eval")[0] == EXIT_INPUT
    assert run(capsys, "flow", "eval", "--flow", str(tmp_path / "missing.flow"))[0] == EXIT_INPUT


def test_usage_errors_are_input_errors(capsys):
    with pytest.raises(SystemExit) as info:
        main(["vein", "explode"])
    assert info.value.code == EXIT_INPUT
    capsys.readouterr()


# construct / verify -------------------------------------------------------------------------

def test_construct_stage_zero_prints_the_comb(capsys):
    code, out, _ = run(capsys, *CONSTRUCT, "--stages", "0", "--show-depth", "3")
    lines = out.splitlines()
    assert code == EXIT_OK
    assert lines[:2] == ["# <0,0,0> rho=11", "# <1,0,0> rho=011"]
    assert set(lines[2:]) == {"<>", "0", "1", "00", "01", "10", "11", "000", "001", "010", "011", "100",
                              "110", "111"}


def test_construct_is_deterministic(capsys, tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    out = []
    for p in (a, b):
        code, text, _ = run(capsys, *CONSTRUCT, "--stages", "300", "--trace", str(p))
        assert code == EXIT_OK
        out.append(text)
    assert out[0] == out[1] and a.read_bytes() == b.read_bytes()
    kinds = {json.loads(line)["event"] for line in a.read_text().splitlines()}
    assert kinds <= {"attention", "freeze", "gamma"}
    assert out[0].splitlines()[0].split("\t")[:3] == ["triple", "rho", "attention"]


def test_construct_report_and_requirement(capsys, tmp_path):
    rep = tmp_path / "report"
    code, out, err = run(capsys, *CONSTRUCT, "--stages", "300", "--report", str(rep), "--requirement", "/0;1/0")
    assert code == EXIT_OK
    assert sorted(os.listdir(rep)) == ["attention.png", "growth.png", "summary.tsv"]
    assert out.count("# requirement") == 4 and "escaped" in out
    assert "wrote" in err


def test_construct_input_errors(capsys):
    code, _, err = run(capsys, *CONSTRUCT[:-1], "0,0", "--stages", "5")
    assert code == EXIT_INPUT and "three naturals" in err
    code, _, err = run(capsys, "construct", "--s-tree", "samples/u_full.tree", "--u-family",
                       "samples/u_short.tree", "--stages", "5")
    assert code == EXIT_INPUT and "minimal non-members" in err


def test_verify_round_trip(capsys):
    args = ["verify"] + CONSTRUCT[1:] + ["--stages", "300", "--samples", "/0;1/0", "--bits", "12"]
    code, out, _ = run(capsys, *args)
    lines = out.splitlines()
    assert code == EXIT_OK
    assert sum(line.endswith("\tok") for line in lines) == 4
    assert lines[-1] == "# embeds into prime branching: true"


# check-reduction ----------------------------------------------------------------------------

def test_check_reduction_verdicts(capsys):
    base = ["check-reduction", "--F", "samples/s_sparse.tree", "--G", "samples/s_sparse.tree"]
    code, out, _ = run(capsys, *base, "--samples", "/0;1/0")
    assert code == EXIT_OK and out.splitlines()[-1] == "# consistent=2 refuted=0 inconclusive=0"
    code, out, _ = run(capsys, *base, "--theta", "flip", "--samples", "/0")
    assert code == EXIT_REFUTED and "refuted(at bit 1)" in out
    code, out, _ = run(capsys, *base, "--theta", "lag 40", "--samples", "/0", "--budget", "20")
    assert code == EXIT_BUDGET
    code, out, _ = run(capsys, "check-reduction", "--kind", "weihrauch", "--F", "point", "--G", "point",
                       "--h", "flip", "--samples", "/0;1/0", "--precision", "8", "--budget", "50")
    assert code == EXIT_REFUTED and out.count("refuted(at bit 0)") == 2
    assert run(capsys, *base, "--theta", "warp 3", "--samples", "/0")[0] == EXIT_INPUT


def test_module_entry_point():
    got = subprocess.run([sys.executable, "-m", "veinlab.cli", "flow", "eval", "--flow", "samples/dir.flow",
                          "--point", "/10", "--bits", "4", "--stages", "200"],
                         capture_output=True, text=True, check=False)
    assert got.returncode == 0 and got.stdout == "0000\n"
