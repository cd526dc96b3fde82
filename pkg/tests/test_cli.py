import json
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conjloglin.cli import main

FOUR_CYCLE = {"variables": [{"name": v, "levels": 2} for v in "abcd"],
              "graph": {"edges": [["a", "b"], ["b", "c"], ["c", "d"], ["d", "a"]]}}
SATURATED = {"variables": [{"name": "a", "levels": 2}, {"name": "b", "levels": 2}]}
CHAIN = {"variables": [{"name": v, "levels": 2} for v in "abc"], "graph": {"edges": [["a", "b"], ["b", "c"]]}}
SPINA_BIFIDA = {"variables": [{"name": v, "levels": 2} for v in "abc"], "generators": [["a"], ["b", "c"]]}


@pytest.fixture
def files(tmp_path):
    def write(name, payload):
        path = tmp_path / name
        path.write_text(payload if isinstance(payload, str) else json.dumps(payload))
        return str(path)
    return write


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip().startswith("{") else out)


def test_perks_and_check(files, capsys, tmp_path):
    model = files("m.json", FOUR_CYCLE)
    hyper = str(tmp_path / "h.json")
    code, rep = run(["prior", "perks", "--model", model, "--out", hyper], capsys)
    assert code == 0 and rep["outputs"]["alpha"] == 1.0
    doc = json.loads(open(hyper).read())
    values = {"".join(e["set"]): e["value"] for e in doc["s"]}
    assert values["a"] == 0.5 and values["ab"] == 0.25
    code, rep = run(["prior", "check", "--model", model, "--hyper", hyper], capsys)
    assert code == 0 and rep["outputs"]["proper"]
    assert rep["model_hash"] == doc["model_hash"]


def test_check_improper_exit_code(files, capsys):
    model = files("m.json", {"variables": [{"name": "a", "levels": 2}]})
    hyper = files("h.json", {"alpha": 0.5, "s": [{"set": ["a"], "cell": [1], "value": 0.6}]})
    code, rep = run(["prior", "check", "--model", model, "--hyper", hyper], capsys)
    assert code == 2
    assert not rep["outputs"]["proper"] and rep["outputs"]["necessary_condition_violations"]


def test_from_table(files, capsys):
    model = files("m.json", SATURATED)
    table = files("t.csv", "a,b,count\n0,0,1\n0,1,1\n1,0,1\n1,1,1\n")
    code, rep = run(["prior", "from-table", "--model", model, "--table", table], capsys)
    assert code == 0 and rep["outputs"]["alpha"] == 4.0


def test_transform_uniform_and_zero_cell(files, capsys, tmp_path):
    model = files("m.json", FOUR_CYCLE)
    theta = files("t.json", {"theta": [{"set": list(s), "cell": [1] * len(s), "value": 0.0}
                                       for s in ["a", "b", "c", "d", "ab", "ad", "bc", "cd"]]})
    out = str(tmp_path / "p.json")
    code, rep = run(["transform", "--model", model, "--input", theta, "--direction", "theta-to-p", "--out", out],
                    capsys)
    assert code == 0 and rep["outputs"]["round_trip_residual"] < 1e-10
    probs = [c["prob"] for c in json.loads(open(out).read())["cells"]]
    assert_allclose(probs, 1 / 16)
    doc = json.loads(open(out).read())
    doc["cells"][3]["prob"] = 0.0
    doc["cells"][0]["prob"] += 1 / 16
    bad = files("bad.json", doc)
    code, _ = run(["transform", "--model", model, "--input", bad, "--direction", "p-to-theta"], capsys)
    assert code == 2


def test_transform_round_trip_random(files, capsys, tmp_path, rng):
    model = files("m.json", FOUR_CYCLE)
    labels = ["a", "b", "c", "d", "ab", "ad", "bc", "cd"]
    theta = files("t.json", {"theta": [{"set": list(s), "cell": [1] * len(s), "value": float(v)}
                                       for s, v in zip(labels, rng.normal(size=8))]})
    p = str(tmp_path / "p.json")
    run(["transform", "--model", model, "--input", theta, "--direction", "theta-to-p", "--out", p], capsys)
    code, rep = run(["transform", "--model", model, "--input", p, "--direction", "p-to-free"], capsys)
    assert code == 0 and rep["outputs"]["round_trip_residual"] < 1e-10
    free = files("free.json", rep["outputs"]["content"])
    code, rep = run(["transform", "--model", model, "--input", free, "--direction", "free-to-p"], capsys)
    assert code == 0 and rep["outputs"]["round_trip_residual"] < 1e-10


def test_hash_mismatch(files, capsys, tmp_path):
    model = files("m.json", FOUR_CYCLE)
    other = files("o.json", SATURATED)
    hyper = str(tmp_path / "h.json")
    run(["prior", "perks", "--model", other, "--out", hyper], capsys)
    code, rep = run(["evidence", "--model", model, "--hyper", hyper], capsys)
    assert code == 2 and "different model" in rep["diagnostics"][0]


def test_posterior(files, capsys, tmp_path):
    model = files("m.json", SATURATED)
    hyper = str(tmp_path / "h.json")
    run(["prior", "perks", "--model", model, "--out", hyper], capsys)
    empty = files("e.csv", "a,b,count\n")
    code, rep = run(["posterior", "--model", model, "--hyper", hyper, "--table", empty], capsys)
    assert code == 0 and rep["outputs"]["alpha"] == 1.0
    table = files("t.csv", "a,b,count\n0,0,3\n0,1,1\n1,0,2\n1,1,2\n")
    code, rep = run(["posterior", "--model", model, "--hyper", hyper, "--table", table], capsys)
    s = {"".join(e["set"]): e["value"] for e in rep["outputs"]["content"]["s"]}
    assert rep["outputs"]["alpha"] == 9.0 and s == {"a": 4.5, "b": 3.5, "ab": 2.25}
    wrong = files("w.csv", "a,c,count\n0,0,1\n")
    code, _ = run(["posterior", "--model", model, "--hyper", hyper, "--table", wrong], capsys)
    assert code == 2


def test_evidence_closed_form_vs_importance(files, capsys, tmp_path):
    model = files("m.json", CHAIN)
    hyper = str(tmp_path / "h.json")
    run(["prior", "perks", "--model", model, "--out", hyper], capsys)
    _, closed = run(["evidence", "--model", model, "--hyper", hyper, "--closed-form"], capsys)
    _, mc = run(["evidence", "--model", model, "--hyper", hyper, "--method", "is", "--seed", "11"], capsys)
    assert closed["outputs"]["method"] == "closed_form"
    assert abs(closed["outputs"]["log_i"] - mc["outputs"]["log_i"]) < 3 * mc["outputs"]["std_error"]
    _, ten = run(["evidence", "--model", model, "--hyper", hyper, "--log10"], capsys)
    assert_allclose(ten["outputs"]["log_i"], closed["outputs"]["log_i"] / np.log(10))


def test_closed_form_refused_for_cycle(files, capsys, tmp_path):
    model = files("m.json", FOUR_CYCLE)
    hyper = str(tmp_path / "h.json")
    run(["prior", "perks", "--model", model, "--out", hyper], capsys)
    code, _ = run(["evidence", "--model", model, "--hyper", hyper, "--closed-form"], capsys)
    assert code == 2


def test_report_is_byte_stable(files, tmp_path):
    model = files("m.json", FOUR_CYCLE)
    hyper = str(tmp_path / "h.json")
    main(["prior", "perks", "--model", model, "--out", hyper])
    texts = []
    for k, workers in enumerate((1, 2)):
        report = tmp_path / f"r{k}.json"
        main(["--report", str(report), "evidence", "--model", model, "--hyper", hyper, "--draws", "20000",
              "--seed", "4", "--workers", str(workers)])
        texts.append(report.read_bytes())
    assert texts[0] == texts[1]


def test_bayes_factor_identical_models(files, capsys, tmp_path):
    model = files("m.json", SATURATED)
    hyper = str(tmp_path / "h.json")
    run(["prior", "perks", "--model", model, "--out", hyper], capsys)
    table = files("t.csv", "a,b,count\n0,0,40\n0,1,10\n1,0,10\n1,1,40\n")
    code, rep = run(["bf", "--model1", model, "--hyper1", hyper, "--model2", model, "--hyper2", hyper,
                     "--table", table], capsys)
    assert code == 0 and rep["outputs"]["log_bf"] == 0.0


def test_elicit(files, capsys):
    model = files("m.json", SPINA_BIFIDA)
    hyper = files("h.json", {"alpha": 12.0, "s": [
        {"set": ["a"], "cell": [1], "value": 3.0}, {"set": ["b"], "cell": [1], "value": 4.0},
        {"set": ["c"], "cell": [1], "value": 5.0}, {"set": ["b", "c"], "cell": [1, 1], "value": 2.0}]})
    code, rep = run(["elicit", "--model", model, "--hyper", hyper, "--set", "a"], capsys)
    assert code == 0
    assert abs(rep["outputs"]["value"] - 3.0 / (12.0 - 3.0 - 1)) < 1e-12


def test_dump_f_matrix(files, capsys):
    model = files("m.json", FOUR_CYCLE)
    code, text = run(["dump-f-matrix", "--model", model], capsys)
    lines = text.strip().splitlines()
    assert code == 0 and len(lines) == 9
    assert lines[0].split(",")[:6] == ["row", "empty", "a", "b", "c", "d"]


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["evidence", "--model", "x.json"])
    assert exc.value.code == 1
    assert main(["evidence", "--model", "missing.json", "--hyper", "missing.json"]) == 1


def test_strict_escalates_warnings(files, capsys, tmp_path):
    # a dependent table projected onto the independence model leaves a diagnostic
    p = files("p.json", {"cells": [{"cell": [i, j], "prob": v} for (i, j), v in
                                   zip([(0, 0), (0, 1), (1, 0), (1, 1)], [0.1, 0.2, 0.3, 0.4])]})
    ind = files("i.json", {"variables": SATURATED["variables"], "graph": {"edges": []}})
    code, _ = run(["--strict", "transform", "--model", ind, "--input", p, "--direction", "p-to-theta"], capsys)
    assert code == 3
    code, _ = run(["transform", "--model", ind, "--input", p, "--direction", "p-to-theta"], capsys)
    assert code == 0


def test_console_script_entry_point(files):
    model = files("m.json", SATURATED)
    proc = subprocess.run([sys.executable, "-m", "conjloglin.cli", "prior", "perks", "--model", model],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["command"] == "prior perks"
