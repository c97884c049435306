import json

import numpy as np
import pytest

from mldual.cli import main
from reference_data import DEGENERATE_U, SKEW_U


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "sol.json"
    U = [[3, 1, 4], [1, 5, 9], [2, 6, 5]]
    data = _write(path.with_name("u.json"), U)
    assert main(["solve", "--kind", "rect", "--m", "3", "--rank", "2", "--data", data,
                 "--out", str(path)]) == 0
    return path


def test_solve_output_schema(solved):
    doc = json.loads(solved.read_text())
    assert doc["model"] == {"kind": "rect", "m": 3, "n": 3, "r": 2}
    assert len(doc["points"]) == 10 and doc["certificate"]["pass"]
    assert set(doc["points"][0]) == {"P", "lambda", "residual", "rank", "loglik"}
    assert doc["meta"]["seed"] == 0 and "tolerances" in doc["meta"] and "version" in doc["meta"]


def test_verify_roundtrip_passes(solved, capsys):
    code, out, _ = run(capsys, "verify", "--points", str(solved))
    report = json.loads(out)
    assert code == 0 and report["pass"] and report["duality"]["self_dual_match"]


def test_verify_corrupted_fails(solved, tmp_path, capsys):
    doc = json.loads(solved.read_text())
    doc["points"][2]["P"]["entries"][4][0] += 1e-2
    bad = _write(tmp_path / "bad.json", doc)
    code, out, err = run(capsys, "verify", "--points", bad)
    assert code == 1 and not json.loads(out)["pass"]
    assert "point 2: critical residual" in err


def test_dualize_roundtrip(solved, tmp_path, capsys):
    dual = tmp_path / "dual.json"
    assert run(capsys, "dualize", "--points", str(solved), "--out", str(dual))[0] == 0
    back = tmp_path / "back.json"
    assert run(capsys, "dualize", "--points", str(dual), "--out", str(back))[0] == 0
    a, b = json.loads(solved.read_text()), json.loads(back.read_text())
    for p, q in zip(a["points"], b["points"]):
        x = np.array(p["P"]["entries"])
        y = np.array(q["P"]["entries"])
        assert np.abs(x - y).max() <= 1e-12


def test_degenerate_dualize_flags(tmp_path, capsys):
    from reference_data import DEGENERATE_P
    from mldual.critsys import make_critical_point
    from mldual.models import ModelSpec
    from mldual.serialization import dumps, solution_document

    spec = ModelSpec("rect", 4, 4, 2)
    doc = solution_document(spec, DEGENERATE_U, [make_critical_point(spec, DEGENERATE_P, DEGENERATE_U)])
    src = tmp_path / "deg.json"
    src.write_text(dumps(doc))
    code, out, _ = run(capsys, "dualize", "--points", str(src))
    res = json.loads(out)
    assert code == 0 and res["points"] == [] and len(res["degenerate"]) == 1
    assert res["pairs"][0]["dual_rank"] == 2


def test_degree_prints_count(tmp_path, capsys):
    out_path = tmp_path / "deg.json"
    code, out, _ = run(capsys, "degree", "--kind", "rect", "--m", "3", "--n", "3", "--rank", "2",
                       "--seeds", "0,1,2", "--out", str(out_path))
    assert code == 0 and out.strip() == "10"
    doc = json.loads(out_path.read_text())
    assert [r["seed"] for r in doc["runs"]] == [0, 1, 2]
    assert all(r["pass"] and r["loops"] > 0 and r["trace_residual"] is not None for r in doc["runs"])


def test_table_small(capsys):
    code, out, _ = run(capsys, "table", "--kind", "rect", "--max-m", "3", "--max-n", "3")
    assert code == 0
    assert out.strip().splitlines() == ["m,n,r=1,r=2,r=3", "3,3,1,10,1"]


def test_fiber_sample_deterministic_with_env_seed(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MLDUAL_SEED", "7")
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert main(["fiber-sample", "--kind", "sym", "--m", "4", "--rank", "2", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert json.loads(a.read_text())["meta"]["seed"] == 7
    c = tmp_path / "c.json"
    assert main(["fiber-sample", "--kind", "sym", "--m", "4", "--rank", "2", "--seed", "8",
                 "--out", str(c)]) == 0
    assert a.read_bytes() != c.read_bytes()


def test_solve_deterministic(tmp_path):
    data = _write(tmp_path / "u.json", (SKEW_U * 41).astype(int).tolist())
    outs = []
    for k in range(2):
        out = tmp_path / f"s{k}.json"
        assert main(["solve", "--kind", "skew", "--m", "4", "--rank", "2", "--data", data,
                     "--seed", "3", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


@pytest.mark.parametrize("argv", [
    ["degree", "--kind", "skew", "--m", "4", "--rank", "3"],
    ["degree", "--kind", "rect", "--m", "3", "--rank", "2", "--seeds", "0"],
    ["solve", "--kind", "rect", "--m", "3", "--rank", "2"],
    ["frobnicate"],
    ["fiber-sample", "--kind", "sym", "--m", "4", "--n", "5", "--rank", "2"],
])
def test_invalid_input_exit_code(argv, capsys):
    assert run(capsys, *argv)[0] == 3


def test_bad_data_files(tmp_path, capsys):
    asym = _write(tmp_path / "a.json", [[1, 2], [3, 1]])
    assert run(capsys, "solve", "--kind", "sym", "--m", "2", "--rank", "1", "--data", asym)[0] == 3
    wrong = _write(tmp_path / "w.json", [[1, 2, 3], [3, 1, 2]])
    assert run(capsys, "solve", "--kind", "rect", "--m", "2", "--rank", "1", "--data", wrong)[0] == 3
    diag = _write(tmp_path / "d.json", [[1, 2, 3], [2, 0, 4], [3, 4, 0]])
    assert run(capsys, "solve", "--kind", "skew", "--m", "3", "--rank", "2", "--data", diag)[0] == 3


def test_bad_env_seed(monkeypatch, capsys):
    monkeypatch.setenv("MLDUAL_SEED", "x")
    assert run(capsys, "fiber-sample", "--kind", "rect", "--m", "3", "--rank", "2")[0] == 3


def test_incomplete_exit_code(capsys):
    code, out, _ = run(capsys, "solve", "--kind", "rect", "--m", "3", "--rank", "2", "--generic",
                       "--max-loops", "2")
    assert code == 2 and not json.loads(out)["certificate"]["pass"]


def test_via_dual_solve(tmp_path, capsys):
    data = _write(tmp_path / "u.json", [[6, 1, 4, 1], [1, 4, 2, 6], [4, 2, 8, 3], [1, 6, 3, 2]])
    code, out, _ = run(capsys, "solve", "--kind", "sym", "--m", "4", "--rank", "3", "--data", data,
                       "--via-dual")
    doc = json.loads(out)
    assert code == 0 and doc["model"]["r"] == 3
    assert len(doc["points"]) + len(doc["degenerate"]) == 37
    assert all(p["rank"] == 3 for p in doc["points"])
