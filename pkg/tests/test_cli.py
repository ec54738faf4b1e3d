import csv
import json
from pathlib import Path

import numpy as np
import pytest

from aggbounds.cli import main
from aggbounds.mdp_core import Mdp

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
DESK = str(CONFIGS / "desk_a.json")
TINY = str(CONFIGS / "tiny.json")
FULL = str(CONFIGS / "full.json")


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def run(*argv):
    return main([str(a) for a in argv])


def test_solve_exact_desk(tmp_path):
    assert run("solve", "exact", "--config", DESK, "--out", tmp_path) == 0
    values = rows(tmp_path / "exact_values.csv")
    assert values[0] == ["state_index", "value"]
    assert len(values) == 457
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"].startswith("solve exact")
    assert {"exact_values.csv", "exact_policy.csv"} <= set(man["artifacts"])
    assert man["seed"] == 0 and "timings_s" in man


def test_artifact_checksums_reproducible(tmp_path):
    for d in ("a", "b"):
        assert run("solve", "lblp", "--config", DESK, "--out", tmp_path / d) == 0
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())["artifacts"]
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())["artifacts"]
    assert a == b


def test_bounds_compare_clean(tmp_path):
    assert run("bounds", "compare", "--config", DESK, "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "bounds_report.json").read_text())
    assert rep["ordering_violations"] == 0 and rep["exact_solved"]
    table = rows(tmp_path / "bounds.csv")
    assert table[0] == ["partition_index", "w_star", "v_min", "v_max", "v_star"]
    for r in table[1:]:
        w, lo, hi, _ = map(float, r[1:])
        assert w <= lo + 1e-6 and lo <= hi


def test_simulate_full_short(tmp_path):
    assert run("simulate", "--config", FULL, "--horizon", 2000, "--seed", 4, "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["seed"] == 4 and doc["horizon"] == 2000
    assert 1 <= doc["mean_dwell"] <= 10
    assert doc["mean_service_delay"] >= 1
    assert rows(tmp_path / "alerts.csv")[0][:4] == ["station", "arrival_t", "service_delay", "dwell"]


def test_policy_extract_then_eval(tmp_path):
    assert run("policy", "extract", "--config", DESK, "--source", "exact", "--out", tmp_path) == 0
    assert run("policy", "eval", "--config", DESK, "--policy", tmp_path / "policy.csv",
               "--out", tmp_path / "ev") == 0
    ev = np.array([float(r[1]) for r in rows(tmp_path / "ev" / "policy_values.csv")[1:]])
    assert run("solve", "exact", "--config", DESK, "--out", tmp_path / "ex") == 0
    ex = np.array([float(r[1]) for r in rows(tmp_path / "ex" / "exact_values.csv")[1:]])
    assert np.abs(ev - ex).max() <= 1e-7


def test_generic_mdp_and_lp(tmp_path):
    m = Mdp.from_rows([(0, 0, 1.0, {1: 1.0}), (1, 0, 0.0, {0: 1.0})], 0.5)
    m.dump(tmp_path / "m.json")
    assert run("solve", "exact", "--mdp", tmp_path / "m.json", "--out", tmp_path / "o") == 0
    v = [float(r[1]) for r in rows(tmp_path / "o" / "exact_values.csv")[1:]]
    np.testing.assert_allclose(v, [4 / 3, 2 / 3], atol=1e-8)
    (tmp_path / "p.lp").write_text("min 1 1\n1 0 >= 1\n0 1 >= 2\n")
    assert run("solve", "lp", "--lp", tmp_path / "p.lp", "--out", tmp_path / "l") == 0
    sol = json.loads((tmp_path / "l" / "lp_solution.json").read_text())
    assert sol["status"] == "optimal"
    assert sol["objective"] == pytest.approx(3.0)


@pytest.mark.parametrize("kind, extra", [("rlp", []), ("ib", ["--L", "3"]), ("ublp", [])])
def test_other_solvers(tmp_path, kind, extra):
    assert run("solve", kind, "--config", DESK, "--out", tmp_path, *extra) == 0
    assert (tmp_path / f"{kind}_values.csv").exists()


def test_verify_and_oracle_tiny(tmp_path):
    assert run("verify", "--config", TINY, "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert all(c["passed"] for c in doc)
    assert run("oracle", "nlp", "--config", TINY, "--out", tmp_path / "n") == 0
    rep = json.loads((tmp_path / "n" / "nlp_report.json").read_text())
    assert rep["max_abs_diff"] <= 1e-7


def test_exit_codes(tmp_path, capsys):
    assert run("solve", "exact", "--config", tmp_path / "missing.json", "--out", tmp_path) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"N": 4, "stations": [9], "D": 2, "Gamma": 3, "alpha": 1.0,
                               "rho": 0.1, "lambda": 0.9}))
    assert run("build", "--config", bad, "--out", tmp_path) == 2
    assert run("solve", "exact", "--config", FULL, "--out", tmp_path) == 2
    assert "--allow-large" in capsys.readouterr().err
    assert run("simulate", "--config", DESK, "--horizon", 0, "--out", tmp_path) == 2
