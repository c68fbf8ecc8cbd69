import json
import math

import numpy as np
import pytest

from wdro import cli
from wdro.errors import ConfigError, NoRootError


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


# dataset ingestion ------------------------------------------------------------

def test_ingest_two_rows(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("x\n1.5\n-2\n")
    P, labels = cli.ingest_dataset(str(f))
    assert (P.n, P.dim) == (2, 1) and labels is None
    np.testing.assert_array_equal(P.weights, [0.5, 0.5])


def test_ingest_classification_labels(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("a,b,y\n1,2,1\n3,4,-1\n0,0,1\n")
    P, labels = cli.ingest_dataset(str(f), "y", "classification")
    np.testing.assert_array_equal(labels, [1, -1, 1])
    np.testing.assert_array_equal(P.points[:, -1], [1, -1, 1])


def test_ingest_names_the_bad_row(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("x,y\n1,2\nabc,3\n")
    with pytest.raises(ConfigError, match="row 2"):
        cli.ingest_dataset(str(f))


@pytest.mark.parametrize("body", ["x\n1\nnan\n", "x\n1\ninf\n", "x,y\n1,2\n3\n"])
def test_ingest_rejects_nonfinite_and_ragged_rows(tmp_path, body):
    f = tmp_path / "d.csv"
    f.write_text(body)
    with pytest.raises(ConfigError, match="row 2"):
        cli.ingest_dataset(str(f))


def test_ingest_mixed_label_alphabet(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("x,y\n1,1\n2,-1\n3,0.5\n")
    with pytest.raises(ConfigError, match="schema"):
        cli.ingest_dataset(str(f), "y", "classification")
    P, _ = cli.ingest_dataset(str(f), "y", "regression")
    assert P.dim == 2


def test_ingest_missing_file_and_column(tmp_path):
    with pytest.raises(ConfigError):
        cli.ingest_dataset(str(tmp_path / "none.csv"))
    f = tmp_path / "d.csv"
    f.write_text("x\n1\n")
    with pytest.raises(ConfigError):
        cli.ingest_dataset(str(f), "y")


# subcommands -----------------------------------------------------------------

def test_equivalence_check_abs_instance(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"loss": {"family": "linear", "beta": [2.0],
                                               "univariate": "absolute"},
                                      "alpha": 0.5, "data": {"points": [[1.0], [-1.0]]}})
    code, out, _ = run(["equivalence-check", "--config", cfg], capsys)
    assert code == 0
    res = json.loads(out)["results"]
    assert res["abs_gap"] <= 1e-6
    assert res["closed_form"] == pytest.approx(3.0)


def test_choice_mnl_uniform(capsys):
    code, out, _ = run(["choice", "--choice-family", "mnl", "--zbar", "0,0"], capsys)
    assert code == 0
    res = json.loads(out)["results"]
    np.testing.assert_allclose(res["probabilities"], [0.5, 0.5])
    assert res["alpha0"] == pytest.approx(-math.log(2), abs=1e-12)


def test_choice_nested_and_pcl(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"choice": {"family": "nested", "zbar": [0.1, 0.5, -0.2],
                                                 "nests": [[0, 1], [2]], "tau": [0.5, 1.0]}})
    code, out, _ = run(["choice", "--config", cfg], capsys)
    assert code == 0 and json.loads(out)["results"]["max_abs_gap"] <= 1e-8
    code, out, _ = run(["choice", "--config", cfg, "--choice-family", "pcl"], capsys)
    assert code == 0 and json.loads(out)["results"]["max_abs_gap"] <= 1e-8


def test_worst_case_zero_radius(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"data": {"points": [[1.0, 2.0], [0.5, -1.0]]}})
    code, out, _ = run(["worst-case", "--config", cfg, "--beta", "1,1", "--loss", "logistic",
                        "--alpha", "0"], capsys)
    res = json.loads(out)["results"]
    assert code == 0
    assert res["worst_case"] == res["erm"]
    assert "lambda_star" in res


def test_worst_case_infinite_order(capsys):
    code, out, _ = run(["worst-case", "--beta", "3,4", "--p", "inf", "--alpha", "0.5",
                        "--sampler", "gaussian", "--n", "5"], capsys)
    rep = json.loads(out)
    assert code == 0
    assert rep["config"]["p"] == "inf"
    assert rep["results"]["worst_case"] == pytest.approx(rep["results"]["erm"] + 2.5)


def test_dataset_flag(tmp_path, capsys):
    f = tmp_path / "d.csv"
    f.write_text("x1,x2,y\n1,0,2\n0,1,-1\n2,2,0\n")
    code, out, _ = run(["equivalence-check", "--family", "regression", "--beta", "0.5,0.5",
                        "--data", str(f), "--label-column", "y"], capsys)
    assert code == 0
    assert json.loads(out)["results"]["instance"]["dim"] == 3


def test_bounds_sandwich(capsys):
    code, out, _ = run(["bounds", "--family", "quadratic", "--beta", "1,-2", "--p", "3",
                        "--alpha", "0.2", "--sampler", "uniform", "--n", "8"], capsys)
    res = json.loads(out)["results"]
    assert code == 0
    assert res["lower"] <= res["worst_case"] + 1e-6 <= res["upper"] + 2e-6


def test_oracle_below_dual(capsys):
    code, out, _ = run(["oracle", "--family", "quadratic", "--beta", "1,0.5", "--p", "2",
                        "--alpha", "0.3", "--sampler", "gaussian", "--n", "6"], capsys)
    res = json.loads(out)["results"]
    assert code == 0 and res["oracle"] <= res["dual"] + 1e-6
    assert len(res["witness"]) == 6


def test_asymptotics_writes_csv(tmp_path, capsys):
    csv_path = tmp_path / "g.csv"
    code, out, _ = run(["asymptotics", "--family", "quadratic", "--beta", "1,0.5,-0.5",
                        "--p", "2", "--sampler", "gaussian", "--n", "20", "--k-max", "6",
                        "--csv", str(csv_path)], capsys)
    assert code == 0
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "alpha,worst_case,regularized,gap,gap_ratio"
    assert len(lines) == 7
    assert json.loads(out)["results"]["rows"] == 6


def test_fit(capsys):
    code, out, _ = run(["fit", "--family", "classification", "--beta", "0,0", "--alpha", "0.1",
                        "--sampler", "gaussian", "--n", "30"], capsys)
    res = json.loads(out)["results"]
    assert code == 0 and res["converged"]
    assert res["objective"] == pytest.approx(res["closed_form_check"])


# configuration and errors ---------------------------------------------------------

def test_flags_override_file(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"alpha": 0.9, "seed": 5, "data": {"sampler": "gaussian"}})
    _, out, _ = run(["worst-case", "--config", cfg, "--alpha", "0.1"], capsys)
    rep = json.loads(out)
    assert rep["config"]["alpha"] == 0.1
    assert rep["seed"] == 5


def test_unknown_key_is_rejected(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"alhpa": 0.1})
    code, _, err = run(["worst-case", "--config", cfg], capsys)
    assert code == 2 and json.loads(err)["error"] == "config"


@pytest.mark.parametrize("argv, code, category", [
    (["worst-case", "--p", "0.5"], 2, "config"),
    (["worst-case", "--alpha", "-1"], 2, "config"),
    (["worst-case", "--data", "/nonexistent.csv"], 2, "config"),
    (["equivalence-check", "--family", "quadratic", "--sampler", "gaussian"], 3, "domain"),
    (["worst-case", "--family", "quadratic", "--p", "1", "--sampler", "gaussian"], 4, "unbounded"),
])
def test_error_categories(argv, code, category, capsys):
    got, out, err = run(argv, capsys)
    assert got == code
    assert out == ""
    assert json.loads(err)["error"] == category


def test_kink_exit_code(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"loss": {"family": "linear", "beta": [1.0],
                                               "univariate": "absolute"},
                                      "p": 2, "data": {"points": [[0.0], [1.0]]},
                                      "certificate": {"kappa": 1.0, "h": 1.0}})
    code, _, err = run(["bounds", "--config", cfg], capsys)
    assert code == 5 and json.loads(err)["error"] == "kink"


def test_no_root_exit_code(monkeypatch, capsys):
    def boom(cfg):
        raise NoRootError("no shift")
    monkeypatch.setitem(cli.COMMANDS, "choice", boom)
    code, _, err = run(["choice"], capsys)
    assert code == 6 and json.loads(err) == {"error": "no-root", "message": "no shift"}


# determinism --------------------------------------------------------------------

@pytest.mark.parametrize("argv", [
    ["bounds", "--family", "quadratic", "--beta", "1,2", "--p", "2", "--sampler", "gaussian",
     "--seed", "11"],
    ["asymptotics", "--family", "quadratic", "--beta", "1,2", "--p", "2", "--sampler",
     "uniform", "--n", "10", "--k-max", "4"],
    ["choice", "--zbar", "0.3,-1,2"],
])
def test_reports_are_byte_identical(tmp_path, argv, capsys):
    texts = []
    for k in range(2):
        out = tmp_path / f"r{k}.json"
        csv_path = tmp_path / f"c{k}.csv"
        assert cli.main(argv + ["--out", str(out), "--csv", str(csv_path)]) == 0
        text = out.read_text()
        texts.append(text.replace(str(out), "OUT").replace(str(csv_path), "CSV"))
        if csv_path.exists():
            texts[-1] += csv_path.read_text()
    assert texts[0] == texts[1]


def test_report_round_trips_through_embedded_config(tmp_path, capsys):
    first = tmp_path / "a.json"
    assert cli.main(["worst-case", "--family", "regression", "--beta", "0.3,-0.2",
                     "--loss", "huber", "--p", "2", "--alpha", "0.4", "--sampler", "gaussian",
                     "--n", "12", "--seed", "3", "--out", str(first)]) == 0
    second = tmp_path / "b.json"
    assert cli.main(["worst-case", "--config", str(first), "--out", str(second)]) == 0
    a, b = json.loads(first.read_text()), json.loads(second.read_text())
    assert a["results"] == b["results"]
    a["config"]["output"] = b["config"]["output"] = None
    assert a == b


def test_timing_is_opt_in(capsys):
    _, out, _ = run(["choice"], capsys)
    assert "wall_clock_s" not in json.loads(out)
    _, out, _ = run(["choice", "--timing"], capsys)
    assert json.loads(out)["wall_clock_s"] >= 0
