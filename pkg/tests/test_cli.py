import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mrash import mr_ash
from mrash.cli import main, read_table, shrinkage_curve
from mrash.data import RegressionData
from mrash.normal_means import ScaleMixturePrior


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return str(path)


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


@pytest.fixture
def tiny(tmp_path):
    x = np.array([[1.0, 0.3, -0.2], [2.0, -0.1, 0.4], [-1.0, 0.5, 0.1], [0.5, -0.4, -0.3], [-1.5, 0.2, 0.6]])
    y = 2.0 * x[:, 0]
    return write_csv(tmp_path / "tiny.csv", ["x1", "x2", "x3", "y"], np.column_stack([x, y]).tolist()), x, y


@pytest.fixture
def medium(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((80, 12))
    y = X[:, :3] @ np.array([1.5, -1.0, 0.5]) + 0.5 * rng.standard_normal(80)
    header = [f"f{j}" for j in range(12)] + ["resp"]
    train = write_csv(tmp_path / "train.csv", header, np.column_stack([X, y]).tolist())
    Xt = rng.standard_normal((30, 12))
    yt = Xt[:, :3] @ np.array([1.5, -1.0, 0.5]) + 0.5 * rng.standard_normal(30)
    test = write_csv(tmp_path / "test.csv", header, np.column_stack([Xt, yt]).tolist())
    return train, test, X, y, Xt


# --- fit

def test_fit_tiny_dominant_first_coefficient(tiny, tmp_path):
    path, x, y = tiny
    out = tmp_path / "fit.json"
    code = main(["fit", "--input", path, "--response", "y", "--folds", "5", "--seed", "1", "--out", str(out)])
    assert code in (0, 1)
    doc = json.loads(out.read_text())
    b = np.array(doc["b_bar"])
    assert abs(b[0]) > 10 * np.max(np.abs(b[1:]))
    ref = mr_ash.fit(RegressionData(x, y), n_folds=5, seed=1)
    np.testing.assert_array_equal(b, ref.b_bar)
    assert doc["intercept"] == ref.intercept
    for key in ("grid", "weights", "sigma2", "n_outer_iters", "converged"):
        assert key in doc


def test_fit_writes_elbo_trace(medium, tmp_path, capsys):
    train, *_ = medium
    out = tmp_path / "m.json"
    assert main(["fit", "--input", train, "--response", "resp", "--seed", "0", "--out", str(out),
                 "--max-outer", "5000"]) == 0
    header, rows = read_csv(tmp_path / "m.elbo.csv")
    assert header == ["iteration", "elbo", "sigma2", "pi1"]
    assert rows[:, 0].tolist() == list(range(1, rows.shape[0] + 1))
    assert np.all(np.diff(rows[:, 1]) >= -1e-8)
    text = capsys.readouterr().out
    assert "nonzero:" in text and "sigma2:" in text and "pi1:" in text


def test_fit_missing_response_column(tiny, tmp_path, capsys):
    path, _, _ = tiny
    code = main(["fit", "--input", path, "--response", "target", "--out", str(tmp_path / "f.json")])
    assert code == 2
    assert "target" in capsys.readouterr().err


def test_fit_response_by_index(tiny, tmp_path):
    path, _, _ = tiny
    out = tmp_path / "f.json"
    assert main(["fit", "--input", path, "--response", "3", "--init", "null", "--out", str(out)]) in (0, 1)
    assert json.loads(out.read_text())["response"] == "y"


def test_fit_ridge_mode(medium, tmp_path):
    train, _, X, y, _ = medium
    out = tmp_path / "r.json"
    code = main(["fit", "--input", train, "--response", "resp", "--init", "null", "--grid-k", "1",
                 "--grid", "1.0", "--fix-sigma2", "--sigma2", "0.7", "--tol", "1e-13", "--out", str(out)])
    assert code == 0
    b = np.array(json.loads(out.read_text())["b_bar"])
    Xc, yc = X - X.mean(axis=0), y - y.mean()
    ridge = np.linalg.solve(Xc.T @ Xc + np.eye(12), Xc.T @ yc)
    np.testing.assert_allclose(b, ridge, rtol=1e-6, atol=1e-9)


def test_fit_grid_k_mismatch(medium, tmp_path):
    train, *_ = medium
    assert main(["fit", "--input", train, "--response", "resp", "--grid-k", "3", "--grid", "0,1",
                 "--out", str(tmp_path / "x.json")]) == 2


def test_fit_non_convergence_exit_one(medium, tmp_path):
    train, *_ = medium
    out = tmp_path / "nc.json"
    code = main(["fit", "--input", train, "--response", "resp", "--init", "null", "--max-outer", "1",
                 "--out", str(out)])
    assert code == 1
    assert json.loads(out.read_text())["converged"] is False


def test_fit_with_test_file(medium, tmp_path, capsys):
    train, test, *_ = medium
    code = main(["fit", "--input", train, "--response", "resp", "--test", test, "--seed", "2",
                 "--max-outer", "5000", "--format", "json", "--out", str(tmp_path / "t.json")])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert 0 < summary["test_rmse"] < 1.0


def test_fit_test_file_dimension_mismatch(medium, tmp_path):
    train, _, _, _, Xt = medium
    bad = write_csv(tmp_path / "bad.csv", [f"f{j}" for j in range(5)] + ["resp"],
                    np.column_stack([Xt[:, :5], Xt[:, 0]]).tolist())
    code = main(["fit", "--input", train, "--response", "resp", "--test", bad, "--init", "null",
                 "--out", str(tmp_path / "t.json")])
    assert code == 3


def test_fit_init_file(medium, tmp_path):
    train, *_ = medium
    init = write_csv(tmp_path / "b0.csv", ["b"], [[0.1]] * 12)
    short = write_csv(tmp_path / "b1.csv", ["b"], [[0.1]] * 3)
    out = str(tmp_path / "i.json")
    assert main(["fit", "--input", train, "--response", "resp", "--init", "file", "--init-file", init,
                 "--max-outer", "5000", "--out", out]) == 0
    assert main(["fit", "--input", train, "--response", "resp", "--init", "file", "--init-file", short,
                 "--out", out]) == 3
    assert main(["fit", "--input", train, "--response", "resp", "--init", "file", "--out", out]) == 2


@pytest.mark.parametrize("body", ["a,b,y\n1,2,3\n4,5\n", "a,b,y\n1,2,x\n", "", "a,b,y\n"])
def test_parser_rejects_bad_tables(tmp_path, body):
    f = tmp_path / "bad.csv"
    f.write_text(body)
    assert main(["fit", "--input", str(f), "--response", "y", "--out", str(tmp_path / "o.json")]) == 2


def test_read_table_skips_blank_lines(tmp_path):
    f = tmp_path / "t.csv"
    f.write_text("a,b\n1,2\n\n3,4\n")
    header, M = read_table(f)
    assert header == ["a", "b"] and M.tolist() == [[1, 2], [3, 4]]


def test_missing_input_file(tmp_path):
    assert main(["fit", "--input", str(tmp_path / "nope.csv"), "--response", "y"]) == 2


# --- predict

def test_predict_round_trip_bitwise(medium, tmp_path):
    train, test, X, y, Xt = medium
    model = tmp_path / "m.json"
    main(["fit", "--input", train, "--response", "resp", "--seed", "4", "--out", str(model)])
    pred_path = tmp_path / "pred.csv"
    assert main(["predict", "--model", str(model), "--input", test, "--out", str(pred_path)]) == 0
    header, pred = read_csv(pred_path)
    assert header == ["prediction"]
    _, T = read_table(test)
    ref = mr_ash.fit(RegressionData(X, y), seed=4).predict(np.ascontiguousarray(T[:, :12]))
    assert np.array_equal(pred[:, 0], ref)


def test_predict_feature_only_file(medium, tmp_path):
    train, _, _, _, Xt = medium
    model = tmp_path / "m.json"
    main(["fit", "--input", train, "--response", "resp", "--init", "null", "--out", str(model)])
    feats = write_csv(tmp_path / "f.csv", [f"c{j}" for j in range(12)], Xt.tolist())
    out = tmp_path / "p.json"
    assert main(["predict", "--model", str(model), "--input", feats, "--format", "json", "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["prediction"]) == 30


def test_predict_wrong_columns(medium, tmp_path):
    train, _, _, _, Xt = medium
    model = tmp_path / "m.json"
    main(["fit", "--input", train, "--response", "resp", "--init", "null", "--out", str(model)])
    bad = write_csv(tmp_path / "bad.csv", [f"c{j}" for j in range(5)], Xt[:, :5].tolist())
    assert main(["predict", "--model", str(model), "--input", bad]) == 3


def test_predict_bad_artifact(tmp_path, tiny):
    path, _, _ = tiny
    junk = tmp_path / "junk.json"
    junk.write_text('{"kind": "other"}')
    assert main(["predict", "--model", str(junk), "--input", path]) == 2


# --- shrinkage-curve

def test_curve_spike_prior_zero(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["shrinkage-curve", "--grid", "0", "--out", str(out)]) == 0
    header, M = read_csv(out)
    assert header == ["y", "S", "rho", "rho_prime"]
    assert np.all(M[:, 1] == 0.0)


def test_curve_single_normal_linear(tmp_path):
    out = tmp_path / "c.csv"
    main(["shrinkage-curve", "--grid", "3.0", "--sigma", "1.7", "--out", str(out)])
    _, M = read_csv(out)
    np.testing.assert_allclose(M[:, 1], M[:, 0] * 3.0 / 4.0, atol=1e-14)


def test_curve_penalty_derivative_identity(tmp_path):
    out = tmp_path / "c.csv"
    main(["shrinkage-curve", "--grid", "0,0.1,1,10", "--weights", "0.7,0.1,0.1,0.1",
          "--y-min", "-8", "--y-max", "8", "--points", "161", "--out", str(out)])
    _, M = read_csv(out)
    np.testing.assert_allclose(M[:, 3], M[:, 0] - M[:, 1], atol=1e-6)


def test_curve_identity_random_priors():
    rng = np.random.default_rng(3)
    for _ in range(10):
        grid = np.concatenate([[0.0], np.sort(rng.uniform(0.01, 30, 4))])
        prior = ScaleMixturePrior(grid, rng.dirichlet(np.ones(5)))
        sigma = rng.uniform(0.3, 3)
        y = np.linspace(-6 * sigma, 6 * sigma, 121)
        S, _, rp = shrinkage_curve(prior, sigma, y)
        np.testing.assert_allclose(rp, y - S, atol=1e-6 * sigma ** 2 + 1e-6)


def test_curve_from_model(medium, tmp_path):
    train, *_ = medium
    model = tmp_path / "m.json"
    main(["fit", "--input", train, "--response", "resp", "--init", "null", "--out", str(model)])
    out = tmp_path / "c.json"
    assert main(["shrinkage-curve", "--model", str(model), "--format", "json", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["y"]) == 201


@pytest.mark.parametrize("args", [["--grid", "1,0"], ["--grid", "0,1", "--weights", "0.2,0.2"], [],
                                  ["--grid", "0,1", "--sigma", "-1"], ["--grid", "a,b"]])
def test_curve_invalid_prior(args):
    assert main(["shrinkage-curve", *args]) == 2


# --- simulate / benchmark

SCENARIOS = """[DEFAULT]
pve = 0.5
seed = 11

[sparse]
n = 60
p = 30
s = 3

[dense]
n = 60
p = 30
s = 30
signal = laplace
"""


def test_simulate_byte_identical(tmp_path):
    f = tmp_path / "s.ini"
    f.write_text(SCENARIOS)
    for d in ("a", "b"):
        assert main(["simulate", "--scenario", str(f), "--out", str(tmp_path / d)]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "sparse_train.csv" in files and "dense_truth.csv" in files
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulated_file_feeds_fit(tmp_path):
    f = tmp_path / "s.ini"
    f.write_text(SCENARIOS)
    main(["simulate", "--scenario", str(f), "--name", "sparse", "--out", str(tmp_path / "sim")])
    assert main(["fit", "--input", str(tmp_path / "sim" / "sparse_train.csv"), "--response", "y",
                 "--test", str(tmp_path / "sim" / "sparse_test.csv"), "--max-outer", "5000",
                 "--out", str(tmp_path / "fit.json")]) == 0


def test_simulate_json(tmp_path):
    f = tmp_path / "s.ini"
    f.write_text(SCENARIOS)
    assert main(["simulate", "--scenario", str(f), "--format", "json", "--seed", "5", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "sparse.json").read_text())
    assert doc["scenario"]["seed"] == 5 and len(doc["b"]) == 30


def test_simulate_invalid_scenario(tmp_path):
    f = tmp_path / "s.ini"
    f.write_text("[bad]\nn = 10\np = 5\ns = 1\npve = 1.5\n")
    assert main(["simulate", "--scenario", str(f), "--out", str(tmp_path / "o")]) == 4
    assert main(["simulate", "--scenario", str(tmp_path / "missing.ini"), "--out", str(tmp_path / "o")]) == 4


def test_benchmark_rows(tmp_path, capsys):
    f = tmp_path / "s.ini"
    f.write_text(SCENARIOS)
    out = tmp_path / "bench.csv"
    assert main(["benchmark", "--scenario", str(f), "--methods", "lasso,null", "--replicates", "2",
                 "--out", str(out)]) == 0
    header, rows = None, None
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["scenario", "replicate", "method", "rmse", "rmse_scaled", "rrmse", "seconds"]
    assert len(rows) - 1 == 8
    with open(tmp_path / "bench_summary.csv") as fh:
        summary = list(csv.DictReader(fh))
    assert len(summary) == 4 and "mean_rmse_scaled" in summary[0]
    assert "mean scaled RMSE" in capsys.readouterr().out


def test_benchmark_unknown_method(tmp_path):
    f = tmp_path / "s.ini"
    f.write_text(SCENARIOS)
    assert main(["benchmark", "--scenario", str(f), "--methods", "voodoo", "--out", str(tmp_path / "b.csv")]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "mrash", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("fit", "predict", "simulate", "benchmark", "shrinkage-curve"):
        assert cmd in r.stdout
