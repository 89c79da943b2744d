import json
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from tllfm import cli, io
from tllfm.baselines import fit_lasso
from tllfm.errors import DataError, NumericalError
from tllfm.gibbs import ChainConfig, run_chain
from tllfm.model import ColumnKind, Dataset, Hyperparameters, Standardization
from tllfm.predict import score_dataset


def mixed_dataset(rng, n=80):
    X = np.column_stack([rng.standard_normal(n), rng.integers(0, 2, n),
                         rng.standard_normal(n) * 3 + 1])
    pop = np.r_[np.zeros(n // 2), np.ones(n - n // 2)]
    y = (X[:, 0] + rng.standard_normal(n) > 0).astype(int)
    return Dataset(X=X, pop=pop, columns=("age", "smoker", "bmi"),
                   col_kind=("continuous", "binary", "continuous"), y=y)


def test_dataset_round_trip(tmp_path, rng):
    ds = mixed_dataset(rng)
    io.write_dataset(ds, tmp_path / "d.csv")
    assert (tmp_path / "d.meta.json").exists()
    back = io.read_dataset(tmp_path / "d.csv", require_y=True)
    assert back.equals(ds)


def write_raw(tmp_path, text, kinds=("continuous", "binary")):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    meta = {"schema_version": 1,
            "columns": [{"name": n, "kind": k} for n, k in zip(("a", "b"), kinds)]}
    (tmp_path / "bad.meta.json").write_text(json.dumps(meta))
    return p


def test_malformed_dataset_reports_every_cell(tmp_path):
    p = write_raw(tmp_path, "a,b,__pop,__y\n1.0,0,S,1\nx,2,T,0\n,1,Q,3\n0.5,1,T\n")
    with pytest.raises(DataError) as info:
        io.read_dataset(p)
    assert info.value.problems == ["line 5: expected 4 fields, got 3"]
    p = write_raw(tmp_path, "a,b,__pop,__y\n1.0,0,S,1\nx,2,T,0\n,1,Q,3\n")
    with pytest.raises(DataError) as info:
        io.read_dataset(p)
    probs = info.value.problems
    assert "line 3, column 'a': not a number: 'x'" in probs
    assert "line 3, column 'b': binary column has value '2'" in probs
    assert "line 4, column 'a': missing value" in probs
    assert "line 4, column '__pop': unknown population label 'Q'" in probs
    assert "line 4, column '__y': outcome must be 0 or 1, got '3'" in probs
    assert len(probs) == 5


def test_metadata_problems(tmp_path):
    p = write_raw(tmp_path, "a,b,c,__pop\n1,0,2,S\n")
    with pytest.raises(DataError, match="column 'c': no kind"):
        io.read_dataset(p)
    (tmp_path / "bad.meta.json").write_text("{not json")
    with pytest.raises(DataError, match="line 1, column 2"):
        io.read_dataset(p)
    (tmp_path / "bad.meta.json").unlink()
    with pytest.raises(DataError, match="sidecar not found"):
        io.read_dataset(p)


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    rng = np.random.default_rng(7)
    ds = mixed_dataset(rng, 120)
    hyper = Hyperparameters(K=2, iters=30, burnin=10, thin=4, seed=3)
    tl = run_chain(ds, hyper, ChainConfig.from_hyper(hyper, n_chains=2, record_factors=True))
    flat = run_chain(ds, hyper, hierarchical=False)
    std = Standardization.fit(ds)
    lasso = fit_lasso(std.apply(ds.X), ds.y, folds=3, rng=np.random.default_rng(0),
                      mean=std.mean, scale=std.scale)
    return ds, {"tl-lfm": tl, "lfm": flat, "lasso": lasso}


@pytest.mark.parametrize("kind", ["tl-lfm", "lfm", "lasso"])
def test_model_round_trip_byte_identical(tmp_path, fitted, kind):
    ds, models = fitted
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    io.save_model(p1, models[kind], ds.columns, ds.col_kind)
    k, model, header = io.load_model(p1)
    assert k == kind and header["schema_hash"] == ds.schema_hash()
    io.save_model(p2, model, ds.columns, ds.col_kind)
    assert p1.read_bytes() == p2.read_bytes()
    if kind != "lasso":
        np.testing.assert_array_equal(score_dataset(model, ds).prob,
                                      score_dataset(models[kind], ds).prob)


def test_unknown_model_version_rejected(tmp_path, fitted):
    ds, models = fitted
    data = io.dump_lasso(models["lasso"], ds.columns, ds.col_kind)
    header, arrays = io._unpack(data)
    header.pop("arrays")
    bumped = io._pack({**header, "schema_version": 99}, list(arrays.items()))
    with pytest.raises(DataError, match="unsupported model schema version 99"):
        io.loads_model(bumped)
    with pytest.raises(DataError, match="not a model file"):
        io.loads_model(b"hello")


# ---------------------------------------------------------------------------
# command line


def run_cli(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert run_cli("simulate", "--ratio", "700:2800", "--seed", 5, "--out-dir", d) == 0
    return d


def test_simulate_outputs(sim_dir, tmp_path):
    train = io.read_dataset(sim_dir / "train.csv", require_y=True)
    assert (train.n, train.n_target, train.P) == (3500, 700, 69)
    assert io.read_dataset(sim_dir / "test-target.csv").n == 300
    assert io.read_dataset(sim_dir / "test-source.csv").n == 1200
    truth = io.read_truth(sim_dir / "truth.json")
    assert truth.beta_T.shape == (70, 20)
    assert run_cli("simulate", "--ratio", "700:2800", "--seed", 5, "--out-dir", tmp_path) == 0
    for name in ("train.csv", "test-target.csv", "test-source.csv", "truth.json",
                 "train.meta.json"):
        assert (sim_dir / name).read_bytes() == (tmp_path / name).read_bytes()


def test_fit_predict_evaluate(sim_dir, tmp_path, capsys):
    model = tmp_path / "m.bin"
    assert run_cli("fit", "--data", sim_dir / "train.csv", "--model", "tl-lfm", "--k", 3,
                   "--iters", 20, "--burnin", 10, "--out", model) == 0
    scores = tmp_path / "s.csv"
    assert run_cli("predict", "--model", model, "--data", sim_dir / "test-target.csv",
                   "--pop", "target", "--out", scores) == 0
    lines = scores.read_text().splitlines()
    assert lines[0] == "row_id,prob" and len(lines) == 301
    assert all(0 < float(l.split(",")[1]) < 1 for l in lines[1:])
    out = tmp_path / "e.json"
    assert run_cli("evaluate", "--scores", scores, "--labels", sim_dir / "test-target.csv",
                   "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["n"] == 300 and 0.5 < rep["auroc"] <= 1


def test_fit_lasso_cli(sim_dir, tmp_path):
    model = tmp_path / "l.bin"
    assert run_cli("fit", "--data", sim_dir / "train.csv", "--model", "lasso",
                   "--target-only", "--out", model) == 0
    assert io.load_model(model)[0] == "lasso"
    scores = tmp_path / "s.csv"
    assert run_cli("predict", "--model", model, "--data", sim_dir / "test-source.csv",
                   "--out", scores) == 0


def test_schema_mismatch_exit_2(sim_dir, tmp_path, fitted):
    ds, models = fitted
    model = tmp_path / "m.bin"
    io.save_model(model, models["lasso"], ds.columns, ds.col_kind)
    assert run_cli("predict", "--model", model, "--data", sim_dir / "test-target.csv",
                   "--out", tmp_path / "s.csv") == 2


def test_usage_errors_exit_1(tmp_path, rng):
    with pytest.raises(SystemExit) as e:
        run_cli("fit", "--bogus")
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        run_cli("simulate", "--ratio", "7-28")
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        run_cli()
    assert e.value.code == 1
    io.write_dataset(mixed_dataset(rng), tmp_path / "d.csv")
    assert run_cli("fit", "--data", tmp_path / "d.csv", "--k", 0, "--out", tmp_path / "m") == 1


def test_data_errors_exit_2(tmp_path):
    assert run_cli("fit", "--data", tmp_path / "missing.csv", "--out", tmp_path / "m") == 2
    p = write_raw(tmp_path, "a,b,__pop,__y\n1.0,0,S,1\n2.0,1,S,0\n")
    assert run_cli("fit", "--data", p, "--out", tmp_path / "m") == 2  # no target rows


def test_numerical_error_exit_3(tmp_path, monkeypatch, rng):
    io.write_dataset(mixed_dataset(rng), tmp_path / "d.csv")

    def boom(*a, **k):
        raise NumericalError("sweep 3: loadings precision is not positive definite")
    monkeypatch.setattr(cli, "run_chain", boom)
    assert run_cli("fit", "--data", tmp_path / "d.csv", "--out", tmp_path / "m") == 3


def test_interrupt_writes_partial_checkpoint(tmp_path, monkeypatch, rng):
    ds = mixed_dataset(rng)
    io.write_dataset(ds, tmp_path / "d.csv")
    import tllfm.gibbs as gibbs
    real = gibbs.gibbs_sweep
    count = {"n": 0}

    def flaky(*a, **k):
        count["n"] += 1
        if count["n"] == 25:
            raise KeyboardInterrupt
        return real(*a, **k)
    monkeypatch.setattr(gibbs, "gibbs_sweep", flaky)
    code = run_cli("fit", "--data", tmp_path / "d.csv", "--k", 2, "--iters", 40, "--burnin", 10,
                   "--thin", 1, "--out", tmp_path / "m.bin")
    assert code == 130
    kind, samples, header = io.load_model(tmp_path / "m.bin")
    assert header["partial"] is True and samples.n_draws == 14


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "tllfm", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout
