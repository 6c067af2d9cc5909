import json
import math

import numpy as np
import pytest

from conftest import random_model
from polymoe import cli
from polymoe import io as pio
from polymoe.errors import DataError, NumericalError
from polymoe.moe import Dataset, log_likelihood
from polymoe.targets import make_target, sample_target, target_to_dict


def run(argv, capsys):
    code = cli.dispatch([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def csv_rows(text):
    lines = text.splitlines()
    assert lines[0].startswith("# ")
    meta = json.loads(lines[0][2:])
    header = lines[1].split(",")
    return meta, [dict(zip(header, ln.split(","))) for ln in lines[2:]]


@pytest.fixture
def data_files(tmp_path):
    target = make_target("smooth_sin", s=1, omega=2.0)
    pio.write_dataset(tmp_path / "data.csv", sample_target(target, 300, 11))
    pio.write_json(tmp_path / "target.json", target_to_dict(target))
    return tmp_path


@pytest.mark.parametrize("family", ["poisson", "gaussian:sigma2=0.5", "binomial:n=4", "exponential"])
def test_model_round_trip_bit_identical(tmp_path, rng, family):
    model = random_model(rng, family, 3, 2, s=2)
    pio.write_model(tmp_path / "m.json", model, {"seed": 1})
    back = pio.read_model(tmp_path / "m.json")
    np.testing.assert_array_equal(back.to_vector(), model.to_vector())
    assert str(back.family) == str(model.family)
    assert (back.m, back.k, back.s) == (3, 2, 2)
    pio.write_model(tmp_path / "m2.json", back, {"seed": 1})
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()


def test_model_json_rejects_unknown_keys(tmp_path, rng):
    d = pio.model_to_dict(random_model(rng, "poisson", 2, 1))
    with pytest.raises(DataError):
        pio.model_from_dict({**d, "extra": 1})
    with pytest.raises(DataError):
        pio.model_from_dict({k: v for k, v in d.items() if k != "experts"})


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    d = Dataset(rng.uniform(-1, 1, (40, 2)), rng.normal(size=40) / 3)
    pio.write_dataset(tmp_path / "d.csv", d, {"seed": 0})
    back = pio.read_dataset(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.X, d.X)
    np.testing.assert_array_equal(back.Y, d.Y)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        pio.read_dataset(tmp_path / "bad.csv")


def test_jsonable_nonfinite():
    assert pio.canonical_json({"b": math.nan, "a": [math.inf, np.int64(2)]}) == '{"a":["inf",2],"b":"nan"}'
    assert pio.config_hash({"x": 1, "y": 2}) == pio.config_hash({"y": 2, "x": 1})


def test_budget_table_output(capsys):
    code, out, _ = run(["table", "--which", 1, "--alpha", 6, "--s", 5], capsys)
    assert code == 0
    meta, rows = csv_rows(out)
    assert set(meta) == {"tool_version", "seed", "config_hash"} and meta["seed"] == 0
    assert [r["approx"] for r in rows] == ["0.1169", "0.0222", "0.0094", "0.0077", "0.0100", "0.0210"]
    assert [int(r["params"]) for r in rows] == [1284, 1287, 1274, 1281, 1310, 1285]
    assert "1271" in rows[3]["notes"] and "smallest approximation error" in rows[3]["notes"]


def test_accuracy_table_output(capsys):
    code, out, _ = run(["table", "--which", 2, "--alpha", 6, "--s", 5, "--target", 0.01], capsys)
    assert code == 0
    _, rows = csv_rows(out)
    assert [(int(r["k"]), int(r["m"]), int(r["params"])) for r in rows] == [
        (0, 100000, 600000), (1, 316, 3476), (2, 46, 1196), (3, 18, 1098), (4, 10, 1310), (5, 7, 1799)]
    assert rows[5]["approx"] == "0.0094" and "0.0099" in rows[5]["notes"]
    assert "fewest parameters" in rows[3]["notes"]


def test_plan_budget(capsys):
    code, out, _ = run(["plan", "--budget", 1285, "--alpha", 6, "--s", 5], capsys)
    assert code == 0
    _, rows = csv_rows(out)
    assert float(rows[0]["xi"]) == pytest.approx(1285**0.2 / math.e, rel=1e-12)
    assert float(rows[0]["m"]) == pytest.approx(math.e**5, rel=1e-12)
    code, out, _ = run(["plan", "--alpha", "inf", "--s", 2, "--n", 1000], capsys)
    _, rows = csv_rows(out)
    assert (int(rows[0]["m"]), int(float(rows[0]["xi"]))) == (2, 14)


def test_rate_subcommand(capsys, tmp_path):
    code, out, _ = run(["rate", "--kind", "polynomial", "--params", '{"degree": 2, "coeffs": [0, 0, 1]}',
                        "--k", 1, "--ms", "2,4,8,16", "--summary", tmp_path / "s.json"], capsys)
    assert code == 0
    _, rows = csv_rows(out)
    assert float(rows[0]["D"]) == pytest.approx(16 / (180 * 16), rel=1e-10)
    assert float(rows[-1]["slope_so_far"]) == pytest.approx(-4, abs=1e-6)
    summary = pio.read_json(tmp_path / "s.json")
    assert summary["slope"] == pytest.approx(-4, abs=1e-6) and "meta" in summary


def test_fit_kl_pipeline(capsys, data_files):
    t = data_files
    code, _, err = run(["fit", "--data", t / "data.csv", "--family", "poisson", "--m", 2, "--k", 1,
                        "--restarts", 2, "--seed", 5, "--out", t / "model.json", "--report", t / "rep.json"], capsys)
    assert code == 0, err
    model = pio.read_model(t / "model.json")
    rep = pio.read_json(t / "rep.json")
    assert pio.read_json(t / "model.json")["meta"]["seed"] == 5
    data = pio.read_dataset(t / "data.csv")
    assert data.n * log_likelihood(model, data) == pytest.approx(rep["loglik"] * data.n, rel=1e-9)
    code, out, _ = run(["kl", "--target", t / "target.json", "--model", t / "model.json",
                        "--n-mc", 2000, "--hellinger", "--upper"], capsys)
    assert code == 0
    res = json.loads(out)
    assert res["kl"]["value"] >= 0 and res["kl"]["method"] == "truncated_sum"
    assert res["hellinger"]["squared"] <= res["kl"]["value"] + 1e-12
    assert res["upper_divergence"]["value"] >= 0


def test_fit_rescales_covariates(capsys, tmp_path):
    rng = np.random.default_rng(2)
    X = rng.uniform(10, 20, (400, 1))
    Y = rng.poisson(np.exp(0.1 * (X[:, 0] - 15)))
    pio.write_dataset(tmp_path / "d.csv", Dataset(X, Y))
    code, _, err = run(["fit", "--data", tmp_path / "d.csv", "--family", "poisson", "--m", 1,
                        "--out", tmp_path / "m.json"], capsys)
    assert code == 0, err
    xs = pio.read_json(tmp_path / "m.json")["x_scaling"]
    assert xs["offset"][0] == pytest.approx(15, abs=0.1) and xs["scale"][0] == pytest.approx(5, abs=0.1)
    model = pio.read_model(tmp_path / "m.json")
    # slope 0.1 per unit on the raw scale is 0.5 on [-1, 1]
    assert model.experts[0][1] == pytest.approx(0.5, abs=0.15)


def test_missing_file_exit_3(capsys, tmp_path):
    missing = tmp_path / "nope.csv"
    code, _, err = run(["fit", "--data", missing, "--family", "poisson", "--out", tmp_path / "m.json"], capsys)
    assert code == 3
    msg = json.loads(err.strip().splitlines()[-1])
    assert msg["exit_code"] == 3 and str(missing) in msg["message"]


def test_config_errors_exit_2(capsys, tmp_path, data_files):
    assert run(["table", "--which", 3, "--alpha", 6, "--s", 5], capsys)[0] == 2
    assert run(["nonsense"], capsys)[0] == 2
    (tmp_path / "cfg.json").write_text('{"family": "poisson", "learning_rate": 0.1}')
    code, _, err = run(["fit", "--data", data_files / "data.csv", "--config", tmp_path / "cfg.json",
                        "--out", tmp_path / "m.json"], capsys)
    assert code == 2 and "learning_rate" in err
    (tmp_path / "exp.json").write_text('{"target": {"kind": "smooth_sin"}, "n_grid": [100], "colour": 1}')
    assert run(["experiment", "--config", tmp_path / "exp.json"], capsys)[0] == 2
    assert json.loads(err)["error"] == "ConfigError"


def test_numerical_failure_exit_4(capsys, monkeypatch, data_files):
    def boom(*a, **k):
        raise NumericalError("EM diverged")

    monkeypatch.setattr(cli, "fit", boom)
    code, _, err = run(["fit", "--data", data_files / "data.csv", "--family", "poisson",
                        "--out", data_files / "m.json"], capsys)
    assert code == 4 and json.loads(err)["message"] == "EM diverged"


def test_data_error_exit_3(capsys, tmp_path):
    (tmp_path / "d.csv").write_text("x1,y\n0.1,-1\n0.2,3\n")
    code, _, err = run(["fit", "--data", tmp_path / "d.csv", "--family", "poisson",
                        "--out", tmp_path / "m.json"], capsys)
    assert code == 3, err


def test_threads_env_override(monkeypatch):
    monkeypatch.setenv("POLYMOE_THREADS", "3")
    assert cli.resolve_threads(1) == 3
    monkeypatch.setenv("POLYMOE_THREADS", "0")
    assert cli.resolve_threads(1) >= 1
    monkeypatch.setenv("POLYMOE_THREADS", "x")
    with pytest.raises(Exception):
        cli.resolve_threads(1)
    monkeypatch.delenv("POLYMOE_THREADS")
    assert cli.resolve_threads(4) == 4
