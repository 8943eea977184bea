import json

import numpy as np
import pytest
from sklearn.base import clone

from sgldlab.api import LangevinGaussianMean, SGLDLogisticRegression
from sgldlab.cli import build_parser, main
from sgldlab.io import (config_hash, format_value, load_dataset, read_csv, save_dataset, write_csv)
from sgldlab.models import generate_gaussian_data, generate_logreg_data


def test_format_value_round_trips():
    for v in (0.1, 1e-300, -2.5e17, 1 / 3):
        assert float(format_value(v)) == v
    assert format_value(np.float64(0.5)) == "0.5"
    assert format_value(True) == "true"
    assert format_value(np.int64(7)) == "7"
    assert format_value(None) == ""
    assert format_value(float("nan")) == "nan"


def test_csv_round_trip(tmp_path):
    rows = [{"a": 1, "b": 0.1}, {"a": 2, "b": float("nan")}]
    p = write_csv(tmp_path / "x.csv", rows, ["b", "a"])
    assert p.read_text().splitlines()[0] == "b,a"
    back = read_csv(p)
    assert back[0] == {"b": "0.1", "a": "1"}


def test_config_hash_is_canonical():
    assert config_hash({"a": 1, "b": [1.0, 2]}) == config_hash({"b": [1.0, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 16


@pytest.mark.parametrize("which", ["gauss", "logreg"])
def test_dataset_round_trip(which, tmp_path):
    model = generate_gaussian_data(30, 2.0, 0.5, seed=1) if which == "gauss" else generate_logreg_data(3, 40, seed=1)
    path = save_dataset(model, tmp_path / "d.csv")
    back = load_dataset(path)
    if which == "gauss":
        np.testing.assert_array_equal(back.y, model.y)
        assert back.sigma_theta_sq == 2.0 and back.sigma_y_sq == 0.5
    else:
        np.testing.assert_array_equal(back.X, model.X)
        np.testing.assert_array_equal(back.y, model.y)
    with pytest.raises(TypeError):
        save_dataset(object(), tmp_path / "bad.csv")


def test_parser_lists_every_command():
    text = build_parser().format_help()
    for cmd in ("bias-variance", "rmse-constant-cost", "relbias-heatmap", "rr-heatmap", "logreg-rmse",
                "cost-regimes", "oracle-validate", "gen-data", "run", "oracle", "mh"):
        assert cmd in text


def test_cli_gen_data_and_run(tmp_path, capsys):
    data = tmp_path / "g.csv"
    assert main(["gen-data", "--N", "50", "--seed", "2", "--out", str(data)]) == 0
    out_dir = tmp_path / "run"
    assert main(["run", "--data", str(data), "--h", "1e-3", "--steps", "20", "--paths", "30", "--scheme", "naive",
                 "--batch", "5", "--convention", "ou", "--out", str(out_dir)]) == 0
    rows = read_csv(out_dir / "paths.csv")
    assert len(rows) == 30
    meta = json.loads((out_dir / "meta.json").read_text())
    assert meta["total_term_evals"] == 30 * 20 * 5
    assert main(["run", "--data", str(data), "--h", "1e-3", "--steps", "20", "--paths", "10", "--rr",
                 "--convention", "ou"]) == 0
    # unstable step without the override flag
    assert main(["run", "--data", str(data), "--h", "1.0", "--steps", "2", "--paths", "2"]) == 2


def test_cli_oracle_and_mh(tmp_path, capsys):
    assert main(["oracle", "--N", "100", "--h", "1e-3", "--n", "10", "--M", "50"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["A"] == 50.5 and out["variance"] > 0
    data = tmp_path / "l.csv"
    main(["gen-data", "--model", "logistic", "--N", "100", "--out", str(data)])
    assert main(["oracle", "--data", str(data), "--h", "1e-3"]) == 2
    assert main(["mh", "--data", str(data), "--steps", "5000", "--burn-in", "500",
                 "--out", str(tmp_path / "mh.json")]) == 0
    assert "acceptance_rate" in json.loads((tmp_path / "mh.json").read_text())


def test_cli_experiment_with_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 4, "paths": 2000, "ar_paths": 20_000}))
    assert main(["oracle-validate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    rows = read_csv(tmp_path / "a" / "oracle-validate.csv")
    meta = json.loads((tmp_path / "a" / "meta.json").read_text())
    assert meta["passed"] and meta["config"]["seed"] == 4
    assert len(rows) == meta["battery_size"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"paths": 2000, "ar_paths": 2000, "h": 0.05}))
    assert main(["oracle-validate", "--config", str(bad), "--allow-unstable", "--out", str(tmp_path / "b")]) == 1
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"bogus": 1}))
    assert main(["oracle-validate", "--config", str(unknown), "--out", str(tmp_path / "c")]) == 2


def test_gaussian_facade():
    model = generate_gaussian_data(500, seed=1, theta_true=1.0)
    est = LangevinGaussianMean(paths=2000, step_fraction=0.05).fit(model.y)
    mu, var = model.exact_posterior()
    assert abs(est.posterior_mean_ - mu) < 4 * np.sqrt(var / 2000) + 0.01
    assert est.posterior_std_ == pytest.approx(np.sqrt(var), rel=0.1)
    assert est.term_evals_ == 2000 * est.config_.n_steps * 500
    assert clone(est).get_params()["paths"] == 2000


def test_logistic_facade():
    model = generate_logreg_data(3, 500, seed=1)
    labels = np.where(model.y == 1, "yes", "no")
    clf = SGLDLogisticRegression(paths=50, seed=2).fit(model.X, labels)
    assert set(clf.predict(model.X[:20])) <= {"yes", "no"}
    proba = clf.predict_proba(model.X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert clf.score(model.X, labels) > 0.7
    assert clf.coef_.shape == (3,)
    with pytest.raises(ValueError):
        SGLDLogisticRegression().fit(model.X, np.zeros(500))
