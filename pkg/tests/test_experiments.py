import math

import numpy as np
import pytest

from sgldlab.experiments import (DEFAULTS, EXPERIMENTS, ExperimentSpec, abs_sin_reference, predict_cost,
                                 run_experiment, simulate_moments)
from sgldlab.gradients import naive_scheme
from sgldlab.models import generate_gaussian_data

SMALL = {
    "bias-variance": {"N": 1000, "h": 1e-4, "paths": 3000, "batches": [1, 10, 100, 1000]},
    "rmse-constant-cost": {"N_grid": [300], "replicates": 40, "n_fractions": [0.02, 0.05, 0.1, 0.2]},
    "relbias-heatmap": {"N": 10_000, "fraction_log2": list(range(0, 8)), "r_log2": list(range(1, 8)),
                        "spot_checks": 2, "spot_paths": 2000},
    "rr-heatmap": {"N": 10_000, "fraction_log2": list(range(0, 8)), "r_log2": list(range(1, 8)),
                   "spot_checks": 2, "spot_paths": 2000},
    "logreg-rmse": {"N_grid": [300], "paths": 20, "replicates": 20, "mh_steps": 60_000, "mh_burn_in": 5000,
                    "mh_thin": 5, "min_ess": 500, "bootstrap": 200},
    "cost-regimes": {"N_grid": [10_000, 100_000], "r_grid_size": 30, "n_grid_size": 10, "spot_replicates": 50},
    "oracle-validate": {"paths": 3000, "ar_paths": 50_000},
}


def test_every_experiment_has_defaults():
    assert set(EXPERIMENTS) == set(SMALL)
    assert DEFAULTS["rr-heatmap"]["rr"] and not DEFAULTS["relbias-heatmap"]["rr"]
    assert DEFAULTS["logreg-rmse"]["d"] == 3 and DEFAULTS["logreg-rmse"]["prior_variance"] == 10.0
    assert DEFAULTS["logreg-rmse"]["paths"] == 100
    assert DEFAULTS["rmse-constant-cost"]["paths"] == 10
    assert DEFAULTS["bias-variance"]["N"] == 10_000 and DEFAULTS["bias-variance"]["h"] == 1e-5


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec("figure-9")
    with pytest.raises(ValueError):
        ExperimentSpec("bias-variance", {"bogus": 1})
    spec = ExperimentSpec("bias-variance", {"N": 50}, seed=3)
    assert spec["N"] == 50 and spec["h"] == 1e-5
    assert spec.data_seed() == 3
    assert spec.job_seed(1) != spec.job_seed(2)


@pytest.mark.parametrize("scheme", ["full", "naive"])
def test_predict_cost_at_posterior_width(scheme):
    for N in (100, 10_000):
        eps = N**-0.5
        p = predict_cost(eps, N, scheme)
        assert p.regime == 1
        assert p.predicted_cost == pytest.approx(N * math.log(math.sqrt(N)))


def test_predict_cost_cv_and_regimes():
    N = 10_000
    p = predict_cost(N**-0.5, N, "cv")
    assert p.regime == 1 and p.predicted_cost == pytest.approx(math.log(100.0))
    assert predict_cost(1 / 1000, N, "full").regime == 2
    assert predict_cost(1 / 20_000, N, "full").regime == 3
    assert predict_cost(1 / 20_000, N, "naive").regime == 2
    assert predict_cost(1 / 2e8, N, "naive").regime == 3
    assert predict_cost(1 / 1000, N, "cv").expression == "eps^-2 N^-1 log(1/eps)"
    with pytest.raises(ValueError):
        predict_cost(0.0, N, "full")
    with pytest.raises(ValueError):
        predict_cost(0.1, N, "exotic")


@pytest.mark.parametrize("scheme", ["full", "naive", "cv"])
def test_predict_cost_continuous_at_first_boundary(scheme):
    N = 10_000
    eps = N**-0.5
    lower = predict_cost(eps, N, scheme).predicted_cost
    upper = predict_cost(eps * (1 - 1e-9), N, scheme)
    assert upper.regime == 2
    assert upper.predicted_cost == pytest.approx(lower, rel=1e-6)


@pytest.mark.parametrize("mean,var,center", [(0.3, 0.01, None), (1.2, 0.5, 0.1), (0.0, 4.0, 2.0)])
def test_abs_sin_reference_against_dense_quadrature(mean, var, center):
    c = mean if center is None else center
    sd = math.sqrt(var)
    x = np.linspace(mean - 12 * sd, mean + 12 * sd, 2_000_001)
    dens = np.exp(-0.5 * ((x - mean) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    dense = np.trapezoid(np.abs(np.sin(x) - c) * dens, x)
    assert abs_sin_reference(mean, var, center) == pytest.approx(dense, rel=1e-7, abs=1e-12)


def test_simulate_moments_agree_with_oracle():
    model = generate_gaussian_data(100, seed=0, theta_true=1.0)
    res = simulate_moments(model, naive_scheme(10), 1e-3, 50, 20_000, seed=5)
    assert abs(res["z_mean"]) <= 4 and abs(res["z_variance"]) <= 4
    assert res["term_evals"] == 20_000 * 50 * 10


@pytest.fixture(scope="module")
def small_results():
    return {}


@pytest.mark.parametrize("name", list(SMALL))
def test_small_experiment_passes(name, small_results):
    res = run_experiment(ExperimentSpec(name, SMALL[name], seed=1))
    failed = [c for c in res.checks if not c["passed"]]
    assert not failed, failed
    assert res.rows and all(set(res.columns) <= set(r) for r in res.rows)
    small_results[name] = res


def test_bias_variance_metadata_and_costs():
    res = run_experiment(ExperimentSpec("bias-variance", SMALL["bias-variance"], seed=2))
    assert res.meta["epsilon_sqrt_N"] == pytest.approx(1.0, rel=1e-12)
    K, P = res.meta["steps"], SMALL["bias-variance"]["paths"]
    for row in res.rows:
        assert row["term_evals"] == P * K * row["n"]
    assert res.meta["T"] == pytest.approx(5.0 * math.log(math.sqrt(1000)) / 1000)


def test_outputs_are_byte_identical_across_workers(tmp_path):
    params = {**SMALL["bias-variance"], "paths": 500}
    a = run_experiment(ExperimentSpec("bias-variance", params, seed=4, workers=1)).write(tmp_path / "a")
    b = run_experiment(ExperimentSpec("bias-variance", params, seed=4, workers=3)).write(tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    again = run_experiment(ExperimentSpec("bias-variance", params, seed=4, workers=1)).write(tmp_path / "c")
    assert again.read_bytes() == a.read_bytes()


def test_oracle_battery_negative_control():
    res = run_experiment(ExperimentSpec("oracle-validate", {"paths": 500, "ar_paths": 500, "h": 0.05,
                                                            "allow_unstable": True}))
    assert not res.passed
    assert len(res.rows) == res.meta["battery_size"]
    assert any("diverged" in r["note"] for r in res.rows)


def test_unstable_grid_point_is_rejected():
    with pytest.raises(Exception):
        run_experiment(ExperimentSpec("bias-variance", {"N": 1000, "h": 1e-2, "paths": 10, "batches": [10]}))
