"""Exit criteria AC1-AC9.

Run with ``pytest -m acceptance -s`` to see one PASS/FAIL line per criterion.
Each criterion also asserts its stated runtime budget.
"""
import math
import time
import warnings

import numpy as np
import pytest

from sgldlab.experiments import ExperimentSpec, run_experiment, simulate_moments
from sgldlab.gradients import CV, NAIVE, estimate_gradient, full_scheme, gradient_variance, make_scheme, naive_scheme
from sgldlab.models import GaussianConjugateModel, generate_gaussian_data, generate_logreg_data
from sgldlab.oracle import oracle_rr_variance_bias, oracle_var_B
from sgldlab.reference import log_posterior
from sgldlab.rng import RngStream, enumerate_subsample_moments
from sgldlab.sampler import DivergenceError, InitialCondition, RunConfig, run_paths, run_rr_paths

pytestmark = pytest.mark.acceptance

RESULTS = {}


@pytest.fixture(scope="module", autouse=True)
def summary():
    yield
    if RESULTS:
        print("\nacceptance summary:")
        for key in sorted(RESULTS):
            print(f"  {key}: {'PASS' if RESULTS[key] else 'FAIL'}")


def _report(tag, ok, start, budget, detail):
    elapsed = time.perf_counter() - start
    ok = bool(ok) and elapsed < budget
    RESULTS[tag] = ok
    print(f"\n{tag} {'PASS' if ok else 'FAIL'} ({elapsed:.1f}s of {budget:.0f}s) {detail}")
    return ok, elapsed


def _failed(res):
    return [c["name"] for c in res.checks if not c["passed"]]


def test_ac1_var_B_enumeration():
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(50):
        rng = np.random.default_rng(k)
        for N in range(2, 13):
            y = rng.normal(rng.uniform(-2, 2), rng.uniform(0.2, 3.0), size=N)
            s_y = float(rng.uniform(0.3, 2.0))
            model = GaussianConjugateModel(y, 1.0, s_y)
            for n in range(1, N + 1):
                v = gradient_variance(naive_scheme(n), model, np.zeros(1))
                worst = max(worst, abs(v - oracle_var_B(y, s_y, n)))
    ok, elapsed = _report("AC1", worst <= 1e-12, t0, 10, f"max abs error {worst:.2e}")
    assert worst <= 1e-12 and elapsed < 10


def test_ac2_oracle_moment_agreement():
    t0 = time.perf_counter()
    model = generate_gaussian_data(100, 1.0, 1.0, seed=2024)
    schemes = {"full": full_scheme(), "naive1": naive_scheme(1), "naive10": naive_scheme(10),
               "naive100": naive_scheme(100), "cv10": make_scheme(model, CV, 10)}
    zs = {}
    for i, (name, s) in enumerate(schemes.items()):
        r = simulate_moments(model, s, 1e-3, 50, 100_000, seed=100 + i)
        zs[name] = (r["z_mean"], r["z_variance"])
    worst = max(abs(z) for pair in zs.values() for z in pair)
    ok, elapsed = _report("AC2", worst <= 4.0, t0, 120,
                          " ".join(f"{k}:z=({a:+.2f},{b:+.2f})" for k, (a, b) in zs.items()))
    assert worst <= 4.0 and elapsed < 120


def test_ac3_bias_variance():
    t0 = time.perf_counter()
    res = run_experiment(ExperimentSpec("bias-variance", seed=0))
    ratio = next(c for c in res.checks if c["name"] == "variance_ratio_n1_vs_nN")
    ok, elapsed = _report("AC3", res.passed, t0, 600,
                          f"failed={_failed(res)} n=1 ratio {ratio['measured']:.2f} vs {ratio['predicted']:.2f}")
    assert res.passed and elapsed < 600


def test_ac4_constant_cost_rmse():
    t0 = time.perf_counter()
    res = run_experiment(ExperimentSpec("rmse-constant-cost", seed=0))
    ratios = {c["name"]: round(c["ratio"], 3) for c in res.checks if c["name"].startswith("rmse_ratio")}
    families = {}
    for r in res.rows:
        families.setdefault(r["N"], set()).add((r["n"], r["h"]))
    big_enough = all(len(f) >= 4 for f in families.values()) and set(families) == {1000, 10_000}
    ok, elapsed = _report("AC4", res.passed and big_enough, t0, 1200, f"failed={_failed(res)} ratios={ratios}")
    assert res.passed and big_enough and elapsed < 1200


def _slope(h, b):
    return np.polyfit(np.log(h), np.log(np.abs(b)), 1)[0]


def test_ac5_richardson_romberg_order():
    t0 = time.perf_counter()
    A = 50.5
    hs = np.array([2.0**-k / A for k in range(4, 9)])
    plain, rr = np.array([oracle_rr_variance_bias(A, h, 0.0, 0.0) for h in hs]).T
    s_plain, s_rr = _slope(hs, plain), _slope(hs, rr)
    noisy = np.array([oracle_rr_variance_bias(A, h, 100.0 * A) for h in hs])[:, 1]
    s_noisy = _slope(hs, noisy)
    oracle_ok = abs(s_plain - 1.0) <= 0.1 and abs(s_rr - 2.0) <= 0.1 and abs(s_noisy - 1.0) <= 0.1

    # simulation spot check: full gradient, common noise, started at the posterior mean
    model = generate_gaussian_data(100, seed=7)
    mu = model.exact_posterior()[0]
    h, P = 2.0**-4 / model.A, 100_000
    cfg = RunConfig(h=h, T=15.0 / model.A, paths=P, seed=31, convention="ou", initial=InitialCondition.point(mu))
    c, f = run_rr_paths(model, cfg)
    xc, xf = c.final_states[:, 0], f.final_states[:, 0]
    per_path = 2.0 * (xf - xf.mean()) ** 2 - (xc - xc.mean()) ** 2
    predicted = oracle_rr_variance_bias(model.A, h, 0.0, 0.0)[1] + 0.5 / model.A
    z = (per_path.mean() * P / (P - 1) - predicted) / (per_path.std(ddof=1) / math.sqrt(P))
    ok, elapsed = _report("AC5", oracle_ok and abs(z) <= 4.0, t0, 300,
                          f"slopes plain {s_plain:.3f} rr {s_rr:.3f} rr(var_B>>A) {s_noisy:.3f}; spot z={z:+.2f}")
    assert oracle_ok and abs(z) <= 4.0 and elapsed < 300


def test_ac6_cost_regime_slopes():
    t0 = time.perf_counter()
    res = run_experiment(ExperimentSpec("cost-regimes", seed=0))
    slopes = {c["name"]: round(c["value"], 3) for c in res.checks if c["name"].endswith("slope")}
    ok, elapsed = _report("AC6", res.passed, t0, 300, f"failed={_failed(res)} slopes={slopes}")
    assert res.passed and elapsed < 300


def test_ac7_stability_guard():
    t0 = time.perf_counter()
    model = generate_gaussian_data(10_000, seed=0)
    base = dict(steps=10_000, paths=4, seed=1, convention="langevin")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        stable = run_paths(model, RunConfig(h=0.9 / model.A, **base)).final_states
        try:
            run_paths(model, RunConfig(h=1.9 / model.A, allow_unstable=True, **base))
            step = None
        except DivergenceError as err:
            step = err.step
    finite = bool(np.all(np.isfinite(stable)))
    detected = step is not None and step < 10_000
    ok, elapsed = _report("AC7", finite and detected, t0, 30, f"stable finite={finite} divergence at step {step}")
    assert finite and detected and elapsed < 30


def test_ac8_logistic_regression():
    t0 = time.perf_counter()
    res = run_experiment(ExperimentSpec("logreg-rmse", seed=0))
    detail = {c["name"]: round(c.get("diff", c.get("ess", math.nan)), 4) for c in res.checks}
    ok, elapsed = _report("AC8", res.passed, t0, 1800, f"failed={_failed(res)} {detail}")
    assert res.passed and elapsed < 1800


def test_ac9_property_suites():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    models = [generate_gaussian_data(50, seed=1), generate_logreg_data(3, 200, seed=1)]
    fd_ok = True
    for m in models:
        for _ in range(10):
            x = rng.normal(size=m.dim) * 0.5
            fd = np.array([(log_posterior(m, x + e) - log_posterior(m, x - e)) / 2e-6 for e in np.eye(m.dim) * 1e-6])
            g = m.full_grad(x) / m.potential_scale
            fd_ok &= np.linalg.norm(fd - g) <= 1e-5 * max(np.linalg.norm(g), 1.0)

    unbiased = 0.0
    for m in (generate_gaussian_data(10, seed=2), generate_logreg_data(2, 9, seed=2)):
        for kind in (NAIVE, CV):
            s = make_scheme(m, kind, 3)
            x = rng.normal(size=m.dim) * 0.3
            if kind == NAIVE:
                terms = m.lik_grads(x) + m.grad_log_prior(x) / m.n_data
            else:
                terms = m.split_term_grads(x) - s.anchor_term_grads
            mean, _ = enumerate_subsample_moments(terms, 3)
            unbiased = max(unbiased, float(np.max(np.abs(mean - m.full_grad(x)))))

    cv_zero = 0.0
    for m in models:
        s = make_scheme(m, CV, 5)
        r = RngStream(3)
        cv_zero = max(cv_zero, max(float(np.max(np.abs(estimate_gradient(s, m, s.anchor, r)))) for _ in range(20)))

    model = generate_gaussian_data(100, seed=2, theta_true=0.5)
    mu, var = model.exact_posterior()
    cfg = RunConfig(h=0.002 / model.A, steps=100, paths=100_000, seed=17, convention="ou",
                    initial=InitialCondition.gaussian(mu, math.sqrt(var)))
    states = run_paths(model, cfg).final_states
    bl_ok = True
    for v in (states[:, 0], np.abs(np.sin(states[:, 0]) - mu)):
        s2 = np.var(v, ddof=1)
        bl_ok &= s2 <= 1.0 / (2 * model.A) + 4 * s2 * math.sqrt(2.0 / (v.size - 1))

    lr = models[1]
    cfg = RunConfig(h=1e-3, steps=200, paths=64, seed=5, scheme=naive_scheme(20))
    ref = run_paths(lr, cfg, workers=1).final_states
    bit_ok = all(np.array_equal(run_paths(lr, cfg, workers=w).final_states, ref) for w in (2, 8))

    good = fd_ok and unbiased <= 1e-12 and cv_zero <= 1e-12 and bl_ok and bit_ok
    ok, elapsed = _report("AC9", good, t0, 300,
                          f"fd={fd_ok} unbiased_err={unbiased:.1e} cv_at_anchor={cv_zero:.1e} "
                          f"brascamp_lieb={bl_ok} bit_identical={bit_ok}")
    assert good and elapsed < 300
