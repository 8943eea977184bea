from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sgldlab.gradients import (CV, FULL, NAIVE, AnchorError, CostLedger, GradientScheme, estimate_gradient,
                               full_scheme, gradient_variance, make_scheme, naive_scheme, precompute_cv)
from sgldlab.models import GaussianConjugateModel, find_mode, generate_gaussian_data, generate_logreg_data
from sgldlab.oracle import oracle_var_B
from sgldlab.rng import RngStream


def _subset_average(scheme, model, x):
    """Mean of the estimator over every subset, evaluated without the sampler's RNG."""
    N, n = model.n_data, scheme.batch_size
    ests = []
    for s in combinations(range(N), n):
        idx = np.array(s)
        if scheme.kind == NAIVE:
            ests.append(model.grad_log_prior(x) + N / n * model.lik_grads(x, idx).sum(axis=0))
        else:
            diff = model.split_term_grads(x, idx) - scheme.anchor_term_grads[idx]
            ests.append(N / n * diff.sum(axis=0))
    return np.mean(ests, axis=0)


def test_scheme_validation():
    with pytest.raises(ValueError):
        GradientScheme("sparse")
    with pytest.raises(ValueError):
        GradientScheme(FULL, 3)
    with pytest.raises(ValueError):
        GradientScheme(NAIVE)
    with pytest.raises(ValueError):
        GradientScheme(CV, 2)
    model = generate_gaussian_data(5, seed=0)
    with pytest.raises(ValueError):
        naive_scheme(6).validate_for(model)
    with pytest.raises(ValueError):
        make_scheme(model, NAIVE)


def test_cv_anchor_gradients_sum_to_zero():
    model = generate_gaussian_data(50, seed=1)
    s = precompute_cv(model, find_mode(model), 5)
    np.testing.assert_allclose(s.anchor_term_grads.sum(axis=0), [0.0], atol=1e-12)


def test_cv_precompute_charges_N():
    model = generate_gaussian_data(1000, seed=1)
    led = CostLedger()
    precompute_cv(model, find_mode(model), 10, ledger=led)
    assert led.term_evals == 1000


def test_cv_anchor_term_formula():
    y = np.arange(8, dtype=float)
    model = GaussianConjugateModel(y, 1.0, 1.0)
    mu = model.exact_posterior()[0]
    s = precompute_cv(model, np.array([mu]), 2)
    expected = (y - mu) / 2.0 - mu / (2 * y.size)
    np.testing.assert_allclose(s.anchor_term_grads[:, 0], expected, rtol=1e-13, atol=1e-15)


def test_cv_rejects_far_anchor():
    model = generate_gaussian_data(50, seed=1)
    with pytest.raises(AnchorError):
        precompute_cv(model, find_mode(model) + 1.0, 5)


def test_naive_full_batch_equals_full(rng):
    for model in (generate_gaussian_data(20, seed=2), generate_logreg_data(3, 20, seed=2)):
        x = rng.normal(size=model.dim)
        g1 = estimate_gradient(naive_scheme(model.n_data), model, x, RngStream(0))
        g2 = estimate_gradient(full_scheme(), model, x, RngStream(0))
        np.testing.assert_array_equal(g1, g2)


def test_cv_is_zero_at_anchor():
    for model in (generate_gaussian_data(30, seed=3), generate_logreg_data(3, 30, seed=3)):
        s = make_scheme(model, CV, 4)
        rng = RngStream(5)
        for _ in range(10):
            g = estimate_gradient(s, model, s.anchor, rng)
            np.testing.assert_allclose(g, 0.0, atol=1e-12)


@pytest.mark.parametrize("kind", [NAIVE, CV])
def test_unbiased_by_enumeration(kind, rng):
    for model in (generate_gaussian_data(6, seed=4), generate_logreg_data(2, 7, seed=4)):
        s = make_scheme(model, kind, 2)
        for _ in range(3):
            x = rng.normal(size=model.dim)
            np.testing.assert_allclose(_subset_average(s, model, x), model.full_grad(x), rtol=0, atol=1e-12)


@given(data=st.lists(st.floats(-3, 3), min_size=2, max_size=9), seed=st.integers(0, 1000))
def test_unbiased_property(data, seed):
    model = GaussianConjugateModel(data, 1.0, 1.0)
    x = np.array([np.random.default_rng(seed).normal()])
    for n in range(1, model.n_data + 1):
        np.testing.assert_allclose(_subset_average(naive_scheme(n), model, x), model.full_grad(x), atol=1e-12)


def test_ledger_charges_batch_size():
    model = generate_gaussian_data(40, seed=5)
    led = CostLedger()
    rng = RngStream(1)
    for scheme, per in ((full_scheme(), 40), (naive_scheme(7), 7), (make_scheme(model, CV, 3), 3)):
        before = led.term_evals
        estimate_gradient(scheme, model, np.zeros(1), rng, led)
        assert led.term_evals - before == per
    with pytest.raises(ValueError):
        led.charge(terms=-1)
    assert (led + CostLedger(1, 2, 3)).as_dict() == {"term_evals": led.term_evals + 1, "steps": 2,
                                                      "noise_draws": 3}


def test_variance_two_point_example():
    model = GaussianConjugateModel([0.0, 1.0], 1.0, 1.0)
    v = gradient_variance(naive_scheme(1), model, np.array([0.3]))
    assert v == pytest.approx(0.25, abs=1e-15)
    assert gradient_variance(full_scheme(), model, np.zeros(1)) == 0.0
    assert gradient_variance(naive_scheme(2), model, np.zeros(1)) == 0.0


def test_variance_matches_closed_form_and_rational_enumeration(rng):
    y = rng.normal(size=8) * 1.7
    model = GaussianConjugateModel(y, 1.0, 0.8)
    for n in range(1, 9):
        v = gradient_variance(naive_scheme(n), model, np.array([0.4]))
        v_exact = gradient_variance(naive_scheme(n), model, np.array([0.4]), exact=True)
        assert abs(v - oracle_var_B(y, 0.8, n)) <= 1e-12
        assert abs(v - v_exact) <= 1e-12


def test_rational_two_route_var_B():
    # B over all subsets in exact rationals, frozen at 897/512
    y = [0.5, 1.5, -2.0, 3.25, 0.0]
    vals = [Fraction(5, 2) * sum(Fraction(y[i]) for i in s) / 4 for s in combinations(range(5), 2)]
    mean = sum(vals) / len(vals)
    var = sum((v - mean) ** 2 for v in vals) / len(vals)
    assert var == Fraction(897, 512)
    model = GaussianConjugateModel(y, 1.0, 2.0)
    assert gradient_variance(naive_scheme(2), model, np.zeros(1)) == pytest.approx(897 / 512, abs=1e-13)


def test_monte_carlo_variance_agrees_with_enumeration():
    model = generate_logreg_data(2, 10, seed=6)
    s = naive_scheme(3)
    x = find_mode(model) + 0.2
    exact = gradient_variance(s, model, x)
    mc = gradient_variance(s, model, x, mode="monte_carlo", R=20_000, rng=RngStream(9))
    # sample-variance relative standard error is about sqrt(2/R) times a kurtosis factor
    assert mc == pytest.approx(exact, rel=0.06)
    with pytest.raises(ValueError):
        gradient_variance(s, model, x, mode="monte_carlo")
    with pytest.raises(ValueError):
        gradient_variance(s, model, x, mode="bogus")


def test_cv_variance_vanishes_for_gaussian():
    # every centred term is linear in (x - x*) with a common slope, so the subsets agree
    model = generate_gaussian_data(9, seed=7)
    s = make_scheme(model, CV, 3)
    assert gradient_variance(s, model, np.array([2.0])) == pytest.approx(0.0, abs=1e-12)
