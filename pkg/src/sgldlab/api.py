"""Estimator-style wrappers around the samplers.

The classes follow the scikit-learn conventions (constructor stores
hyperparameters, ``fit`` returns ``self``, fitted attributes end in ``_``)
so they drop into pipelines and ``clone``. They add nothing numerically;
everything delegates to :mod:`sgldlab.sampler`.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .gradients import make_scheme
from .models import GaussianConjugateModel, LogisticRegressionModel, sigmoid
from .sampler import RunConfig, check_stability, run_paths

__all__ = ["LangevinGaussianMean", "SGLDLogisticRegression"]


def _horizon(const, N):
    # T = c log(1/eps) / N with eps = N^(-1/2)
    return const * 0.5 * math.log(N) / N if N > 1 else const


class LangevinGaussianMean(BaseEstimator):
    """Posterior of the mean of Gaussian data by independent Langevin paths.

    Parameters
    ----------
    sigma_theta_sq, sigma_y_sq : float
        Prior variance of the mean and noise variance of the observations.
    scheme : {"full", "naive", "cv"}
    batch_size : int or None
        Minibatch size for the subsampled schemes.
    h : float or None
        Step size in the ``ou`` convention; ``None`` uses ``step_fraction / A``.
    horizon_const : float
        ``T = horizon_const * log(sqrt(N)) / N``.
    paths, seed, workers : int
    """

    def __init__(self, sigma_theta_sq=1.0, sigma_y_sq=1.0, scheme="full", batch_size=None, h=None,
                 step_fraction=0.1, horizon_const=5.0, paths=1000, seed=0, workers=1):
        self.sigma_theta_sq = sigma_theta_sq
        self.sigma_y_sq = sigma_y_sq
        self.scheme = scheme
        self.batch_size = batch_size
        self.h = h
        self.step_fraction = step_fraction
        self.horizon_const = horizon_const
        self.paths = paths
        self.seed = seed
        self.workers = workers

    def fit(self, y, _unused=None):
        y = check_array(np.asarray(y, dtype=np.float64).reshape(-1, 1)).ravel()
        model = GaussianConjugateModel(y, self.sigma_theta_sq, self.sigma_y_sq)
        h = self.h if self.h is not None else self.step_fraction / model.A
        scheme = make_scheme(model, self.scheme, self.batch_size)
        cfg = RunConfig(h=h, T=_horizon(self.horizon_const, model.n_data), paths=self.paths, seed=self.seed,
                        scheme=scheme, convention="ou", workers=self.workers)
        batch = run_paths(model, cfg)
        self.samples_ = batch.final_states[:, 0]
        self.posterior_mean_ = float(np.mean(self.samples_))
        self.posterior_std_ = float(np.std(self.samples_))
        self.term_evals_ = batch.total_cost + batch.setup_cost
        self.model_ = model
        self.config_ = cfg
        return self


class SGLDLogisticRegression(ClassifierMixin, BaseEstimator):
    """Bayesian logistic regression (no intercept) by independent SGLD paths.

    ``coef_`` is the path average of the weights and ``coef_std_`` their
    spread. Probabilities average the sigmoid over all path endpoints.

    Parameters
    ----------
    prior_variance : float
    scheme : {"full", "naive", "cv"}
    batch_size : int or None
    h : float or None
        Langevin step; ``None`` uses ``step_fraction`` times the stability limit.
    horizon_const : float
        ``T = horizon_const * log(sqrt(N)) / N``.
    paths, seed, workers : int
    """

    def __init__(self, prior_variance=10.0, scheme="naive", batch_size=None, h=None, step_fraction=0.5,
                 horizon_const=3.0, paths=100, seed=0, workers=1):
        self.prior_variance = prior_variance
        self.scheme = scheme
        self.batch_size = batch_size
        self.h = h
        self.step_fraction = step_fraction
        self.horizon_const = horizon_const
        self.paths = paths
        self.seed = seed
        self.workers = workers

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if self.classes_.size != 2:
            raise ValueError(f"need exactly two classes, got {self.classes_.size}")
        model = LogisticRegressionModel(X, codes.astype(np.float64), self.prior_variance)
        h = self.h if self.h is not None else self.step_fraction * check_stability(model, 1.0).limit
        batch = self.batch_size
        if self.scheme != "full" and batch is None:
            batch = max(1, model.n_data // 10)
        scheme = make_scheme(model, self.scheme, batch)
        cfg = RunConfig(h=h, T=_horizon(self.horizon_const, model.n_data), paths=self.paths, seed=self.seed,
                        scheme=scheme, workers=self.workers)
        out = run_paths(model, cfg)
        self.samples_ = out.final_states
        self.coef_ = self.samples_.mean(axis=0)
        self.coef_std_ = self.samples_.std(axis=0)
        self.n_features_in_ = X.shape[1]
        self.term_evals_ = out.total_cost + out.setup_cost
        self.config_ = cfg
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "samples_")
        X = check_array(X)
        p1 = sigmoid(X @ self.samples_.T).mean(axis=1)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] > 0.5).astype(int)]
