"""Euler-Maruyama integration of (stochastic-gradient) Langevin dynamics.

Two time conventions are supported and fixed per run:

``"langevin"``
    ``dX = grad log pi(X) dt + sqrt(2) dW``; one step is
    ``x + h grad log pi(x) + sqrt(2h) xi``.
``"ou"``
    ``dX = (1/2) grad log pi(X) dt + dW``; one step is
    ``x + h (1/2) grad log pi(x) + sqrt(h) xi``. For the Gaussian model this is
    ``(1 - A h) x + B h + sqrt(h) xi``, the chain of :mod:`sgldlab.oracle`.

The ``ou`` chain at step ``h`` is the ``langevin`` chain at step ``h/2``.
:func:`drift_multiplier` is the only place the conversion happens.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from ._validation import check_int, check_positive
from .gradients import CV, FULL, NAIVE, CostLedger, GradientScheme, estimate_gradient, full_scheme
from .models import (GaussianConjugateModel, LogisticRegressionModel, PosteriorModel,
                     audit_assumptions, find_mode)
from .rng import INIT_STREAM, RR_COARSE_STREAM, RngStream

__all__ = [
    "CONVENTIONS",
    "StabilityError",
    "DivergenceError",
    "StabilityVerdict",
    "InitialCondition",
    "RunConfig",
    "PathOutput",
    "PathBatch",
    "drift_multiplier",
    "euler_step",
    "check_stability",
    "run_path",
    "run_paths",
    "run_rr_pair",
    "run_rr_paths",
    "initial_states",
]

CONVENTIONS = ("langevin", "ou")
_KIND_CODE = {FULL: _kernels.KIND_FULL, NAIVE: _kernels.KIND_NAIVE, CV: _kernels.KIND_CV}


class StabilityError(ValueError):
    """The step size violates the stability predicate and no override was given."""


class DivergenceError(RuntimeError):
    """A path produced a non-finite state or one beyond ``|x| > 1e10``."""

    def __init__(self, path_id, step):
        super().__init__(f"path {path_id} diverged at step {step}")
        self.path_id = path_id
        self.step = step


def _check_convention(convention):
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}, got {convention!r}")
    return convention


def drift_multiplier(model: PosteriorModel, convention):
    """Factor turning the model's native gradient into the step's drift."""
    half = 0.5 if _check_convention(convention) == "ou" else 1.0
    return half / model.potential_scale


def noise_scale(h, convention):
    return math.sqrt(2.0 * h) if _check_convention(convention) == "langevin" else math.sqrt(h)


def euler_step(x, grad, h, noise, convention="langevin"):
    """One Euler-Maruyama step; ``grad`` is the drift in the chosen convention."""
    x = np.asarray(x, dtype=np.float64)
    return x + h * np.asarray(grad, dtype=np.float64) + noise_scale(h, convention) * np.asarray(noise)


@dataclass(frozen=True)
class StabilityVerdict:
    ok: bool
    limit: float
    warnings: tuple = ()

    def __bool__(self):
        return self.ok


def check_stability(model: PosteriorModel, h, convention="langevin"):
    """Decide whether step size ``h`` is stable for ``model``.

    Gaussian model: ``h < 1/A`` (the mean contracts without oscillation in
    the ``ou`` convention and contracts at all in the ``langevin`` one).
    Other models: ``h < 2 m / M^2`` from audited curvature constants of
    ``-log pi``, which makes ``1 - 2 h m + M^2 h^2 < 1``. A warning is
    attached when ``N h >= 1``.
    """
    h = check_positive(h, "h")
    _check_convention(convention)
    if isinstance(model, GaussianConjugateModel):
        limit = 1.0 / model.A
    else:
        report = getattr(model, "_audit_cache", None)
        if report is None:
            report = audit_assumptions(model)
            model._audit_cache = report
        m = report.strong_convexity_lower / model.potential_scale
        M = report.lipschitz_upper / model.potential_scale
        limit = 2.0 * m / M**2
        if convention == "ou":
            limit *= 2.0
    notes = ()
    if model.n_data * h >= 1.0:
        notes = (f"N h = {model.n_data * h:.3g} >= 1",)
    return StabilityVerdict(bool(h < limit), float(limit), notes)


@dataclass(frozen=True)
class InitialCondition:
    """Point mass (``sd == 0``) or isotropic Gaussian ``N(mean, sd^2 I)``."""

    mean: np.ndarray
    sd: float = 0.0

    @classmethod
    def point(cls, x):
        return cls(np.atleast_1d(np.asarray(x, dtype=np.float64)), 0.0)

    @classmethod
    def gaussian(cls, mean, sd):
        if not sd >= 0:
            raise ValueError(f"sd must be nonnegative, got {sd}")
        return cls(np.atleast_1d(np.asarray(mean, dtype=np.float64)), float(sd))

    def sample(self, model, seed, path_id):
        mean = model.check(self.mean, "initial mean")
        if self.sd == 0.0:
            return mean.copy()
        return mean + self.sd * RngStream(seed, path_id | INIT_STREAM).normals(model.dim)


def default_initial(model: PosteriorModel, scheme: GradientScheme):
    """Mode for control variates and logistic regression, zero otherwise."""
    if scheme.kind == CV:
        return InitialCondition.point(scheme.anchor)
    if isinstance(model, GaussianConjugateModel):
        return InitialCondition.point(np.zeros(1))
    return InitialCondition.point(find_mode(model))


@dataclass(frozen=True)
class RunConfig:
    """Step size, horizon, path count, seed, scheme and initial condition.

    Give either the horizon ``T`` (``K = ceil(T/h)`` steps) or ``steps``.
    """

    h: float
    T: float | None = None
    steps: int | None = None
    paths: int = 1
    seed: int = 0
    scheme: GradientScheme = field(default_factory=full_scheme)
    initial: InitialCondition | None = None
    convention: str = "langevin"
    allow_unstable: bool = False
    workers: int = 1
    rr_noise: str = "common"

    def __post_init__(self):
        check_positive(self.h, "h")
        if (self.T is None) == (self.steps is None):
            raise ValueError("give exactly one of T and steps")
        if self.T is not None:
            check_positive(self.T, "T")
        else:
            check_int(self.steps, "steps")
        check_int(self.paths, "paths")
        check_int(self.workers, "workers")
        _check_convention(self.convention)
        if self.rr_noise not in ("common", "independent"):
            raise ValueError("rr_noise must be 'common' or 'independent'")

    @property
    def n_steps(self):
        if self.steps is not None:
            return self.steps
        # guard against T/h landing a hair above an integer through rounding
        ratio = self.T / self.h
        K = math.ceil(ratio)
        if K - ratio > 1.0 - 1e-9:
            K -= 1
        return max(K, 1)

    @property
    def realized_horizon(self):
        return self.n_steps * self.h

    def replace(self, **kw):
        return replace(self, **kw)

    def summary(self):
        return {"h": self.h, "T": self.T, "steps": self.n_steps, "realized_horizon": self.realized_horizon,
                "paths": self.paths, "seed": self.seed, "scheme": self.scheme.kind,
                "batch_size": self.scheme.batch_size, "convention": self.convention}


@dataclass
class PathOutput:
    final_state: np.ndarray
    ledger: CostLedger
    path_id: int


@dataclass
class PathBatch:
    """Endpoints of many paths plus cost accounting.

    ``setup_cost`` is the one-time control-variate precompute (``N`` terms),
    kept apart from the per-path ledgers.
    """

    final_states: np.ndarray
    path_ids: np.ndarray
    n_steps: int
    terms_per_step: int
    dim: int
    setup_cost: int = 0

    @property
    def P(self):
        return self.final_states.shape[0]

    def path_ledger(self):
        return CostLedger(self.n_steps * self.terms_per_step, self.n_steps, self.n_steps * self.dim)

    @property
    def total_cost(self):
        return self.P * self.n_steps * self.terms_per_step

    def outputs(self):
        led = self.path_ledger()
        return [PathOutput(self.final_states[i].copy(), CostLedger(**led.as_dict()), int(pid))
                for i, pid in enumerate(self.path_ids)]

    def rows(self):
        led = self.path_ledger()
        for pid, x in zip(self.path_ids, self.final_states):
            row = {"path_id": int(pid)}
            row.update({f"theta_{j + 1}": float(v) for j, v in enumerate(x)})
            row.update({"term_evals": led.term_evals, "steps": led.steps})
            yield row


def _prepare(model, config: RunConfig):
    scheme = config.scheme.validate_for(model)
    verdict = check_stability(model, config.h, config.convention)
    if not verdict.ok and not config.allow_unstable:
        raise StabilityError(f"h = {config.h:.4g} violates the stability limit {verdict.limit:.4g}")
    for note in verdict.warnings:
        warnings.warn(note, RuntimeWarning, stacklevel=3)
    initial = config.initial if config.initial is not None else default_initial(model, scheme)
    return scheme, initial


def _advance(model, scheme, x, h, mult, nscale, noise_rng, sub_rng, k, paired, ledger):
    g = estimate_gradient(scheme, model, x, sub_rng.block(2 * k + 1), ledger)
    if paired:
        xi = (noise_rng.block(4 * k).normals(model.dim) + noise_rng.block(4 * k + 2).normals(model.dim))
        xi = xi * (1.0 / math.sqrt(2.0))
    else:
        xi = noise_rng.block(2 * k).normals(model.dim)
    ledger.charge(steps=1, noise=model.dim)
    return x + h * (mult * g) + nscale * xi


def _simulate(model, scheme, x, h, n_steps, convention, noise_rng, sub_rng, paired, path_id):
    mult = drift_multiplier(model, convention)
    nscale = noise_scale(h, convention)
    ledger = CostLedger()
    for k in range(n_steps):
        x = _advance(model, scheme, x, h, mult, nscale, noise_rng, sub_rng, k, paired, ledger)
        if not np.all(np.abs(x) <= _kernels.DIVERGENCE_BOUND):
            raise DivergenceError(path_id, k)
    return PathOutput(x, ledger, path_id)


def run_path(model: PosteriorModel, config: RunConfig, path_id: int = 0):
    """Simulate one path with a fresh minibatch and fresh noise each step.

    Reference implementation; :func:`run_paths` gives the same numbers (up
    to summation order inside a minibatch) much faster.

    Raises
    ------
    StabilityError
        If ``check_stability`` fails and ``allow_unstable`` is not set.
    DivergenceError
        If the state becomes non-finite.
    """
    scheme, initial = _prepare(model, config)
    rng = RngStream(config.seed, path_id)
    x0 = initial.sample(model, config.seed, path_id)
    return _simulate(model, scheme, x0, config.h, config.n_steps, config.convention, rng, rng, False, path_id)


def run_rr_pair(model: PosteriorModel, config: RunConfig, path_id: int = 0, fine_batch=None):
    """A step-``h`` chain and a step-``h/2`` chain driven by one Brownian path.

    The fine chain is exactly ``run_path`` at ``h/2`` for ``2K`` steps. The
    coarse chain's noise at step ``k`` is ``(xi_{2k} + xi_{2k+1}) / sqrt(2)``
    from the fine chain's increments (or its own stream when
    ``config.rr_noise == "independent"``); its minibatches come from a
    separate stream. ``fine_batch`` overrides the fine chain's batch size.

    Returns
    -------
    (coarse, fine) : tuple of PathOutput
    """
    scheme, initial = _prepare(model, config)
    fine_scheme = scheme if fine_batch is None else scheme.with_batch(fine_batch).validate_for(model)
    K = config.n_steps
    x0 = initial.sample(model, config.seed, path_id)
    rng = RngStream(config.seed, path_id)
    coarse_rng = RngStream(config.seed, path_id | RR_COARSE_STREAM)
    fine = _simulate(model, fine_scheme, x0.copy(), 0.5 * config.h, 2 * K, config.convention, rng, rng,
                     False, path_id)
    if config.rr_noise == "common":
        coarse = _simulate(model, scheme, x0.copy(), config.h, K, config.convention, rng, coarse_rng,
                           True, path_id)
    else:
        coarse = _simulate(model, scheme, x0.copy(), config.h, K, config.convention, coarse_rng, coarse_rng,
                           False, path_id)
    return coarse, fine


# ---------------------------------------------------------------------------
# Compiled many-path drivers
# ---------------------------------------------------------------------------

def _kernel_call(model, scheme, h, convention, n_steps, seed, noise_streams, sub_streams, x0, paired):
    P = x0.shape[0]
    out = np.empty_like(x0)
    fail = np.empty(P, dtype=np.int64)
    mult = drift_multiplier(model, convention)
    nscale = noise_scale(h, convention)
    kind = _KIND_CODE[scheme.kind]
    n = model.n_data if scheme.kind == FULL else scheme.batch_size
    if isinstance(model, GaussianConjugateModel):
        anchor = (scheme.anchor_term_grads[:, 0] if scheme.kind == CV else np.zeros(1))
        _kernels.gaussian_paths(np.uint64(seed), noise_streams, sub_streams, x0[:, 0], n_steps, h * mult,
                                nscale, paired, kind, n, model.y, np.ascontiguousarray(anchor), model.A,
                                model.mean_B, 0.5 / model.sigma_theta_sq, 0.5 / model.sigma_y_sq,
                                out[:, 0], fail)
    else:
        anchor = scheme.anchor_term_grads if scheme.kind == CV else np.zeros((1, model.dim))
        _kernels.logistic_paths(np.uint64(seed), noise_streams, sub_streams, x0, n_steps, h * mult, nscale,
                                paired, kind, n, model.X, model.y, np.ascontiguousarray(anchor),
                                1.0 / model.prior_variance, out, fail)
    return out, fail


def _chunks(P, workers):
    workers = max(1, min(workers, P))
    bounds = np.linspace(0, P, workers + 1).astype(int)
    return [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _initial_block(model, initial, seed, path_ids):
    P = path_ids.size
    x0 = np.empty((P, model.dim))
    mean = model.check(initial.mean, "initial mean")
    if initial.sd == 0.0:
        x0[:] = mean
    else:
        streams = path_ids.astype(np.uint64) | np.uint64(INIT_STREAM)
        _kernels.initial_states(np.uint64(seed), streams, mean, initial.sd, x0)
    return x0


def _drive(model, scheme, h, convention, n_steps, seed, path_ids, x0, workers, mode):
    """Run the compiled kernel over ``path_ids`` in ``workers`` threads.

    ``mode`` is "plain", "rr_coarse" or "rr_coarse_indep".
    """
    ids = path_ids.astype(np.uint64)
    if mode == "plain":
        noise, sub, paired = ids, ids, False
    elif mode == "rr_coarse":
        noise, sub, paired = ids, ids | np.uint64(RR_COARSE_STREAM), True
    else:
        noise = sub = ids | np.uint64(RR_COARSE_STREAM)
        paired = False
    supported = isinstance(model, (GaussianConjugateModel, LogisticRegressionModel))
    if not supported:
        rngs = [(RngStream(seed, int(a)), RngStream(seed, int(b))) for a, b in zip(noise, sub)]
        out = np.empty_like(x0)
        for i, (nr, sr) in enumerate(rngs):
            out[i] = _simulate(model, scheme, x0[i].copy(), h, n_steps, convention, nr, sr, paired,
                               int(path_ids[i])).final_state
        return out
    pieces = _chunks(ids.size, workers)

    def job(bounds):
        a, b = bounds
        return _kernel_call(model, scheme, h, convention, n_steps, seed, noise[a:b], sub[a:b], x0[a:b], paired)

    if len(pieces) == 1:
        results = [job(pieces[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(pieces)) as pool:
            results = list(pool.map(job, pieces))
    out = np.concatenate([r[0] for r in results])
    fail = np.concatenate([r[1] for r in results])
    bad = np.flatnonzero(fail >= 0)
    if bad.size:
        first = bad[np.argmin(fail[bad])]
        raise DivergenceError(int(path_ids[first]), int(fail[first]))
    return out


def initial_states(model: PosteriorModel, config: RunConfig, path_ids=None):
    """Starting points that :func:`run_paths` uses for ``path_ids``."""
    initial = config.initial if config.initial is not None else default_initial(model, config.scheme)
    return _initial_block(model, initial, config.seed, _path_ids(config, path_ids))


def _path_ids(config, path_ids):
    if path_ids is None:
        return np.arange(config.paths, dtype=np.int64)
    path_ids = np.asarray(path_ids, dtype=np.int64)
    if path_ids.ndim != 1 or path_ids.size < 1 or np.any(path_ids < 0):
        raise ValueError("path_ids must be a nonempty vector of nonnegative integers")
    return path_ids


def run_paths(model: PosteriorModel, config: RunConfig, path_ids=None, workers=None):
    """Simulate ``config.paths`` independent paths (or the given ``path_ids``).

    Results depend only on ``(seed, path_id)``, never on ``workers``.
    """
    scheme, initial = _prepare(model, config)
    ids = _path_ids(config, path_ids)
    x0 = _initial_block(model, initial, config.seed, ids)
    out = _drive(model, scheme, config.h, config.convention, config.n_steps, config.seed, ids, x0,
                 workers or config.workers, "plain")
    setup = model.n_data if scheme.kind == CV else 0
    return PathBatch(out, ids, config.n_steps, scheme.terms_per_step(model.n_data), model.dim, setup)


def run_rr_paths(model: PosteriorModel, config: RunConfig, path_ids=None, workers=None, fine_batch=None):
    """Many Richardson-Romberg pairs; see :func:`run_rr_pair`.

    Returns
    -------
    (coarse, fine) : tuple of PathBatch
    """
    scheme, initial = _prepare(model, config)
    fine_scheme = scheme if fine_batch is None else scheme.with_batch(fine_batch).validate_for(model)
    ids = _path_ids(config, path_ids)
    x0 = _initial_block(model, initial, config.seed, ids)
    K = config.n_steps
    workers = workers or config.workers
    fine = _drive(model, fine_scheme, 0.5 * config.h, config.convention, 2 * K, config.seed, ids, x0,
                  workers, "plain")
    mode = "rr_coarse" if config.rr_noise == "common" else "rr_coarse_indep"
    coarse = _drive(model, scheme, config.h, config.convention, K, config.seed, ids, x0, workers, mode)
    setup = model.n_data if scheme.kind == CV else 0
    N = model.n_data
    return (PathBatch(coarse, ids, K, scheme.terms_per_step(N), model.dim, setup),
            PathBatch(fine, ids, 2 * K, fine_scheme.terms_per_step(N), model.dim, setup))
