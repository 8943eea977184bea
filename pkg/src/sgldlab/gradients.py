"""Full, naively subsampled and control-variate gradient estimators.

All estimators return gradients in the model's native scaling (see
:mod:`sgldlab.models`) and charge per-datum term evaluations to a
:class:`CostLedger`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_int
from .models import PosteriorModel, find_mode
from .rng import RngStream, enumerate_subsample_moments, sample_without_replacement

__all__ = [
    "FULL",
    "NAIVE",
    "CV",
    "GradientScheme",
    "CostLedger",
    "AnchorError",
    "full_scheme",
    "naive_scheme",
    "precompute_cv",
    "estimate_gradient",
    "gradient_variance",
    "make_scheme",
]

FULL, NAIVE, CV = "full", "naive", "cv"
_KINDS = (FULL, NAIVE, CV)


class AnchorError(ValueError):
    """The control-variate anchor is not close enough to the posterior mode."""


@dataclass
class CostLedger:
    """Counters of per-datum gradient terms, sampler steps and normal draws."""

    term_evals: int = 0
    steps: int = 0
    noise_draws: int = 0

    def charge(self, terms=0, steps=0, noise=0):
        if terms < 0 or steps < 0 or noise < 0:
            raise ValueError("ledger counters only increase")
        self.term_evals += int(terms)
        self.steps += int(steps)
        self.noise_draws += int(noise)

    def __add__(self, other):
        return CostLedger(self.term_evals + other.term_evals, self.steps + other.steps,
                          self.noise_draws + other.noise_draws)

    def as_dict(self):
        return {"term_evals": self.term_evals, "steps": self.steps, "noise_draws": self.noise_draws}


@dataclass(frozen=True, eq=False)
class GradientScheme:
    """An immutable gradient-estimator description.

    ``anchor_term_grads`` holds ``grad U_i(anchor)`` for every datum when
    ``kind == "cv"``.
    """

    kind: str
    batch_size: int | None = None
    anchor: np.ndarray | None = field(default=None, repr=False)
    anchor_term_grads: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown scheme kind {self.kind!r}; expected one of {_KINDS}")
        if self.kind == FULL:
            if self.batch_size is not None:
                raise ValueError("the full-gradient scheme takes no batch size")
        else:
            check_int(self.batch_size, "batch_size")
        if self.kind == CV and (self.anchor is None or self.anchor_term_grads is None):
            raise ValueError("control-variate scheme needs precomputed anchor gradients; use precompute_cv")

    def terms_per_step(self, N):
        return N if self.kind == FULL else self.batch_size

    def with_batch(self, n):
        """Same scheme (and anchor) with another batch size."""
        if self.kind == FULL:
            raise ValueError("the full-gradient scheme has no batch size")
        return replace(self, batch_size=check_int(n, "batch_size"))

    def validate_for(self, model: PosteriorModel):
        if self.batch_size is not None and self.batch_size > model.n_data:
            raise ValueError(f"batch size {self.batch_size} exceeds N = {model.n_data}")
        if self.kind == CV and self.anchor_term_grads.shape != (model.n_data, model.dim):
            raise ValueError("anchor gradients do not match the model")
        return self


def full_scheme():
    return GradientScheme(FULL)


def naive_scheme(n):
    return GradientScheme(NAIVE, n)


def precompute_cv(model: PosteriorModel, anchor, batch_size, ledger: CostLedger | None = None, tol=None):
    """Control-variate scheme anchored at ``anchor`` (normally the mode).

    Stores ``grad U_i(anchor)`` for all ``N`` terms, charging ``N`` term
    evaluations to ``ledger``.

    Raises
    ------
    AnchorError
        If ``|full_grad(anchor)| > 100 * tol`` (``tol`` defaults to the
        mode finder's ``1e-10 * N``).
    """
    anchor = model.check(anchor, "anchor")
    if tol is None:
        tol = 1e-10 * model.n_data
    gnorm = float(np.linalg.norm(model.full_grad(anchor)))
    if gnorm > 100.0 * tol:
        raise AnchorError(f"|full_grad(anchor)| = {gnorm:.3e} exceeds 100 * tol = {100 * tol:.3e}")
    grads = model.split_term_grads(anchor)
    grads.setflags(write=False)
    anchor = anchor.copy()
    anchor.setflags(write=False)
    if ledger is not None:
        ledger.charge(terms=model.n_data)
    return GradientScheme(CV, batch_size, anchor, grads).validate_for(model)


def make_scheme(model: PosteriorModel, kind, batch_size=None, ledger=None):
    """Build a scheme by name; ``cv`` anchors at :func:`find_mode`."""
    if kind == FULL:
        return full_scheme()
    if batch_size is None:
        raise ValueError(f"scheme {kind!r} needs a batch size")
    if kind == NAIVE:
        return naive_scheme(batch_size).validate_for(model)
    if kind == CV:
        return precompute_cv(model, find_mode(model), batch_size, ledger)
    raise ValueError(f"unknown scheme kind {kind!r}")


def estimate_gradient(scheme: GradientScheme, model: PosteriorModel, x, rng: RngStream,
                      ledger: CostLedger | None = None):
    """One draw of the scheme's gradient estimate at ``x``.

    ``rng`` supplies the minibatch and is advanced. Every scheme is
    unbiased for ``model.full_grad(x)``; the control variate is off by the
    residual ``full_grad(anchor)``, which is at rounding level for an anchor
    from :func:`find_mode`.
    """
    x = model.check(x)
    N = model.n_data
    if scheme.kind == FULL or (scheme.kind == NAIVE and scheme.batch_size == N):
        g = model._full_grad(x)
        cost = N
    else:
        n = scheme.batch_size
        if n > N:
            raise ValueError(f"batch size {n} exceeds N = {N}")
        idx = sample_without_replacement(N, n, rng)
        if scheme.kind == NAIVE:
            g = model._prior_grad(x) + (N / n) * model._lik_grads(x, idx).sum(axis=0)
        else:
            diff = model._lik_grads(x, idx) + model._prior_grad(x) / N - scheme.anchor_term_grads[idx]
            g = (N / n) * diff.sum(axis=0)
        cost = n
    if ledger is not None:
        ledger.charge(terms=cost)
    return g


def _centred_terms(scheme, model, x):
    if scheme.kind == NAIVE:
        return model._lik_grads(x)
    return model.split_term_grads(x) - scheme.anchor_term_grads


def gradient_variance(scheme: GradientScheme, model: PosteriorModel, x, mode="enumerate",
                      R=1000, rng: RngStream | None = None, exact=False):
    """Scalar variance (trace of the covariance) of the estimator at ``x``.

    Parameters
    ----------
    mode : {"enumerate", "monte_carlo"}
        ``enumerate`` averages over every subset (exact; needs N <= 20).
        ``monte_carlo`` returns the unbiased sample variance of ``R`` draws.
    """
    x = model.check(x)
    if scheme.kind == FULL:
        return 0.0
    if mode == "enumerate":
        _, var = enumerate_subsample_moments(_centred_terms(scheme, model, x), scheme.batch_size, exact=exact)
        return float(var)
    if mode == "monte_carlo":
        R = check_int(R, "R", minimum=2)
        if rng is None:
            raise ValueError("monte_carlo mode needs an rng")
        draws = np.array([estimate_gradient(scheme, model, x, rng) for _ in range(R)])
        return float(np.sum(np.var(draws, axis=0, ddof=1)))
    raise ValueError(f"unknown mode {mode!r}")
