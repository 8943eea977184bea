"""Random-walk Metropolis-Hastings for reference posterior moments."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from ._validation import check_int
from .models import GaussianConjugateModel, LogisticRegressionModel, PosteriorModel, find_mode
from .rng import MH_STREAM, _block, _normals_into

__all__ = ["MhConfig", "MhResult", "log_posterior", "mh_sample", "batch_means_ess"]

_TWO_M53 = 2.0**-53
_TUNE_WINDOW = 100
_TARGET_LOW, _TARGET_HIGH = 0.2, 0.4
_WARN_LOW, _WARN_HIGH = 0.05, 0.8


def log_posterior(model: PosteriorModel, x):
    """Unnormalised log posterior ``log pi(x) + sum_i log pi(y_i | x)``.

    Its gradient is ``model.full_grad(x) / model.potential_scale``.
    """
    return model.log_posterior(x)


@dataclass(frozen=True)
class MhConfig:
    """Chain length, burn-in, thinning, proposal scale (``"auto"`` tunes it) and seed."""

    steps: int
    burn_in: int = 0
    thin: int = 1
    proposal_scale: float | str = "auto"
    seed: int = 0

    def __post_init__(self):
        check_int(self.steps, "steps")
        check_int(self.burn_in, "burn_in", minimum=0)
        check_int(self.thin, "thin")
        if not self.burn_in < self.steps:
            raise ValueError("burn_in must be smaller than steps")
        if self.proposal_scale != "auto":
            if not (isinstance(self.proposal_scale, (int, float)) and self.proposal_scale > 0):
                raise ValueError("proposal_scale must be positive or 'auto'")


@dataclass
class MhResult:
    samples: np.ndarray
    acceptance_rate: float
    proposal_scale: float
    ess: np.ndarray
    warnings: list = field(default_factory=list)

    @property
    def metadata(self):
        return {"acceptance_rate": self.acceptance_rate, "proposal_scale": self.proposal_scale,
                "ess": [float(e) for e in self.ess], "warnings": list(self.warnings)}


@nb.njit(cache=True, nogil=True)
def _log1pexp(z):
    if z > 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


@nb.njit(cache=True, nogil=True)
def _logdens(code, x, X, y, a, b):
    if code == 0:
        # Gaussian: a = posterior mean, b = posterior variance
        t = x[0] - a
        return -0.5 * t * t / b
    # logistic: b = prior variance
    s = 0.0
    for j in range(x.shape[0]):
        s -= 0.5 * x[j] * x[j] / b
    for i in range(X.shape[0]):
        z = 0.0
        for j in range(x.shape[0]):
            z += X[i, j] * x[j]
        s += y[i] * z - _log1pexp(z)
    return s


@nb.njit(cache=True, nogil=True)
def _mh_kernel(seed, stream, code, X, y, a, b, x0, scale, steps, burn_in, thin, tune, out):
    d = x0.shape[0]
    x = x0.copy()
    prop = np.empty(d)
    z = np.empty(d)
    lp = _logdens(code, x, X, y, a, b)
    counter = np.uint64(0)
    window_acc = 0
    accepted = 0
    row = 0
    for k in range(steps):
        counter = _normals_into(seed, stream, counter, z)
        w0, w1, w2, w3 = _block(seed, stream, counter)
        counter += np.uint64(1)
        u = (np.float64(((w1 << np.uint64(32)) | w0) >> np.uint64(11)) + 0.5) * _TWO_M53
        for j in range(d):
            prop[j] = x[j] + scale * z[j]
        lp_new = _logdens(code, prop, X, y, a, b)
        if math.log(u) < lp_new - lp:
            x[:] = prop
            lp = lp_new
            if k < burn_in:
                window_acc += 1
            else:
                accepted += 1
        if k < burn_in:
            if tune and (k + 1) % 100 == 0:
                rate = window_acc / 100.0
                if rate > 0.4:
                    scale *= 1.1
                elif rate < 0.2:
                    scale *= 0.9
                window_acc = 0
        elif (k - burn_in) % thin == 0:
            out[row, :] = x
            row += 1
    return accepted, scale


def batch_means_ess(samples, n_batches=None):
    """Effective sample size per coordinate from non-overlapping batch means."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    b = n_batches or max(int(math.isqrt(n)), 2)
    m = n // b
    if m < 1:
        raise ValueError("too few samples for batch means")
    means = x[: b * m].reshape(b, m, -1).mean(axis=1)
    var_bm = m * np.var(means, axis=0, ddof=1)
    var = np.var(x, axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ess = np.where(var_bm > 0, n * var / var_bm, float(n))
    return ess


def _initial_scale(model, x0):
    curv = -model.hessian(x0) / model.potential_scale
    cov = np.linalg.inv(curv)
    return 2.38 / math.sqrt(model.dim) * math.sqrt(float(np.min(np.linalg.eigvalsh(cov))))


def mh_sample(model: PosteriorModel, config: MhConfig, chain=0):
    """Random-walk Metropolis-Hastings started at the posterior mode.

    Proposals are ``x + scale * z`` with standard normal ``z``. With
    ``proposal_scale="auto"`` the scale starts at ``2.38/sqrt(d)`` times the
    smallest posterior standard deviation and is multiplied by 1.1 (0.9)
    after each 100-step burn-in window with acceptance above 0.4 (below
    0.2). It is frozen after burn-in. ``chain`` selects an independent
    random stream.

    Returns
    -------
    MhResult
        Post-burn-in thinned samples, post-burn-in acceptance rate, final
        scale, batch-means ESS per coordinate and any tuning warnings.
    """
    x0 = find_mode(model)
    tune = config.proposal_scale == "auto"
    scale = _initial_scale(model, x0) if tune else float(config.proposal_scale)
    if isinstance(model, GaussianConjugateModel):
        mean, var = model.exact_posterior()
        code, X, y, a, b = 0, np.zeros((1, 1)), np.zeros(1), mean, var
    elif isinstance(model, LogisticRegressionModel):
        code, X, y, a, b = 1, model.X, model.y, 0.0, model.prior_variance
    else:
        raise TypeError(f"no compiled log density for {type(model).__name__}")
    kept = len(range(config.burn_in, config.steps, config.thin))
    out = np.empty((kept, model.dim))
    stream = np.uint64(MH_STREAM | int(chain))
    accepted, scale = _mh_kernel(np.uint64(config.seed), stream, code, X, y, float(a), float(b), x0, scale,
                                 config.steps, config.burn_in, config.thin, tune, out)
    rate = accepted / (config.steps - config.burn_in)
    notes = []
    if not _WARN_LOW <= rate <= _WARN_HIGH:
        notes.append(f"acceptance rate {rate:.3f} outside [{_WARN_LOW}, {_WARN_HIGH}] after tuning")
    ess = batch_means_ess(out) if kept >= 4 else np.full(model.dim, float(kept))
    return MhResult(out, float(rate), float(scale), ess, notes)
