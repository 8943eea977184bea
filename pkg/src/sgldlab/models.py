"""Posterior models: the conjugate Gaussian toy model and Bayesian logistic regression.

Gradient convention
-------------------
Every model returns gradients of ``potential_scale * log posterior``. The
Gaussian model keeps the half-scaled convention in which its discretised
Langevin chain reads ``theta <- (1 - A h) theta + B h + sqrt(h) xi``
(``potential_scale = 0.5``); logistic regression uses the plain log posterior
(``potential_scale = 1``). The sampler converts between conventions in one
place (:func:`sgldlab.sampler.drift_multiplier`).

For control variates each datum carries a share of the prior,
``U_i(x) = log pi(x) / N + log pi(y_i | x)`` (times ``potential_scale``), so
that ``sum_i grad U_i(x*) = 0`` at the posterior mode.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_index, check_int, check_param_vector, check_positive
from .rng import DATA_STREAM, RngStream

__all__ = [
    "PosteriorModel",
    "GaussianConjugateModel",
    "LogisticRegressionModel",
    "ModelAssumptionReport",
    "ConvergenceError",
    "sigmoid",
    "generate_gaussian_data",
    "generate_logreg_data",
    "grad_log_prior",
    "grad_log_lik_term",
    "full_grad",
    "exact_posterior",
    "find_mode",
    "audit_assumptions",
]


class ConvergenceError(RuntimeError):
    """Newton iteration stopped before reaching the gradient tolerance."""

    def __init__(self, message, iterate, grad_norm):
        super().__init__(f"{message} (|grad| = {grad_norm:.3e})")
        self.iterate = iterate
        self.grad_norm = grad_norm


def sigmoid(z):
    """Logistic function, split on sign(z) so no exp overflows."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class PosteriorModel:
    """Base class: a posterior ``pi(x) prod_i pi(y_i | x)`` over R^d.

    Subclasses implement the vectorised primitives ``_prior_grad``,
    ``_lik_grads``, ``_log_posterior`` and ``_hessian``.
    """

    potential_scale = 1.0
    dim: int
    n_data: int

    # -- primitives -------------------------------------------------------
    def _prior_grad(self, x):
        raise NotImplementedError

    def _lik_grads(self, x, idx=None):
        raise NotImplementedError

    def _log_posterior(self, x):
        raise NotImplementedError

    def _hessian(self, x):
        raise NotImplementedError

    def _full_grad(self, x):
        return self._prior_grad(x) + self._lik_grads(x).sum(axis=0)

    # -- public surface ---------------------------------------------------
    def check(self, x, name="x"):
        return check_param_vector(x, self.dim, name)

    def grad_log_prior(self, x):
        return self._prior_grad(self.check(x))

    def grad_log_lik_term(self, i, x):
        i = check_index(i, self.n_data, "datum index")
        return self._lik_grads(self.check(x), np.array([i]))[0]

    def lik_grads(self, x, idx=None):
        """Per-datum likelihood gradients, shape ``(len(idx), d)``."""
        return self._lik_grads(self.check(x), idx)

    def full_grad(self, x):
        return self._full_grad(self.check(x))

    def split_term_grads(self, x, idx=None):
        """Gradients of ``U_i`` (likelihood term plus ``1/N`` of the prior)."""
        x = self.check(x)
        return self._lik_grads(x, idx) + self._prior_grad(x) / self.n_data

    def log_posterior(self, x):
        """Unnormalised log posterior (not scaled by ``potential_scale``)."""
        return float(self._log_posterior(self.check(x)))

    def hessian(self, x):
        """Hessian of ``potential_scale * log posterior``."""
        return self._hessian(self.check(x))

    def term_modes(self):
        """Maximisers ``x*_i`` of each ``U_i``, shape ``(N, d)``."""
        raise NotImplementedError


class GaussianConjugateModel(PosteriorModel):
    """theta ~ N(0, sigma_theta_sq), y_i | theta ~ N(theta, sigma_y_sq)."""

    potential_scale = 0.5

    def __init__(self, data, sigma_theta_sq=1.0, sigma_y_sq=1.0):
        self.sigma_theta_sq = check_positive(sigma_theta_sq, "sigma_theta_sq")
        self.sigma_y_sq = check_positive(sigma_y_sq, "sigma_y_sq")
        y = np.asarray(data, dtype=np.float64).ravel()
        if y.size < 1:
            raise ValueError("at least one observation is required")
        if not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite")
        self.y = y
        self.y.setflags(write=False)
        self.dim = 1
        self.n_data = y.size
        self.sum_y = float(np.sum(y))
        self.A = 0.5 * (1.0 / self.sigma_theta_sq + self.n_data / self.sigma_y_sq)
        self.mean_B = self.sum_y / (2.0 * self.sigma_y_sq)

    def __repr__(self):
        return (f"GaussianConjugateModel(N={self.n_data}, sigma_theta_sq={self.sigma_theta_sq}, "
                f"sigma_y_sq={self.sigma_y_sq})")

    def _prior_grad(self, x):
        return -x / (2.0 * self.sigma_theta_sq)

    def _lik_grads(self, x, idx=None):
        y = self.y if idx is None else self.y[idx]
        return ((y - x[0]) / (2.0 * self.sigma_y_sq))[:, None]

    def _full_grad(self, x):
        return -self.A * x + self.mean_B

    def _log_posterior(self, x):
        t = x[0]
        return -t * t / (2.0 * self.sigma_theta_sq) - np.sum((self.y - t) ** 2) / (2.0 * self.sigma_y_sq)

    def _hessian(self, x):
        return np.array([[-self.A]])

    def exact_posterior(self):
        """Posterior mean and variance."""
        mean = self.sum_y / (self.sigma_y_sq / self.sigma_theta_sq + self.n_data)
        var = 1.0 / (1.0 / self.sigma_theta_sq + self.n_data / self.sigma_y_sq)
        return mean, var

    def term_modes(self):
        ratio = self.n_data * self.sigma_theta_sq
        return (self.y * ratio / (ratio + self.sigma_y_sq))[:, None]


class LogisticRegressionModel(PosteriorModel):
    """w ~ N(0, prior_variance I), y_n ~ Bernoulli(sigmoid(w . x_n)), no intercept."""

    potential_scale = 1.0

    def __init__(self, covariates, labels, prior_variance=10.0):
        X = np.asarray(covariates, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"covariates must be an (N, d) matrix, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("covariates must be finite")
        y = np.asarray(labels, dtype=np.float64).ravel()
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"{X.shape[0]} covariate rows but {y.shape[0]} labels")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("labels must be exactly 0 or 1")
        if X.shape[0] < 1:
            raise ValueError("at least one observation is required")
        self.prior_variance = check_positive(prior_variance, "prior_variance")
        self.X = X
        self.y = y
        self.X.setflags(write=False)
        self.y.setflags(write=False)
        self.n_data, self.dim = X.shape

    def __repr__(self):
        return f"LogisticRegressionModel(N={self.n_data}, d={self.dim}, prior_variance={self.prior_variance})"

    def _prior_grad(self, x):
        return -x / self.prior_variance

    def _lik_grads(self, x, idx=None):
        X = self.X if idx is None else self.X[idx]
        y = self.y if idx is None else self.y[idx]
        return (y - sigmoid(X @ x))[:, None] * X

    def _full_grad(self, x):
        return self._prior_grad(x) + self.X.T @ (self.y - sigmoid(self.X @ x))

    def _log_posterior(self, x):
        z = self.X @ x
        return -x @ x / (2.0 * self.prior_variance) + np.sum(self.y * z - np.logaddexp(0.0, z))

    def _hessian(self, x):
        s = sigmoid(self.X @ x)
        return -np.eye(self.dim) / self.prior_variance - (self.X.T * (s * (1.0 - s))) @ self.X

    def term_modes(self, tol=1e-10, max_iter=200):
        # The maximiser of U_i lies on the ray through x_i: w = t x_i with
        # t = N sigma^2 (y_i - sigmoid(t |x_i|^2)), a monotone scalar equation.
        c = self.n_data * self.prior_variance
        q = np.einsum("ij,ij->i", self.X, self.X)
        t = np.zeros(self.n_data)
        for _ in range(max_iter):
            s = sigmoid(t * q)
            phi = t - c * (self.y - s)
            if np.max(np.abs(phi * np.sqrt(q) / c)) <= tol:
                break
            t = t - phi / (1.0 + c * q * s * (1.0 - s))
        else:
            raise ConvergenceError("per-term Newton did not converge", t, float(np.max(np.abs(phi))))
        return t[:, None] * self.X


# ---------------------------------------------------------------------------
# Functional surface
# ---------------------------------------------------------------------------

def grad_log_prior(model: PosteriorModel, x):
    return model.grad_log_prior(x)


def grad_log_lik_term(model: PosteriorModel, i, x):
    return model.grad_log_lik_term(i, x)


def full_grad(model: PosteriorModel, x):
    return model.full_grad(x)


def exact_posterior(model: GaussianConjugateModel):
    return model.exact_posterior()


def generate_gaussian_data(N, sigma_theta_sq=1.0, sigma_y_sq=1.0, seed=0, theta_true=None):
    """Draw ``N`` observations from the toy model.

    ``theta_true`` defaults to a draw from the prior. The dataset is a pure
    function of the arguments.
    """
    N = check_int(N, "N")
    check_positive(sigma_theta_sq, "sigma_theta_sq")
    check_positive(sigma_y_sq, "sigma_y_sq")
    rng = RngStream(seed, DATA_STREAM)
    z = rng.normals(N + 1)
    if theta_true is None:
        theta_true = np.sqrt(sigma_theta_sq) * z[0]
    y = theta_true + np.sqrt(sigma_y_sq) * z[1:]
    return GaussianConjugateModel(y, sigma_theta_sq, sigma_y_sq)


def generate_logreg_data(d, N, prior_variance=10.0, seed=0):
    """Synthetic logistic-regression data with correlated Gaussian covariates.

    mu_i ~ U[0, 1], C_ij ~ U[-1, 1], P = C C^T, x_n ~ N(mu, P),
    w_j ~ N(0, prior_variance), y_n ~ Bernoulli(sigmoid(w . x_n)).
    The covariates are drawn as ``mu + C z`` with standard normal ``z``,
    which has covariance exactly ``C C^T``.

    Returns
    -------
    model : LogisticRegressionModel
        With attributes ``true_weights``, ``covariate_mean`` and
        ``covariate_cov`` recording the generating parameters.
    """
    d = check_int(d, "d")
    N = check_int(N, "N")
    prior_variance = check_positive(prior_variance, "prior_variance")
    rng = RngStream(seed, DATA_STREAM)
    mu = rng.uniforms(d)
    C = 2.0 * rng.uniforms(d * d).reshape(d, d) - 1.0
    P = C @ C.T
    w = np.sqrt(prior_variance) * rng.normals(d)
    Z = rng.normals(N * d).reshape(N, d)
    X = mu + Z @ C.T
    y = (rng.uniforms(N) < sigmoid(X @ w)).astype(np.float64)
    model = LogisticRegressionModel(X, y, prior_variance)
    model.true_weights = w
    model.covariate_mean = mu
    model.covariate_cov = P
    model.seed = seed
    return model


def _polish_root(model, x, g, steps=4):
    # undamped Newton while the gradient norm keeps shrinking
    gnorm = float(np.linalg.norm(g))
    for _ in range(steps):
        if gnorm == 0.0:
            break
        x_new = x - np.linalg.solve(model._hessian(x), g)
        g_new = model._full_grad(x_new)
        n_new = float(np.linalg.norm(g_new))
        if not n_new < gnorm:
            break
        x, g, gnorm = x_new, g_new, n_new
    return x


def find_mode(model: PosteriorModel, tol=None, max_iter=100, x0=None):
    """Posterior mode by damped Newton (closed form for the Gaussian model).

    The step is halved until the log posterior does not decrease. ``tol``
    bounds the Euclidean norm of ``full_grad`` and defaults to ``1e-10 * N``.
    Once within ``tol`` a few plain Newton steps polish the root down to
    rounding level, so control variates anchored here are unbiased to
    machine precision.

    Raises
    ------
    ConvergenceError
        If ``max_iter`` iterations do not reach ``tol``.
    """
    if isinstance(model, GaussianConjugateModel):
        return np.array([model.exact_posterior()[0]])
    if tol is None:
        tol = 1e-10 * model.n_data
    check_positive(tol, "tol")
    x = np.zeros(model.dim) if x0 is None else model.check(x0, "x0")
    lp = model._log_posterior(x)
    g = model._full_grad(x)
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return _polish_root(model, x, g)
        step = -np.linalg.solve(model._hessian(x), g)
        t = 1.0
        for _ in range(60):
            x_new = x + t * step
            lp_new = model._log_posterior(x_new)
            if lp_new >= lp:
                break
            t *= 0.5
        else:
            raise ConvergenceError("line search failed", x, gnorm)
        x, lp = x_new, lp_new
        g = model._full_grad(x)
    gnorm = float(np.linalg.norm(g))
    if gnorm <= tol:
        return _polish_root(model, x, g)
    raise ConvergenceError(f"Newton did not converge in {max_iter} iterations", x, gnorm)


@dataclass(frozen=True)
class ModelAssumptionReport:
    """Empirical curvature constants of ``potential_scale * log posterior``.

    ``strong_convexity_lower`` and ``lipschitz_upper`` are the smallest
    one-sided and largest two-sided gradient quotients over sampled pairs;
    ``mode_scatter`` is ``(1/N) E_tau (N/n) sum |x*_tau_i - x*|^2``.
    ``wide_interval`` marks models whose sampled constants are only local
    (logistic regression is not strongly log-concave).
    """

    strong_convexity_lower: float
    lipschitz_upper: float
    per_term_lipschitz_max: float
    mode_scatter: float
    wide_interval: bool = False

    @property
    def m0(self):
        """Dissipativity constant 3m/4 used by the moment bounds."""
        return 0.75 * self.strong_convexity_lower


def audit_assumptions(model: PosteriorModel, sample_points=20, batch=None, seed=0, spread=3.0):
    """Estimate m, M, M-tilde and the mode-scatter statistic.

    Points are drawn around the mode at ``spread`` times the local posterior
    scale; every pair of points contributes gradient quotients. The
    mode-scatter expectation is averaged over ``sample_points`` minibatches
    of size ``batch`` (default ``N``, which makes it exact).
    """
    sample_points = check_int(sample_points, "sample_points", minimum=2)
    N = model.n_data
    n = N if batch is None else check_int(batch, "batch")
    if n > N:
        raise ValueError(f"batch {n} exceeds N = {N}")
    x_star = find_mode(model)
    cov = np.linalg.inv(-model.hessian(x_star))
    L = np.linalg.cholesky(cov)
    rng = RngStream(seed, 0)
    pts = x_star + spread * rng.normals(sample_points * model.dim).reshape(sample_points, model.dim) @ L.T
    grads = np.array([model._full_grad(p) for p in pts])
    terms = np.array([model.split_term_grads(p) for p in pts])  # (s, N, d)

    m_lo, M_hi, Mt = np.inf, 0.0, 0.0
    for a in range(sample_points):
        for b in range(a + 1, sample_points):
            dx = pts[b] - pts[a]
            r2 = float(dx @ dx)
            if r2 == 0.0:
                continue
            dg = grads[b] - grads[a]
            m_lo = min(m_lo, -float(dg @ dx) / r2)
            M_hi = max(M_hi, float(np.linalg.norm(dg)) / np.sqrt(r2))
            dterm = np.linalg.norm(terms[b] - terms[a], axis=1)
            Mt = max(Mt, float(dterm.max()) / np.sqrt(r2))

    modes = model.term_modes()
    sq = np.sum((modes - x_star) ** 2, axis=1)
    if n == N:
        scatter = float(np.sum(sq)) / N
    else:
        from .rng import sample_without_replacement
        vals = [N / n * np.sum(sq[sample_without_replacement(N, n, rng)]) for _ in range(sample_points)]
        scatter = float(np.mean(vals)) / N
    return ModelAssumptionReport(
        strong_convexity_lower=float(max(m_lo, 0.0)),
        lipschitz_upper=float(M_hi),
        per_term_lipschitz_max=float(Mt),
        mode_scatter=scatter,
        wide_interval=isinstance(model, LogisticRegressionModel),
    )
