"""Closed-form moments of the subsampled Gaussian chain.

Everything here is in the chain convention

    theta_{k+1} = (1 - A h) theta_k + B_k h + sqrt(h) xi_k,

with ``A = (1/sigma_theta^2 + N/sigma_y^2) / 2`` and the minibatch term
``B_k = (N/n) sum_{i in tau_k} y_i / (2 sigma_y^2)``. ``E B`` and
``Var B`` do not depend on ``k``; the subsets are independent across steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_int, check_positive

__all__ = [
    "OracleInputs",
    "oracle_var_B",
    "oracle_mean",
    "oracle_bias",
    "oracle_variance",
    "oracle_variance_recursion",
    "oracle_mse",
    "stationary_variance",
    "oracle_rr_variance_bias",
    "relative_variance_bias",
    "oracle_inputs_for",
]


def oracle_var_B(data, sigma_y_sq, n):
    """Variance of ``B`` under subsampling without replacement.

    ``N (N - n) / n * Var(y) / (4 sigma_y^4)`` with the unbiased empirical
    variance of the data.
    """
    y = np.asarray(data, dtype=np.float64).ravel()
    N = y.size
    n = check_int(n, "n")
    if n > N:
        raise ValueError(f"batch size {n} exceeds N = {N}")
    sigma_y_sq = check_positive(sigma_y_sq, "sigma_y_sq")
    if n == N:
        return 0.0
    if N < 2:
        raise ValueError("Var(y) is undefined for a single observation")
    ybar = math.fsum(y) / N
    var_y = math.fsum((y - ybar) ** 2) / (N - 1)
    return N * (N - n) / n * var_y / (4.0 * sigma_y_sq**2)


@dataclass(frozen=True)
class OracleInputs:
    """Parameters of the chain. ``M`` may be ``math.inf`` for the stationary limit."""

    A: float
    mean_B: float
    var_B: float
    h: float
    theta0_mean: float = 0.0
    theta0_var: float = 0.0
    M: float = math.inf
    P: int = 1

    def __post_init__(self):
        check_positive(self.A, "A")
        check_positive(self.h, "h")
        if not self.A * self.h < 1.0:
            raise ValueError(f"oracle needs 0 < h < 1/A; got A h = {self.A * self.h}")
        if self.var_B < 0 or self.theta0_var < 0:
            raise ValueError("variances must be nonnegative")
        if not (self.M == math.inf or (float(self.M).is_integer() and self.M >= 0)):
            raise ValueError(f"M must be a nonnegative integer or inf, got {self.M}")
        check_int(self.P, "P")

    @property
    def rho(self):
        """Per-step contraction factor ``1 - A h`` of the mean."""
        return 1.0 - self.A * self.h

    def decay(self, power=1):
        """``(1 - A h)^(power M)``, zero in the stationary limit."""
        if self.M == math.inf:
            return 0.0
        return self.rho ** (power * self.M)

    def replace(self, **kw):
        from dataclasses import replace
        return replace(self, **kw)


def oracle_inputs_for(model, h, n=None, M=math.inf, P=1, theta0_mean=0.0, theta0_var=0.0):
    """Oracle inputs for a :class:`~sgldlab.models.GaussianConjugateModel`."""
    N = model.n_data
    var_B = 0.0 if n is None or n == N else oracle_var_B(model.y, model.sigma_y_sq, n)
    return OracleInputs(model.A, model.mean_B, var_B, h, theta0_mean, theta0_var, M, P)


def oracle_mean(inp: OracleInputs):
    """``E theta_M``."""
    target = inp.mean_B / inp.A
    return target + inp.decay() * (inp.theta0_mean - target)


def oracle_bias(inp: OracleInputs):
    """``|E theta_M - E B / A| = (1 - A h)^M |theta0_mean - E B / A|``."""
    return inp.decay() * abs(inp.theta0_mean - inp.mean_B / inp.A)


def stationary_variance(A, h, var_B, theta0_var=0.0):
    """``(1 + h Var B + (1 - A h)^2 Var theta0) / (2 A - A^2 h)``."""
    return (1.0 + h * var_B + (1.0 - A * h) ** 2 * theta0_var) / (2.0 * A - A * A * h)


def oracle_variance(inp: OracleInputs):
    """``Var theta_M`` in closed form.

    Solves ``V_{k+1} = (1 - A h)^2 V_k + h + h^2 Var B`` from
    ``V_0 = theta0_var``:
    ``V_M = (1 + h Var B)(1 - rho^M) / (2A - A^2 h) + rho^M theta0_var``
    with ``rho = (1 - A h)^2``.
    """
    q = inp.decay(2)
    vinf = stationary_variance(inp.A, inp.h, inp.var_B)
    return vinf * (1.0 - q) + q * inp.theta0_var


def oracle_variance_recursion(inp: OracleInputs):
    """``Var theta_M`` by iterating the one-step recursion (finite ``M`` only)."""
    if inp.M == math.inf:
        raise ValueError("the recursion needs a finite M")
    rho2 = inp.rho**2
    inc = inp.h + inp.h**2 * inp.var_B
    v = inp.theta0_var
    for _ in range(int(inp.M)):
        v = rho2 * v + inc
    return v


def oracle_mse(inp: OracleInputs):
    """MSE of the P-path average of ``theta_M`` as an estimator of ``E B / A``.

    Equals ``bias^2 + Var(theta_M) / P``. For ``theta0_var = 0`` this is
    ``q (d^2 - V/P) + V/P`` with ``q = (1 - A h)^(2M)``, ``d`` the initial
    offset and ``V`` the stationary variance.
    """
    return oracle_bias(inp) ** 2 + oracle_variance(inp) / inp.P


def oracle_rr_variance_bias(A, h, var_B, var_B_fine=None):
    """Bias of the stationary-variance estimate, plain and extrapolated.

    Returns ``(plain, rr)`` with ``plain = V(h) - 1/(2A)`` and
    ``rr = 2 V_fine(h/2) - V(h) - 1/(2A)``, where ``V`` is the stationary
    variance. ``var_B_fine`` is the minibatch variance of the half-step
    chain; by default it is ``2 var_B``, the value obtained when the fine
    chain halves its batch so both chains spend the same work per unit time
    (exact for ``n << N``). Pass ``var_B_fine=var_B`` for equal batches.
    """
    check_positive(A, "A")
    check_positive(h, "h")
    if not A * h < 1.0:
        raise ValueError(f"need 0 < h < 1/A; got A h = {A * h}")
    if var_B_fine is None:
        var_B_fine = 2.0 * var_B
    target = 0.5 / A
    coarse = stationary_variance(A, h, var_B)
    fine = stationary_variance(A, 0.5 * h, var_B_fine)
    return coarse - target, 2.0 * fine - coarse - target


def relative_variance_bias(A, h, var_B, rr=False, var_B_fine=None):
    """Relative bias of the stationary variance w.r.t. ``1/(2A)``."""
    plain, extrap = oracle_rr_variance_bias(A, h, var_B, var_B_fine)
    return (extrap if rr else plain) * 2.0 * A
