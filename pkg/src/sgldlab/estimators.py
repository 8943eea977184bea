"""Functionals of path endpoints, the independent-paths estimator and error summaries."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._validation import check_int
from .rng import BOOTSTRAP_STREAM, RngStream

__all__ = [
    "Functional",
    "EstimateReport",
    "MseReport",
    "endpoint_values",
    "independent_paths_estimate",
    "posterior_std_estimate",
    "mse_report",
    "bootstrap_se",
    "estimate_report",
]


@dataclass(frozen=True)
class Functional:
    """A scalar function of the chain state.

    ``kind`` is ``"coordinate"``, ``"squared_coordinate"``,
    ``"abs_sin_centered"`` (``|sin x_j - center|``) or ``"custom"``.
    ``index=None`` applies the function to every coordinate and sums.
    """

    kind: str
    index: int | None = 0
    center: float = 0.0
    fn: Callable | None = field(default=None, compare=False, repr=False)
    tag: str | None = None

    def __post_init__(self):
        if self.kind not in ("coordinate", "squared_coordinate", "abs_sin_centered", "custom"):
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.kind == "custom" and self.fn is None:
            raise ValueError("custom functionals need fn")

    @classmethod
    def coordinate(cls, j=0):
        return cls("coordinate", j)

    @classmethod
    def squared_coordinate(cls, j=0):
        return cls("squared_coordinate", j)

    @classmethod
    def abs_sin_centered(cls, center, j=0):
        return cls("abs_sin_centered", j, float(center))

    @property
    def name(self):
        if self.tag:
            return self.tag
        return {"coordinate": "identity", "squared_coordinate": "square",
                "abs_sin_centered": "abs_sin", "custom": "custom"}[self.kind]

    @property
    def lipschitz_bound(self):
        if self.kind in ("coordinate", "abs_sin_centered"):
            return 1.0
        return None

    def __call__(self, states):
        """Values for an ``(P, d)`` array of states (or a single state)."""
        x = np.asarray(states, dtype=np.float64)
        single = x.ndim <= 1
        if single:
            x = x.reshape(1, -1)
        if self.kind == "custom":
            vals = np.asarray([self.fn(row) for row in x], dtype=np.float64)
        else:
            cols = x if self.index is None else x[:, [self.index]]
            if self.kind == "coordinate":
                v = cols
            elif self.kind == "squared_coordinate":
                v = cols**2
            else:
                v = np.abs(np.sin(cols) - self.center)
            vals = v.sum(axis=1)
        return float(vals[0]) if single else vals


def endpoint_values(f: Functional, outputs):
    """``f`` at every endpoint of a PathBatch, list of PathOutput, or array."""
    if hasattr(outputs, "final_states"):
        states = outputs.final_states
    elif isinstance(outputs, (list, tuple)) and outputs and hasattr(outputs[0], "final_state"):
        states = np.array([o.final_state for o in outputs])
    else:
        states = np.asarray(outputs, dtype=np.float64)
        if states.ndim == 1:
            states = states[:, None]
    if states.shape[0] == 0:
        raise ValueError("no path outputs given")
    return f(states)


def independent_paths_estimate(f: Functional, outputs):
    """``(1/P) sum_p f(theta_p)``, summed exactly so order does not matter."""
    vals = endpoint_values(f, outputs)
    return math.fsum(vals) / vals.size


def posterior_std_estimate(outputs, f: Functional | None = None):
    """Population standard deviation of ``f`` over the endpoints (clamped at 0)."""
    f = f or Functional.coordinate(0)
    vals = endpoint_values(f, outputs)
    if vals.size < 2:
        raise ValueError("need at least two paths")
    m1 = math.fsum(vals) / vals.size
    m2 = math.fsum(vals * vals) / vals.size
    return math.sqrt(max(m2 - m1 * m1, 0.0))


@dataclass(frozen=True)
class MseReport:
    bias_sq: float
    variance: float
    mse: float
    rmse: float


def mse_report(f, reference, replicates):
    """Squared bias, unbiased variance, MSE and RMSE of replicate estimates.

    ``f`` only labels the quantity and may be ``None``.
    """
    r = np.asarray(replicates, dtype=np.float64).ravel()
    if r.size < 2:
        raise ValueError("need at least two replicates")
    if not math.isfinite(reference):
        raise ValueError("reference must be finite")
    mean = math.fsum(r) / r.size
    bias_sq = (mean - reference) ** 2
    variance = math.fsum((r - mean) ** 2) / (r.size - 1)
    mse = bias_sq + variance
    return MseReport(bias_sq, variance, mse, math.sqrt(mse))


def bootstrap_se(samples, B=1000, rng: RngStream | None = None, statistic=np.mean):
    """Standard deviation of ``statistic`` over ``B`` resamples with replacement.

    ``statistic`` maps an ``(B, n)`` array to ``B`` values along ``axis=1``.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    B = check_int(B, "B", minimum=100)
    rng = rng if rng is not None else RngStream(0, BOOTSTRAP_STREAM)
    idx = rng.resample_indices(x.size, B)
    stats = statistic(x[idx], axis=1)
    return float(np.std(stats, ddof=1))


@dataclass(frozen=True)
class EstimateReport:
    point_estimate: float
    bootstrap_se: float
    P: int
    total_cost: int
    config_echo: dict = field(default_factory=dict)


def estimate_report(f: Functional, batch, B=1000, rng=None, config=None):
    """Point estimate with bootstrap standard error for a PathBatch."""
    vals = endpoint_values(f, batch)
    se = bootstrap_se(vals, B, rng) if vals.size >= 2 else 0.0
    echo = config.summary() if config is not None else {}
    return EstimateReport(math.fsum(vals) / vals.size, se, int(vals.size), int(batch.total_cost), echo)
