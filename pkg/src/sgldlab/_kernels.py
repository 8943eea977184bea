"""Compiled path simulators for the two built-in models.

Each kernel advances a chunk of independent paths with

    x <- x + h_drift * g(x) + noise_scale * xi,

where ``g`` is the model's native-scale gradient estimate. The random-number
layout matches :func:`sgldlab.sampler.run_path`: step ``k`` of a path takes
its noise from block ``2k`` of ``noise_stream`` and its minibatch from block
``2k + 1`` of ``sub_stream``. With ``paired_noise`` the noise of step ``k``
is ``(xi_{2k} + xi_{2k+1}) / sqrt(2)`` built from the two half steps of the
finer chain, i.e. blocks ``4k`` and ``4k + 2``.

A path whose state becomes non-finite or exceeds ``DIVERGENCE_BOUND`` in
absolute value stops; its step index is written to
``fail_step`` (``-1`` means the path completed).
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

from .rng import _normals_into, _subsample_into

DIVERGENCE_BOUND = 1e10

KIND_FULL, KIND_NAIVE, KIND_CV = 0, 1, 2
_SHIFT = np.uint64(32)
_INV_SQRT2 = 1.0 / math.sqrt(2.0)


@nb.njit(cache=True, nogil=True)
def _step_noise(seed, stream, k, paired, buf, buf2):
    if paired:
        _normals_into(seed, stream, np.uint64(4 * k) << _SHIFT, buf)
        _normals_into(seed, stream, np.uint64(4 * k + 2) << _SHIFT, buf2)
        for j in range(buf.shape[0]):
            buf[j] = (buf[j] + buf2[j]) * _INV_SQRT2
    else:
        _normals_into(seed, stream, np.uint64(2 * k) << _SHIFT, buf)


@nb.njit(cache=True, nogil=True)
def initial_states(seed, streams, mean, sd, out):
    """``out[p] = mean + sd * z`` with ``z`` drawn from ``streams[p]``."""
    buf = np.empty(out.shape[1])
    for p in range(out.shape[0]):
        _normals_into(seed, streams[p], np.uint64(0), buf)
        for j in range(out.shape[1]):
            out[p, j] = mean[j] + sd * buf[j]


@nb.njit(cache=True, nogil=True)
def gaussian_paths(seed, noise_streams, sub_streams, x0, n_steps, h_drift, noise_scale, paired,
                   kind, n, y, anchor, A, mean_B, inv2_prior, inv2_obs, out, fail_step):
    N = y.shape[0]
    P = x0.shape[0]
    scratch = np.arange(N)
    k_max = max(min(n, N - n), 1)
    swaps = np.empty(k_max, dtype=np.int64)
    mask = np.zeros(N, dtype=np.bool_)
    idx = np.empty(n, dtype=np.int64)
    buf = np.empty(1)
    buf2 = np.empty(1)
    scale = N / n
    full = kind == KIND_FULL or (kind == KIND_NAIVE and n == N)
    for p in range(P):
        x = x0[p]
        fail_step[p] = -1
        for k in range(n_steps):
            if full:
                g = -A * x + mean_B
            else:
                _subsample_into(seed, sub_streams[p], np.uint64(2 * k + 1) << _SHIFT,
                                N, n, scratch, swaps, mask, idx)
                prior = -x * inv2_prior
                s = 0.0
                if kind == KIND_NAIVE:
                    for i in range(n):
                        s += (y[idx[i]] - x) * inv2_obs
                    g = prior + scale * s
                else:
                    share = prior / N
                    for i in range(n):
                        j = idx[i]
                        s += (y[j] - x) * inv2_obs + share - anchor[j]
                    g = scale * s
            _step_noise(seed, noise_streams[p], k, paired, buf, buf2)
            x = x + h_drift * g + noise_scale * buf[0]
            if not abs(x) <= DIVERGENCE_BOUND:
                fail_step[p] = k
                break
        out[p] = x


@nb.njit(cache=True, nogil=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@nb.njit(cache=True, nogil=True)
def logistic_paths(seed, noise_streams, sub_streams, x0, n_steps, h_drift, noise_scale, paired,
                   kind, n, X, y, anchor, inv_prior, out, fail_step):
    N, d = X.shape
    P = x0.shape[0]
    scratch = np.arange(N)
    k_max = max(min(n, N - n), 1)
    swaps = np.empty(k_max, dtype=np.int64)
    mask = np.zeros(N, dtype=np.bool_)
    idx = np.empty(N, dtype=np.int64)
    buf = np.empty(d)
    buf2 = np.empty(d)
    g = np.empty(d)
    acc = np.empty(d)
    x = np.empty(d)
    full = kind == KIND_FULL or (kind == KIND_NAIVE and n == N)
    m = N if full else n
    scale = 1.0 if full else N / n
    for p in range(P):
        x[:] = x0[p]
        fail_step[p] = -1
        for k in range(n_steps):
            if full:
                for i in range(N):
                    idx[i] = i
            else:
                _subsample_into(seed, sub_streams[p], np.uint64(2 * k + 1) << _SHIFT,
                                N, n, scratch, swaps, mask, idx)
            acc[:] = 0.0
            for t in range(m):
                i = idx[t]
                z = 0.0
                for j in range(d):
                    z += X[i, j] * x[j]
                r = y[i] - _sigmoid(z)
                for j in range(d):
                    acc[j] += r * X[i, j]
                if kind == KIND_CV:
                    for j in range(d):
                        acc[j] += -x[j] * inv_prior / N - anchor[i, j]
            for j in range(d):
                if kind == KIND_CV:
                    g[j] = scale * acc[j]
                else:
                    g[j] = -x[j] * inv_prior + scale * acc[j]
            _step_noise(seed, noise_streams[p], k, paired, buf, buf2)
            ok = True
            for j in range(d):
                x[j] = x[j] + h_drift * g[j] + noise_scale * buf[j]
                if not abs(x[j]) <= DIVERGENCE_BOUND:
                    ok = False
            if not ok:
                fail_step[p] = k
                break
        out[p, :] = x
