"""Counter-based random streams and uniform subsampling without replacement.

Every draw is a pure function of ``(seed, stream_id, counter)`` through the
Philox4x32-10 block cipher, so a path's noise and minibatches never depend on
how paths are scheduled across workers.

Stream-id convention
--------------------
* path ``p`` draws its noise and its minibatches from stream ``p``;
* reserved high bits mark auxiliary streams (initial states, the coarse chain
  of a Richardson-Romberg pair, bootstrap resampling, Metropolis-Hastings).

Within a stream, step ``k`` of a sampler uses counter block ``2k`` for the
injected noise and block ``2k + 1`` for the minibatch, one block being
``2**32`` consecutive counters.
"""
from __future__ import annotations

import math
from fractions import Fraction
from itertools import combinations

import numba as nb
import numpy as np

__all__ = [
    "RngStream",
    "GuardError",
    "INIT_STREAM",
    "RR_COARSE_STREAM",
    "BOOTSTRAP_STREAM",
    "MH_STREAM",
    "DATA_STREAM",
    "philox4x32",
    "derive_seed",
    "sample_without_replacement",
    "gaussian_noise",
    "enumerate_subsample_moments",
    "MAX_ENUMERATION_N",
]

_U64 = (1 << 64) - 1

INIT_STREAM = 1 << 60
RR_COARSE_STREAM = 1 << 61
MH_STREAM = 1 << 62
BOOTSTRAP_STREAM = 1 << 63
DATA_STREAM = (1 << 63) | (1 << 62)

MAX_ENUMERATION_N = 20


class GuardError(ValueError):
    """Raised when exhaustive enumeration would be infeasible."""


# ---------------------------------------------------------------------------
# Philox4x32-10 (Salmon et al., SC'11), jitted so kernels can share it.
# ---------------------------------------------------------------------------

_M32 = np.uint64(0xFFFFFFFF)
_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = np.uint64(0x9E3779B9)
_PHILOX_W1 = np.uint64(0xBB67AE85)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_TWO_M53 = 1.0 / 9007199254740992.0


@nb.njit(cache=True, nogil=True)
def _philox_words(c0, c1, c2, c3, k0, k1):
    for r in range(10):
        if r > 0:
            k0 = (k0 + _PHILOX_W0) & _M32
            k1 = (k1 + _PHILOX_W1) & _M32
        p0 = _PHILOX_M0 * c0
        p1 = _PHILOX_M1 * c2
        hi0 = p0 >> _S32
        lo0 = p0 & _M32
        hi1 = p1 >> _S32
        lo1 = p1 & _M32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@nb.njit(cache=True, nogil=True)
def _block(seed, stream, counter):
    return _philox_words(
        counter & _M32, counter >> _S32, stream & _M32, stream >> _S32,
        seed & _M32, seed >> _S32,
    )


@nb.njit(cache=True, nogil=True)
def _normal_pair(seed, stream, counter):
    w0, w1, w2, w3 = _block(seed, stream, counter)
    a = (w1 << _S32) | w0
    b = (w3 << _S32) | w2
    # top 53 bits, shifted off zero so the log is finite
    u1 = (np.float64(a >> _S11) + 0.5) * _TWO_M53
    u2 = np.float64(b >> _S11) * _TWO_M53
    r = math.sqrt(-2.0 * math.log(u1))
    t = 2.0 * math.pi * u2
    return r * math.cos(t), r * math.sin(t)


@nb.njit(cache=True, nogil=True)
def _normals_into(seed, stream, counter, out):
    """Fill ``out`` with standard normals; one counter per pair."""
    d = out.shape[0]
    i = 0
    while i < d:
        z0, z1 = _normal_pair(seed, stream, counter)
        counter += np.uint64(1)
        out[i] = z0
        if i + 1 < d:
            out[i + 1] = z1
        i += 2
    return counter


@nb.njit(cache=True, nogil=True)
def _randbelow(seed, stream, counter, word, bound):
    """Unbiased integer in [0, bound) from the 32-bit word sequence.

    ``word`` indexes 32-bit words: four per counter value. Returns
    ``(value, counter, word)`` positioned after the consumed words.
    """
    b = np.uint64(bound)
    threshold = (np.uint64(4294967296) - b) % b
    while True:
        w0, w1, w2, w3 = _block(seed, stream, counter)
        if word == 0:
            x = w0
        elif word == 1:
            x = w1
        elif word == 2:
            x = w2
        else:
            x = w3
        word += 1
        if word == 4:
            word = 0
            counter += np.uint64(1)
        if x >= threshold:
            return np.int64(x % b), counter, word


@nb.njit(cache=True, nogil=True)
def _fy_select(seed, stream, counter, n_total, k, scratch, swaps):
    """Partial Fisher-Yates: ``scratch[:k]`` becomes a uniform k-subset.

    ``scratch`` must hold the identity permutation on entry; call
    :func:`_fy_undo` afterwards to restore it in O(k).
    """
    word = 0
    for i in range(k):
        j, counter, word = _randbelow(seed, stream, counter, word, n_total - i)
        j += i
        swaps[i] = j
        tmp = scratch[i]
        scratch[i] = scratch[j]
        scratch[j] = tmp
    if word != 0:
        counter += np.uint64(1)
    return counter


@nb.njit(cache=True, nogil=True)
def _fy_undo(scratch, swaps, k):
    for i in range(k - 1, -1, -1):
        j = swaps[i]
        tmp = scratch[i]
        scratch[i] = scratch[j]
        scratch[j] = tmp


@nb.njit(cache=True, nogil=True)
def _subsample_into(seed, stream, counter, n_total, n, scratch, swaps, mask, out):
    """Uniform n-subset of range(n_total) written to ``out[:n]``.

    When ``n > n_total - n`` the excluded set is drawn instead and the subset
    is listed in increasing order; ``mask`` is a zeroed boolean scratch.
    """
    k = n_total - n
    if n <= k:
        counter = _fy_select(seed, stream, counter, n_total, n, scratch, swaps)
        for i in range(n):
            out[i] = scratch[i]
        _fy_undo(scratch, swaps, n)
    else:
        counter = _fy_select(seed, stream, counter, n_total, k, scratch, swaps)
        for i in range(k):
            mask[scratch[i]] = True
        pos = 0
        for i in range(n_total):
            if not mask[i]:
                out[pos] = i
                pos += 1
        for i in range(k):
            mask[scratch[i]] = False
        _fy_undo(scratch, swaps, k)
    return counter


@nb.njit(cache=True, nogil=True)
def _resample_indices(seed, stream, counter, size, n_rows, out):
    """``out`` gets ``n_rows`` rows of ``size`` indices drawn with replacement."""
    word = 0
    for r in range(n_rows):
        for i in range(size):
            j, counter, word = _randbelow(seed, stream, counter, word, size)
            out[r, i] = j
    if word != 0:
        counter += np.uint64(1)
    return counter


def philox4x32(counter: tuple[int, int, int, int], key: tuple[int, int]) -> tuple[int, ...]:
    """Raw Philox4x32-10 on 32-bit words; exposed for known-answer tests."""
    c = [np.uint64(w & 0xFFFFFFFF) for w in counter]
    k = [np.uint64(w & 0xFFFFFFFF) for w in key]
    return tuple(int(w) for w in _philox_words(c[0], c[1], c[2], c[3], k[0], k[1]))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministically mix integer keys into a new 64-bit seed."""
    s = int(seed) & _U64
    for key in keys:
        key = int(key) & _U64
        w = _block(np.uint64(s), np.uint64(key), np.uint64(0xA5A5A5A5))
        s = (int(w[1]) << 32) | int(w[0])
    return s


class RngStream:
    """A position ``(seed, stream_id, counter)`` in the Philox sequence.

    Draw methods advance ``counter``; :meth:`copy` snapshots the state and
    :meth:`block` jumps to the start of a counter block.
    """

    __slots__ = ("seed", "stream_id", "counter")

    def __init__(self, seed: int, stream_id: int = 0, counter: int = 0):
        for name, v in (("seed", seed), ("stream_id", stream_id), ("counter", counter)):
            if not 0 <= int(v) <= _U64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v}")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.counter = int(counter)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def __eq__(self, other):
        if not isinstance(other, RngStream):
            return NotImplemented
        return (self.seed, self.stream_id, self.counter) == (
            other.seed, other.stream_id, other.counter)

    def copy(self) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.counter)

    def spawn(self, stream_id: int) -> "RngStream":
        """A fresh stream with the same seed."""
        return RngStream(self.seed, stream_id, 0)

    def block(self, index: int) -> "RngStream":
        """This stream positioned at counter ``index * 2**32``."""
        return RngStream(self.seed, self.stream_id, (int(index) << 32) & _U64)

    def _args(self):
        return np.uint64(self.seed), np.uint64(self.stream_id), np.uint64(self.counter)

    def normals(self, size: int) -> np.ndarray:
        out = np.empty(int(size), dtype=np.float64)
        seed, stream, counter = self._args()
        self.counter = int(_normals_into(seed, stream, counter, out))
        return out

    def uniforms(self, size: int) -> np.ndarray:
        """Uniforms on (0, 1) with 53-bit resolution, two per counter."""
        out = np.empty(int(size), dtype=np.float64)
        for i in range(0, out.size, 2):
            w0, w1, w2, w3 = _block(*self._args())
            self.counter += 1
            out[i] = ((((int(w1) << 32) | int(w0)) >> 11) + 0.5) * _TWO_M53
            if i + 1 < out.size:
                out[i + 1] = ((((int(w3) << 32) | int(w2)) >> 11) + 0.5) * _TWO_M53
        return out

    def randbelow(self, bound: int) -> int:
        if not 1 <= bound < 2**32:
            raise ValueError(f"bound must be in [1, 2**32), got {bound}")
        seed, stream, counter = self._args()
        value, counter, word = _randbelow(seed, stream, counter, 0, bound)
        self.counter = int(counter) + (1 if word else 0)
        return int(value)

    def resample_indices(self, size: int, rows: int) -> np.ndarray:
        """``rows`` index vectors of length ``size``, drawn with replacement."""
        if size < 1 or size >= 2**32:
            raise ValueError(f"size must be in [1, 2**32), got {size}")
        out = np.empty((int(rows), int(size)), dtype=np.int64)
        seed, stream, counter = self._args()
        self.counter = int(_resample_indices(seed, stream, counter, int(size), int(rows), out))
        return out


def sample_without_replacement(N: int, n: int, rng: RngStream) -> np.ndarray:
    """Uniformly random size-``n`` subset of ``range(N)``; advances ``rng``.

    Every subset has probability ``1 / C(N, n)``. Indices are in draw order
    when ``n <= N - n`` and in increasing order otherwise.
    """
    N, n = int(N), int(n)
    if N < 1 or N >= 2**32:
        raise ValueError(f"N must be in [1, 2**32), got {N}")
    if not 1 <= n <= N:
        raise ValueError(f"batch size must satisfy 1 <= n <= N, got n={n}, N={N}")
    scratch = np.arange(N, dtype=np.int64)
    k = min(n, N - n)
    swaps = np.empty(max(k, 1), dtype=np.int64)
    mask = np.zeros(N, dtype=np.bool_)
    out = np.empty(n, dtype=np.int64)
    seed, stream, counter = rng._args()
    rng.counter = int(_subsample_into(seed, stream, counter, N, n, scratch, swaps, mask, out))
    return out


def gaussian_noise(d: int, rng: RngStream) -> np.ndarray:
    """``d`` i.i.d. standard normals from ``rng`` (Box-Muller on Philox words)."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return rng.normals(d)


def enumerate_subsample_moments(values, n: int, exact: bool = False):
    """Exact mean and scalar variance of ``(N/n) * sum(values[tau])``.

    Enumerates all ``C(N, n)`` subsets. ``values`` is an (N,) or (N, d)
    array; the variance is the trace of the covariance. With ``exact=True``
    the arithmetic is carried out in rationals and rounded once at the end.

    Returns
    -------
    mean : ndarray of shape (d,)
    variance : float
    """
    a = np.asarray(values, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError("values must be an (N,) or (N, d) array")
    N, d = a.shape
    if N > MAX_ENUMERATION_N:
        raise GuardError(f"enumeration over C({N}, {n}) subsets refused: N > {MAX_ENUMERATION_N}")
    if not 1 <= n <= N:
        raise ValueError(f"batch size must satisfy 1 <= n <= N, got n={n}, N={N}")
    subsets = list(combinations(range(N), n))
    if exact:
        fa = [[Fraction(float(v)) for v in row] for row in a]
        scale = Fraction(N, n)
        ests = [[scale * sum((fa[i][j] for i in s), Fraction(0)) for j in range(d)]
                for s in subsets]
        count = len(ests)
        mean = [sum((e[j] for e in ests), Fraction(0)) / count for j in range(d)]
        var = sum((sum(((e[j] - mean[j]) ** 2 for e in ests), Fraction(0)) for j in range(d)),
                  Fraction(0)) / count
        return np.array([float(m) for m in mean]), float(var)

    idx = np.array(subsets, dtype=np.int64)
    ests = np.empty((idx.shape[0], d))
    for j in range(d):
        col = a[:, j]
        ests[:, j] = [math.fsum(col[row]) for row in idx]
    ests *= N / n
    count = ests.shape[0]
    mean = np.array([math.fsum(ests[:, j]) / count for j in range(d)])
    var = math.fsum(math.fsum((ests[:, j] - mean[j]) ** 2) for j in range(d)) / count
    return mean, float(var)
