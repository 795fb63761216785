"""Deterministic, index-addressable random number generation.

Every draw is a pure function of (seed, purpose tag, flat index), produced
by hashing a 64-bit counter with the SplitMix64 finalizer and mapping the
result through the inverse normal CDF.  Because values are addressed by
index rather than by generator state, generating disjoint index ranges in
parallel, or re-generating a sub-range later, yields bit-identical values.

Normal variates use inverse-CDF sampling (``scipy.special.ndtri``) rather
than Box-Muller; this consumes exactly one 64-bit word per variate, which
keeps the index arithmetic trivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import ParameterDomainError

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4B9C15  # SplitMix64 increment

# Purpose tags keep independent consumers of the same user seed
# (Brownian increments, plain normal matrices, network init streams,
# derived seeds) on disjoint counter sequences.
_TAG_BROWNIAN = 0xB1
_TAG_NORMAL = 0xA2
_TAG_STREAM = 0x51
_TAG_DERIVE = 0xD3


def _mix64_int(x: int) -> int:
    """SplitMix64 finalizer on a Python int (mod 2**64)."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _mix64_np(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, vectorized over a uint64 array."""
    x = x ^ (x >> np.uint64(30))
    x = x * np.uint64(0xBF58476D1CE4E5B9)
    x = x ^ (x >> np.uint64(27))
    x = x * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _key(seed: int, tag: int, word: int = 0) -> int:
    """Derive the 64-bit stream key for (seed, tag, word)."""
    k = _mix64_int(seed + (tag + 1) * _GAMMA)
    if word:
        k = _mix64_int(k + (word + 1) * _GAMMA)
    return k


def _bits(key: int, start: int, count: int) -> np.ndarray:
    idx = np.arange(start, start + count, dtype=np.uint64)
    return _mix64_np(np.uint64(key) + (idx + np.uint64(1)) * np.uint64(_GAMMA))


def _uniforms(key: int, start: int, count: int) -> np.ndarray:
    """Doubles strictly inside (0, 1), one per counter value."""
    b = _bits(key, start, count)
    return ((b >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _normals(key: int, start: int, count: int) -> np.ndarray:
    return ndtri(_uniforms(key, start, count))


def derive_seed(seed: int, label: int) -> int:
    """A reproducible child seed, disjoint from the parent's own streams."""
    return _key(seed, _TAG_DERIVE, label)


def _check_count(name: str, value: int) -> int:
    if not isinstance(value, (int, np.integer)) or value < 1:
        raise ParameterDomainError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


@dataclass
class RngStream:
    """A seekable stream of variates identified by (seed, stream_id).

    ``counter`` is the index of the next variate; identical
    (seed, stream_id, counter) triples always reproduce identical draws.
    """

    seed: int
    stream_id: int = 0
    counter: int = 0
    _key: int = field(init=False, repr=False)

    def __post_init__(self):
        self._key = _key(self.seed, _TAG_STREAM, self.stream_id)

    def normals(self, shape) -> np.ndarray:
        shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        out = _normals(self._key, self.counter, n).reshape(shape)
        self.counter += n
        return out

    def uniforms(self, shape) -> np.ndarray:
        shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        out = _uniforms(self._key, self.counter, n).reshape(shape)
        self.counter += n
        return out


@dataclass
class BrownianBatch:
    """Wiener increments for M sample paths over N steps in k dimensions.

    ``increments[m, n, j]`` is a N(0, h) draw; entry values depend only on
    (seed, m, n, j) for the fixed (N, k) geometry, never on M.
    """

    increments: np.ndarray
    h: float
    seed: int

    def __post_init__(self):
        self.increments = np.asarray(self.increments, dtype=np.float64)
        if self.increments.ndim != 3:
            raise ParameterDomainError(
                f"increments must be M x N x k, got shape {self.increments.shape}"
            )
        if not self.h > 0:
            raise ParameterDomainError(f"step size h must be positive, got {self.h}")
        if not np.isfinite(self.increments).all():
            raise ParameterDomainError("Brownian increments contain non-finite entries")

    @property
    def m(self) -> int:
        return self.increments.shape[0]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]

    @property
    def k(self) -> int:
        return self.increments.shape[2]

    def slice_samples(self, lo: int, hi: int) -> "BrownianBatch":
        """A view of sample rows [lo, hi); shares memory with the parent."""
        return BrownianBatch(self.increments[lo:hi], self.h, self.seed)


def brownian_rows(seed: int, row_start: int, row_stop: int, n_steps: int, k: int,
                  h: float) -> np.ndarray:
    """Increment rows [row_start, row_stop) of the (seed, n_steps, k) tensor.

    Slicing a full batch and generating the same rows directly are
    bit-identical, so minibatches of an arbitrarily large sample budget can
    be generated on demand without materializing the whole tensor.
    """
    if not h > 0:
        raise ParameterDomainError(f"step size h must be positive, got {h}")
    n_steps = _check_count("N", n_steps)
    k = _check_count("k", k)
    if row_start < 0 or row_stop <= row_start:
        raise ParameterDomainError(f"bad row range [{row_start}, {row_stop})")
    key = _key(seed, _TAG_BROWNIAN)
    per_row = n_steps * k
    z = _normals(key, row_start * per_row, (row_stop - row_start) * per_row)
    return np.sqrt(h) * z.reshape(row_stop - row_start, n_steps, k)


def sample_brownian_batch(seed: int, m: int, n_steps: int, k: int, h: float) -> BrownianBatch:
    """i.i.d. Wiener increments W_{t_{n+1}} - W_{t_n} ~ N(0, h), shape M x N x k."""
    m = _check_count("M", m)
    return BrownianBatch(brownian_rows(seed, 0, m, n_steps, k, h), h, seed)


def standard_normal_matrix(seed: int, m: int, d: int) -> np.ndarray:
    """An M x d matrix of i.i.d. standard normals, deterministic in (seed, row, column)."""
    m = _check_count("M", m)
    d = _check_count("d", d)
    key = _key(seed, _TAG_NORMAL)
    return _normals(key, 0, m * d).reshape(m, d)
