"""Counter-keyed xoshiro256** streams usable from numba kernels.

Every trial gets its own stream, keyed by ``(master_seed, entry, trial)``
through SplitMix64 mixing. The generator state is a ``uint64[4]`` array that
kernels advance in place, so the same draws come out whether a trial runs in
the Python reference path or in a fused kernel.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_LOW32 = np.uint64(0xFFFFFFFF)
_TWO32 = np.uint64(1 << 32)
_INV53 = 1.0 / 9007199254740992.0

MASK64 = (1 << 64) - 1


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def stream_key(seed, entry, trial):
    """64-bit key for the stream of one trial."""
    k = _mix(np.uint64(seed) + _GOLDEN)
    k = _mix(k ^ (np.uint64(entry) + _GOLDEN * np.uint64(2)))
    k = _mix(k ^ (np.uint64(trial) + _GOLDEN * np.uint64(3)))
    return k


@njit(cache=True)
def seed_state(key, state):
    """Fill ``state`` with four SplitMix64 outputs started at ``key``."""
    x = np.uint64(key)
    for i in range(4):
        x = x + _GOLDEN
        state[i] = _mix(x)


@njit(cache=True, inline="always")
def next_u64(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True, inline="always")
def next_float(s):
    """Uniform double on [0, 1) with 53 random bits."""
    return np.float64(next_u64(s) >> np.uint64(11)) * _INV53


@njit(cache=True, inline="always")
def randbelow(s, k):
    """Unbiased integer in ``[0, k)`` for ``1 <= k < 2**32`` (Lemire's method)."""
    kk = np.uint64(k)
    m = (next_u64(s) >> np.uint64(32)) * kk
    lo = m & _LOW32
    if lo < kk:
        thr = (_TWO32 - kk) % kk
        while lo < thr:
            m = (next_u64(s) >> np.uint64(32)) * kk
            lo = m & _LOW32
    return np.int64(m >> np.uint64(32))


class TrialRNG:
    """Python handle on one trial stream.

    The ``state`` array is what the kernels consume; the helper methods exist
    for tests and the reference path.
    """

    def __init__(self, seed=0, entry=0, trial=0):
        self.seed = int(seed) & MASK64
        self.entry = int(entry)
        self.trial = int(trial)
        self.key = int(stream_key(np.uint64(self.seed), np.uint64(self.entry), np.uint64(self.trial)))
        self.state = np.zeros(4, dtype=np.uint64)
        seed_state(np.uint64(self.key), self.state)

    def random(self):
        return next_float(self.state)

    def integers(self, k):
        return int(randbelow(self.state, k))

    def u64(self):
        return int(next_u64(self.state))
