"""Stationary reds on ``K_{n,n}``: blues walk one at a time until they hit a red.

Vertices ``0..n-1`` form one side and ``n..2n-1`` the other. A blue that
lands on a red-occupied vertex annihilates with one of its reds. The reds
never move, so a run is fully described by how many moves the blues make.
"""

import numpy as np
from numba import njit

from .rng import TrialRNG, randbelow, seed_state, stream_key

LAYOUTS = ("random", "one_side", "clustered")
_LAYOUT_CODE = {name: i for i, name in enumerate(LAYOUTS)}


def layout_code(layout):
    if layout not in _LAYOUT_CODE:
        raise ValueError(f"unknown layout {layout!r}; choose from {', '.join(LAYOUTS)}")
    return _LAYOUT_CODE[layout]


@njit(cache=True)
def _place(s, n, code, red, blue):
    """Fill per-vertex red counts and blue positions for a layout."""
    V = 2 * n
    red[:] = 0
    if code == 0:
        perm = np.arange(V)
        for i in range(V - 1):
            j = i + randbelow(s, V - i)
            tmp = perm[i]
            perm[i] = perm[j]
            perm[j] = tmp
        for i in range(n):
            red[perm[i]] = 1
            blue[i] = perm[n + i]
    elif code == 1:
        for i in range(n):
            red[i] = 1
            blue[i] = n + i
    else:
        red[0] = n
        for i in range(n):
            blue[i] = n + i


@njit(cache=True)
def _walk_all(s, n, red, blue):
    """Move blue 0 until absorbed, then blue 1, and so on; return total moves."""
    T = 0
    for b in range(n):
        v = blue[b]
        while True:
            base = n if v < n else 0
            v = base + randbelow(s, n)
            T += 1
            if red[v] > 0:
                red[v] -= 1
                break
    return T


@njit(cache=True)
def _knn_batch(seed, entry, trial0, ntrials, n, code, out, keys):
    red = np.zeros(2 * n, dtype=np.int64)
    blue = np.zeros(n, dtype=np.int64)
    s = np.zeros(4, dtype=np.uint64)
    for k in range(ntrials):
        key = stream_key(seed, entry, np.uint64(trial0 + k))
        keys[k] = key
        seed_state(key, s)
        _place(s, n, code, red, blue)
        out[k] = _walk_all(s, n, red, blue)


def stationary_times(n, trials, layout="random", seed=0, entry=0, trial0=0):
    """Extinction times of ``trials`` independent stationary-red runs."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    out = np.zeros(trials, dtype=np.int64)
    keys = np.zeros(trials, dtype=np.uint64)
    _knn_batch(np.uint64(seed), np.uint64(entry), np.int64(trial0), trials, n, layout_code(layout), out, keys)
    return out


def initial_layout(n, layout="random", seed=0, trial=0):
    """``(red counts per vertex, blue positions)`` as a trial would start."""
    red = np.zeros(2 * n, dtype=np.int64)
    blue = np.zeros(n, dtype=np.int64)
    _place(TrialRNG(seed, 0, trial).state, n, layout_code(layout), red, blue)
    return red, blue


# ---------------------------------------------------------------- order independence


class SiteStacks:
    """Pre-drawn move targets per vertex, consumed in order of departure.

    The ``j``-th blue to leave vertex ``v`` goes to ``stack(v)[j]``, whichever
    blue it is. Every vertex draws from its own stream, so the stacks do not
    depend on the order in which they are read.
    """

    def __init__(self, n, seed=0, trial=0):
        self.n = n
        self._rngs = [TrialRNG(seed, 1 + v, trial) for v in range(2 * n)]
        self._drawn = [[] for _ in range(2 * n)]
        self._next = [0] * (2 * n)

    def pop(self, v):
        j = self._next[v]
        drawn = self._drawn[v]
        while len(drawn) <= j:
            base = self.n if v < self.n else 0
            drawn.append(base + self._rngs[v].integers(self.n))
        self._next[v] = j + 1
        return drawn[j]

    def fresh(self):
        """Same stacks, read pointers rewound."""
        other = SiteStacks.__new__(SiteStacks)
        other.n = self.n
        other._rngs = self._rngs
        other._drawn = self._drawn
        other._next = [0] * (2 * self.n)
        return other


SCHEDULES = ("sequential", "reverse", "round_robin", "shuffled")


def run_schedule(red, blue, stacks, schedule="sequential", order_seed=0):
    """Total blue moves under a scheduling rule, reading moves from ``stacks``.

    ``sequential`` and ``reverse`` walk one blue to absorption before starting
    the next; ``round_robin`` moves each live blue once per sweep;
    ``shuffled`` picks a uniformly random live blue at every move.
    Returns ``(T, remaining red counts)``.
    """
    red = np.array(red, dtype=np.int64)
    live = [int(v) for v in blue]
    T = 0

    def move(i):
        nonlocal T
        u = stacks.pop(live[i])
        T += 1
        if red[u] > 0:
            red[u] -= 1
            return True
        live[i] = u
        return False

    if schedule in ("sequential", "reverse"):
        order = range(len(live)) if schedule == "sequential" else range(len(live) - 1, -1, -1)
        for i in order:
            while not move(i):
                pass
    elif schedule == "round_robin":
        alive = list(range(len(live)))
        while alive:
            alive = [i for i in alive if not move(i)]
    elif schedule == "shuffled":
        rng = np.random.default_rng(order_seed)
        alive = list(range(len(live)))
        while alive:
            k = int(rng.integers(len(alive)))
            if move(alive[k]):
                alive.pop(k)
    else:
        raise ValueError(f"unknown schedule {schedule!r}; choose from {', '.join(SCHEDULES)}")
    return T, red


def abelian_check(n, trials=20, layout="random", seed=0, schedules=SCHEDULES):
    """Per trial, the totals under each schedule on shared site stacks.

    Returns a list of dicts mapping schedule name to ``T``; the property holds
    when every dict has a single distinct value.
    """
    rows = []
    for t in range(trials):
        red, blue = initial_layout(n, layout, seed, t)
        stacks = SiteStacks(n, seed, t)
        row = {}
        for k, sch in enumerate(schedules):
            row[sch] = run_schedule(red, blue, stacks.fresh(), sch, order_seed=seed * 1000 + t * 10 + k)[0]
        rows.append(row)
    return rows
