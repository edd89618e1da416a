"""Exact, simulation-free reference computations.

* :func:`exact_extinction_expectation` solves the absorbing chain of the
  simulated process for tiny ``n``.
* :func:`biased_walk_solve` gives exact hitting quantities of a nearest
  neighbour walk with a drift towards its target.
* :func:`bias_inequality_scan` checks the spread-bias inequalities over every
  relevant state.
* :func:`alternating_identity_check` and :func:`knn_stationary_bounds` cover
  the stationary-red walk on ``K_{n,n}``.
* :func:`bake` freezes the derived numbers into ``data/constants.json``.
"""

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.linalg import solve_banded
from scipy.sparse.linalg import spsolve

from .core import InitSpec
from .instrumentation import DEFAULT_W, tau_target

CONSTANTS_PATH = Path(__file__).with_name("data") / "constants.json"


class OracleError(ValueError):
    """Inputs outside what an oracle can handle exactly."""


# ---------------------------------------------------------------- absorbing chain


def _canon_complete(state, n):
    return tuple(sorted(state))


def _canon_bipartite(state, n):
    a = tuple(sorted(state[:n]))
    b = tuple(sorted(state[n:]))
    return min(a + b, b + a)


def _canon_none(state, n):
    return tuple(state)


def _moves(state, n, topology, p):
    """Yield ``(prob, next_state)`` for one step from a signed occupancy vector.

    Entry ``v`` is ``+k`` for ``k`` reds, ``-k`` for ``k`` blues, 0 if empty.
    """
    V = 2 * n
    M = sum(x for x in state if x > 0)
    for sign, w in ((1, p), (-1, 1.0 - p)):
        for v, x in enumerate(state):
            k = x * sign
            if k <= 0:
                continue
            if topology == "complete":
                targets = range(V)
            else:
                targets = range(n, V) if v < n else range(n)
            pw = w * k / M / len(targets)
            for u in targets:
                if u == v:
                    yield pw, state
                    continue
                nxt = list(state)
                nxt[v] -= sign
                # onto an opposite-colour site this cancels one particle, which is the annihilation
                nxt[u] += sign
                yield pw, tuple(nxt)


def _initial_distribution(n, topology, init):
    """Exact law of the time-zero occupancy vector produced by ``init``."""
    kind_tuple = init.resolve(n, topology)
    _, a, tmpl, red_sites, blue_sites = kind_tuple
    V = 2 * n
    out = {}

    def add(red_counts, blue_sites_, w):
        s = [0] * V
        for v, k in red_counts.items():
            s[v] += k
        for v in blue_sites_:
            s[v] -= 1
        key = tuple(s)
        out[key] = out.get(key, 0.0) + w

    if init.variant == "default":
        combos = list(itertools.combinations(range(V), n))
        for reds in combos:
            add({v: 1 for v in reds}, [v for v in range(V) if v not in reds], 1.0 / len(combos))
    elif init.variant == "disjoint":
        nr = n - a
        if len(red_sites):
            layouts = [(tuple(int(v) for v in red_sites), tuple(int(v) for v in blue_sites), 1.0)]
        else:
            layouts = []
            reds_all = list(itertools.combinations(range(V), nr))
            for reds in reds_all:
                rest = [v for v in range(V) if v not in reds]
                blues_all = list(itertools.combinations(rest, n))
                for blues in blues_all:
                    layouts.append((reds, blues, 1.0 / (len(reds_all) * len(blues_all))))
        for reds, blues, w in layouts:
            for extra in itertools.product(range(nr), repeat=a):
                rc = {v: 1 for v in reds}
                for i in extra:
                    rc[reds[i]] += 1
                add(rc, blues, w / nr**a)
    else:
        s = tuple(int(r) - int(b) for r, b in zip(tmpl[0], tmpl[1]))
        out[s] = 1.0
    return out


@dataclass
class ExtinctionChain:
    """Transient part of the absorbing chain, indexed by canonical state."""

    n: int
    topology: str
    p: float
    states: list
    index: dict
    Q: sparse.csr_matrix
    row_error: float  # max |row sum - 1| over transient rows, absorption included

    def expected_times(self):
        A = sparse.identity(len(self.states), format="csc") - self.Q.tocsc()
        return np.atleast_1d(spsolve(A, np.ones(len(self.states))))


def build_chain(n, topology="complete", p=0.5, max_states=100_000, compress=True, start=()):
    """Enumerate every state reachable from ``start`` and its transition row."""
    if topology not in ("complete", "bipartite"):
        raise OracleError(f"unknown topology {topology!r}")
    canon = _canon_none if not compress else (_canon_complete if topology == "complete" else _canon_bipartite)
    index = {}
    states = []
    frontier = []
    for s in start:
        c = canon(s, n)
        if c not in index:
            index[c] = len(states)
            states.append(c)
            frontier.append(c)
    rows, cols, vals = [], [], []
    row_error = 0.0
    while frontier:
        s = frontier.pop()
        i = index[s]
        acc = {}
        total = 0.0
        for pw, nxt in _moves(s, n, topology, p):
            total += pw
            if not any(x > 0 for x in nxt):
                continue  # extinct: absorbed
            c = canon(nxt, n)
            if c not in index:
                if len(states) >= max_states:
                    raise OracleError(
                        f"state space exceeds the cap of {max_states} states (n={n}, {topology}); refusing to solve"
                    )
                index[c] = len(states)
                states.append(c)
                frontier.append(c)
            j = index[c]
            acc[j] = acc.get(j, 0.0) + pw
        row_error = max(row_error, abs(total - 1.0))
        for j, v in acc.items():
            rows.append(i)
            cols.append(j)
            vals.append(v)
    Q = sparse.csr_matrix((vals, (rows, cols)), shape=(len(states), len(states)))
    return ExtinctionChain(n, topology, p, states, index, Q, row_error)


def exact_extinction_expectation(n, topology="complete", init=None, p=0.5, max_states=100_000, compress=True):
    """Exact ``E[T]`` for the process started from ``init`` (default: one particle per vertex).

    Vertices are exchangeable on the complete graph, so states are stored as
    sorted occupancy vectors (and per side, up to swapping sides, on the
    bipartite graph). ``compress=False`` keeps labelled vertices, which is
    only feasible for the very smallest cases and serves as a cross-check.
    """
    init = InitSpec() if init is None else init
    if not 0.0 < p <= 0.5:
        raise OracleError(f"p must lie in (0, 1/2], got {p}")
    start = _initial_distribution(n, topology, init)
    chain = build_chain(n, topology, p, max_states, compress, start.keys())
    x = chain.expected_times()
    canon = _canon_none if not compress else (_canon_complete if topology == "complete" else _canon_bipartite)
    return float(sum(w * x[chain.index[canon(s, n)]] for s, w in start.items()))


# ---------------------------------------------------------------- biased walk


@dataclass(frozen=True)
class BiasedWalkSpec:
    """Walk on the integers moving up/down/holding with state-dependent odds.

    ``up``, ``down`` and ``hold`` have one entry per state ``0 .. k-1``;
    below 0 the walk reuses the state-0 odds. Every state must satisfy
    ``up >= alpha`` and ``down <= up / 2``.
    """

    k: int
    up: tuple
    down: tuple
    hold: tuple
    alpha: float

    def __post_init__(self):
        k = self.k
        if k < 1:
            raise OracleError(f"k must be >= 1, got {k}")
        if not 0.0 < self.alpha <= 2.0 / 3.0:
            raise OracleError(f"alpha must lie in (0, 2/3], got {self.alpha}")
        u, d, h = (np.asarray(x, dtype=float) for x in (self.up, self.down, self.hold))
        if not (len(u) == len(d) == len(h) == k):
            raise OracleError(f"need {k} probabilities per kind, got {len(u)}, {len(d)}, {len(h)}")
        if np.any(u < 0) or np.any(d < 0) or np.any(h < 0):
            raise OracleError("negative probability")
        if np.max(np.abs(u + d + h - 1.0)) > 1e-12:
            raise OracleError("up + down + hold must equal 1 at every state")
        if np.any(u < self.alpha - 1e-15):
            raise OracleError("up probability below alpha")
        if np.any(d > u / 2.0 + 1e-15):
            raise OracleError("down probability exceeds half the up probability")

    @classmethod
    def uniform(cls, k, up, down, alpha=None):
        alpha = up if alpha is None else alpha
        return cls(k, (up,) * k, (down,) * k, (1.0 - up - down,) * k, alpha)


@dataclass(frozen=True)
class BiasedWalkResult:
    hit_prob: float  # P(reach 0 before k)
    expected_time: float  # E[steps to reach k], floor at -64
    expected_time_deep: float  # same with the floor at -128
    hit_bound: float
    time_bound: float

    @property
    def floor_sensitivity(self):
        return abs(self.expected_time_deep - self.expected_time)


def _walk_hit(spec, start):
    k = spec.k
    if start <= 0:
        return 1.0
    if start >= k:
        return 0.0
    # unknowns h(1..k-1); h(0) = 1, h(k) = 0
    m = k - 1
    u = np.asarray(spec.up[1:], dtype=float)
    d = np.asarray(spec.down[1:], dtype=float)
    h = np.asarray(spec.hold[1:], dtype=float)
    ab = np.zeros((3, m))
    ab[0, 1:] = -u[:-1]
    ab[1, :] = 1.0 - h
    ab[2, :-1] = -d[1:]
    rhs = np.zeros(m)
    rhs[0] = d[0]
    return float(solve_banded((1, 1), ab, rhs)[start - 1])


def _walk_time(spec, start, floor):
    k = spec.k
    if start >= k:
        return 0.0
    # unknowns E(floor .. k-1); reflecting at floor (down turns into hold)
    xs = np.arange(floor, k)
    idx = np.clip(xs, 0, None)
    u = np.asarray(spec.up, dtype=float)[idx]
    d = np.asarray(spec.down, dtype=float)[idx].copy()
    d[0] = 0.0
    m = len(xs)
    ab = np.zeros((3, m))
    ab[0, 1:] = -u[:-1]
    ab[1, :] = u + d
    ab[2, :-1] = -d[1:]
    sol = solve_banded((1, 1), ab, np.ones(m))
    return float(sol[start - floor])


def biased_walk_solve(spec, start=None):
    """Exact hit probability of 0 before ``k`` and expected time to ``k`` from ``start`` (default ``k-1``)."""
    start = spec.k - 1 if start is None else int(start)
    if not 0 <= start <= spec.k:
        raise OracleError(f"start must lie in 0..{spec.k}, got {start}")
    return BiasedWalkResult(
        hit_prob=_walk_hit(spec, start),
        expected_time=_walk_time(spec, start, -64),
        expected_time_deep=_walk_time(spec, start, -128),
        hit_bound=2.0 ** (1 - spec.k),
        time_bound=2.0 / spec.alpha,
    )


def random_walk_specs(count, seed=0, k_max=20):
    """Admissible specs with random state-dependent odds, boundary cases mixed in."""
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(count):
        k = int(rng.integers(1, k_max + 1))
        alpha = float(rng.uniform(0.02, 2.0 / 3.0))
        mode = i % 5
        if mode == 0:
            # tight everywhere: up = alpha, down = alpha / 2
            specs.append(BiasedWalkSpec.uniform(k, alpha, alpha / 2.0))
            continue
        up = rng.uniform(alpha, 1.0, size=k)
        cap = np.minimum(up / 2.0, 1.0 - up)
        down = cap if mode == 1 else rng.uniform(0.0, 1.0, size=k) * cap
        hold = 1.0 - up - down
        hold[np.abs(hold) < 1e-15] = 0.0
        specs.append(BiasedWalkSpec(k, tuple(up), tuple(down), tuple(np.maximum(hold, 0.0)), alpha))
    return specs


@dataclass(frozen=True)
class WalkBoundReport:
    specs: int
    hit_violations: int
    time_violations: int
    hit_equalities: list  # k values where the hit bound is attained
    time_equalities: int  # specs within 1e-9 relative of the time bound
    time_equalities_tight: int  # of those, how many are the tight uniform walk
    max_floor_sensitivity: float

    @property
    def ok(self):
        return (self.hit_violations == 0 and self.time_violations == 0
                and all(k == 1 for k in self.hit_equalities)
                and self.time_equalities == self.time_equalities_tight)


def walk_bound_scan(specs, tol=1e-9):
    """Check both walk bounds on every spec.

    Equality is only expected for ``k = 1`` (hit probability 1) and for the
    walk with ``up = alpha`` and ``down = alpha / 2`` at every state, whose
    drift is exactly ``alpha / 2``.
    """
    hv = tv = te = tt = 0
    he = []
    sens = 0.0
    for s in specs:
        r = biased_walk_solve(s)
        sens = max(sens, r.floor_sensitivity)
        if r.hit_prob > r.hit_bound * (1 + tol):
            hv += 1
        elif r.hit_prob >= r.hit_bound * (1 - tol):
            he.append(s.k)
        if r.expected_time > r.time_bound * (1 + tol):
            tv += 1
        elif r.expected_time >= r.time_bound * (1 - tol):
            te += 1
            u, d = np.asarray(s.up), np.asarray(s.down)
            if np.allclose(u, s.alpha, rtol=0, atol=1e-12) and np.allclose(d, s.alpha / 2, rtol=0, atol=1e-12):
                tt += 1
    return WalkBoundReport(len(specs), hv, tv, he, te, tt, sens)


# ---------------------------------------------------------------- bias inequality


@dataclass(frozen=True)
class BiasViolation:
    colour: str
    n: int
    M: int
    count: int


def _not_good_grid(n, w):
    M = np.arange(1, n + 1)[:, None]
    c = np.arange(0, n + 1)[None, :]
    fm = np.maximum(6.0 * M / n, w.inverse(n))
    with np.errstate(invalid="ignore"):
        good = (c > 0) & (c * (1.0 + fm) >= M)
    return M, c, (c <= M) & ~good & (M >= tau_target(n))


def bias_inequality_scan(n_max, w=DEFAULT_W, n_min=1):
    """Every not-good state violating the blue or red bias inequality, for ``n_min <= n <= n_max``.

    Blue: ``2n(M - B) >= M^2 + 4MB + B^2``. Red (sites counted after the
    move, before resolution): ``(M - R)(2n - R) >= 2R(R - 1)``. Only states
    with ``M >= floor((ln n)^2)`` are scanned.
    """
    if n_max > 512:
        raise OracleError(f"n_max must be <= 512, got {n_max}")
    out = []
    for n in range(max(1, n_min), n_max + 1):
        M, c, sel = _not_good_grid(n, w)
        blue = sel & (2 * n * (M - c) < M * M + 4 * M * c + c * c)
        red = sel & ((M - c) * (2 * n - c) < 2 * c * (c - 1))
        for colour, mask in (("blue", blue), ("red", red)):
            for i, j in zip(*np.nonzero(mask)):
                out.append(BiasViolation(colour, n, int(M[i, 0]), int(c[0, j])))
    return out


def bias_scan_size(n_max, w=DEFAULT_W):
    """Number of not-good states the scan covers."""
    return int(sum(_not_good_grid(n, w)[2].sum() for n in range(1, n_max + 1)))


# ---------------------------------------------------------------- K_{n,n} identities


@dataclass(frozen=True)
class AlternatingTrialSpec:
    """Independent trials succeeding w.p. ``p1`` on odd and ``p2`` on even indices."""

    p1: float
    p2: float

    def __post_init__(self):
        if not (0.0 <= self.p1 <= 1.0 and 0.0 <= self.p2 <= 1.0):
            raise OracleError(f"p1, p2 must lie in [0, 1], got {self.p1}, {self.p2}")
        if self.s <= 0.0:
            raise OracleError("p1 + p2 - p1 p2 = 0: no trial ever succeeds")

    @property
    def s(self):
        return self.p1 + self.p2 - self.p1 * self.p2

    @property
    def y_param(self):
        return self.p1 / self.s

    @property
    def mean(self):
        return 2.0 / self.s - self.y_param


def alternating_pmf(spec, support_cap):
    """``P(N = j)`` for ``j = 1..support_cap`` by running the trial sequence."""
    pmf = np.zeros(support_cap)
    alive = 1.0
    for j in range(1, support_cap + 1):
        ps = spec.p1 if j % 2 == 1 else spec.p2
        pmf[j - 1] = alive * ps
        alive *= 1.0 - ps
    return pmf


def two_x_minus_y_pmf(spec, support_cap):
    """``P(2X - Y = j)`` with ``X ~ Geometric(s)`` on ``{1, 2, ...}`` and ``Y ~ Bernoulli(p1 / s)``."""
    s, y = spec.s, spec.y_param
    pmf = np.zeros(support_cap)
    for j in range(1, support_cap + 1):
        x = (j + 1) // 2
        px = (1.0 - s) ** (x - 1) * s
        pmf[j - 1] = px * (y if j % 2 == 1 else 1.0 - y)
    return pmf


def alternating_identity_check(spec, support_cap=None):
    """Max absolute pmf difference between the trial count and ``2X - Y``.

    The default support runs until the remaining mass is below ``1e-16``.
    """
    if support_cap is None:
        tail = 1.0 - spec.s
        support_cap = 2 if tail <= 0 else min(10**6, 2 * int(math.ceil(math.log(1e-16) / math.log(tail))) + 2)
    a = alternating_pmf(spec, support_cap)
    b = two_x_minus_y_pmf(spec, support_cap)
    return float(np.max(np.abs(a - b)))


def identity_grid(size=20, support_cap=None):
    """Largest discrepancy over a ``size x size`` grid of ``(p1, p2)`` in ``(0, 1]``."""
    grid = np.linspace(1.0 / size, 1.0, size)
    worst = 0.0
    for p1 in grid:
        for p2 in grid:
            worst = max(worst, alternating_identity_check(AlternatingTrialSpec(p1, p2), support_cap))
    return worst


def knn_stationary_bounds(n):
    """``(lower, upper)`` on the summed per-stage expected blue travel times.

    ``lower = sum_m (2n/m - 1) = 2n H_n - n``. For ``m < n/ln n`` the upper
    term is ``(2 + 1/ln n) n/m``; otherwise ``p1 p2 <= (p1 + p2)^2 / 4``
    gives ``2n / (m (1 - m/(4n)))``.
    """
    if n < 3:
        raise OracleError(f"n must be >= 3, got {n}")
    m = np.arange(1, n + 1, dtype=float)
    lower = float(np.sum(2.0 * n / m - 1.0))
    L = math.log(n)
    small = m < n / L
    upper = float(np.sum(np.where(small, (2.0 + 1.0 / L) * n / m, 2.0 * n / (m * (1.0 - m / (4.0 * n))))))
    return lower, upper


def harmonic(n):
    return float(np.sum(1.0 / np.arange(1, n + 1, dtype=float)))


# ---------------------------------------------------------------- bake


def bake(path=CONSTANTS_PATH):
    """Compute the frozen regression constants and write them to ``path``."""
    entries = {}

    def put(name, oracle, params, value, tolerance):
        entries[name] = {"oracle": oracle, "parameters": params, "value": value, "tolerance": tolerance}

    put("exact_T_n1_complete", "exact_extinction_expectation",
        {"n": 1, "topology": "complete", "init": "default", "p": 0.5},
        exact_extinction_expectation(1, "complete", p=0.5), 1e-12)
    for p in (0.5, 0.1):
        put(f"exact_T_n2_complete_default_p{p}", "exact_extinction_expectation",
            {"n": 2, "topology": "complete", "init": "default", "p": p},
            exact_extinction_expectation(2, "complete", p=p), 1e-10)
    n = 2**14
    lo, up = knn_stationary_bounds(n)
    put("knn_lower_ratio_n16384", "knn_stationary_bounds", {"n": n},
        lo / (2 * n * math.log(n)), 1e-12)
    put("knn_upper_ratio_n16384", "knn_stationary_bounds", {"n": n},
        up / (2 * n * math.log(n)), 1e-12)
    doc = {"format": "arwlab-constants", "version": 1, "constants": entries}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def load_constants(path=CONSTANTS_PATH):
    doc = json.loads(Path(path).read_text())
    return {k: v["value"] for k, v in doc["constants"].items()}
