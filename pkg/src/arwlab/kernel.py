"""Compiled trial loop with the proof bookkeeping fused in.

One call runs a whole batch of trials inside numba, which is what makes
10^4-trial sweeps at n = 2^14 practical. The logic mirrors
:class:`arwlab.instrumentation.ProofInstrument` line for line; keep the two in
step when changing either.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import _init_config, _step_core, default_budget
from .instrumentation import A_ALL, A_BNG, A_NB, A_RNG, AUDIT_SIZE, DEFAULT_W, DecompositionError, decompose, tau_target
from .records import TraceStats
from .rng import seed_state, stream_key

(O_T, O_TBLUE, O_TRED, O_TLATE, O_TOK, O_TAU_TIME, O_TAU_OUT, O_C, O_XI, O_A, O_L, O_TRUNC,
 O_RED_MOVES, O_LEVEL_UPS, O_MAX_LEVEL, O_GEN_RED, O_GEN_BLUE, O_VIOL, O_WATCH) = range(19)
OUT_SIZE = 19

_GOOD, _INTER, _BAD = 0, 1, 2


@njit(cache=True, inline="always")
def _cls(count, m, n, inv_w):
    if count == 0:
        return _BAD
    fm = max(6.0 * m / n, inv_w)
    if count * (1.0 + fm) >= m:
        return _GOOD
    if count * (1.0 + 2.0 * fm) < m:
        return _BAD
    return _INTER


@njit(cache=True, inline="always")
def _acc(a, base, delta, up, down):
    a[base] += 1.0
    if delta > 0:
        a[base + 1] += 1.0
    elif delta < 0:
        a[base + 2] += 1.0
    a[base + 3] += up
    a[base + 4] += up * (1.0 - up)
    a[base + 5] += down
    a[base + 6] += down * (1.0 - down)


@njit(cache=True)
def _trial(s, n, p, topo, kind, a, tmpl, rs, bs, inv_w, budget, target,
           count, pos, head, nxt, prv, scal, stack,
           audit, watch_vertex, watch_horizon, decimate, out):
    _init_config(kind, n, a, tmpl, rs, bs, s, count, pos, head, nxt, prv, scal)
    do_audit = audit.shape[0] > 0
    q = 1.0 - p
    n2 = 2.0 * n
    limit = 3 * n * n
    out[:] = 0
    out[O_A] = n - scal[1]
    out[O_L] = -1
    out[O_TAU_TIME] = -1
    out[O_GEN_RED] = -1
    out[O_GEN_BLUE] = -1

    M = scal[0]
    R = scal[1]
    B = scal[2]
    t = 0
    bc = _cls(B, M, n, inv_w)
    rc = _cls(R, M, n, inv_w)
    level = 0
    if rc != _GOOD:
        level = n - R
        for i in range(level):
            stack[i] = n - i
        out[O_MAX_LEVEL] = level
        out[O_L] = n
    blue_ever_good = bc == _GOOD
    tau_out = 0
    tau_time = -1
    T_blue = T_red = T_late = T_ok = 0
    C = Xi = red_moves = watch = 0

    cap = 16
    ns = 0
    series = np.empty((cap if decimate > 0 else 0, 5), dtype=np.int64)
    if decimate > 0:
        series[0, 0] = 0
        series[0, 1] = M
        series[0, 2] = R
        series[0, 3] = B
        series[0, 4] = level
        ns = 1

    while M > 0:
        if t >= budget:
            out[O_TRUNC] = 1
            break
        if not blue_ever_good:
            T_blue += 1
        if level > 0:
            T_red += 1
        if tau_out != 0:
            if level == 0:
                T_late += 1
        elif bc != _BAD and rc != _BAD:
            T_ok += 1

        M_pre = M
        Rp = R
        Bp = B
        c, src, tgt, collided, R_star, B_star, R, B, bad = _step_core(
            s, p, topo, n, M, R, B, count, pos, head, nxt, prv)
        if collided:
            M -= 1
            C += 1
        if bad:
            Xi += 1
        if c == 0:
            red_moves += 1

        if do_audit:
            if bc != _GOOD:
                up = q * (M_pre - Bp) / M_pre * (n2 - Bp - Rp) / n2
                down = q * Bp / M_pre * (Bp + Rp) / n2 + p * Bp / n2
                _acc(audit, A_BNG, B - Bp, up, down)
            if rc != _GOOD:
                up = p * (M_pre - Rp) / M_pre * (n2 - Rp) / n2
                down = p * Rp / M_pre * (Rp - 1) / n2
                _acc(audit, A_RNG, R_star - Rp, up, down)
            if bc != _BAD and rc != _BAD:
                b = M_pre / (n2 * (1.0 + 2.0 * max(6.0 * M_pre / n, inv_w)))
                audit[A_NB] += 1.0
                audit[A_NB + 1] += collided
                audit[A_NB + 2] += b
                audit[A_NB + 3] += b * (1.0 - b)
            e = (p * Bp + q * Rp) / n2
            audit[A_ALL] += 1.0
            audit[A_ALL + 1] += collided
            audit[A_ALL + 2] += e
            audit[A_ALL + 3] += e * (1.0 - e)

        if t < watch_horizon and (c == 0 or tgt == watch_vertex):
            watch += 1
        t += 1

        rc_pre = rc
        bc_pre = bc
        if M > 0:
            bc = _cls(B, M, n, inv_w)
            rc = _cls(R, M, n, inv_w)
        else:
            bc = -1
            rc = -1

        # red level
        if collided and rc_pre != _GOOD and R < Rp:
            stack[level] = Rp
            level += 1
            out[O_LEVEL_UPS] += 1
            if level > out[O_MAX_LEVEL]:
                out[O_MAX_LEVEL] = level
            if out[O_L] < 0:
                out[O_L] = M_pre
        while level > 0 and R >= stack[level - 1]:
            level -= 1
            if level == 0 and rc == _BAD:
                out[O_VIOL] += 1
        if rc == _GOOD and level > 0:
            level = 0

        if rc_pre == _GOOD and rc != _GOOD:
            out[O_GEN_RED] = t
        if bc_pre == _GOOD and bc != _GOOD:
            out[O_GEN_BLUE] = t

        # tau
        if M > 0 and bc == _GOOD:
            blue_ever_good = True
        if tau_out == 0:
            if M > 0 and bc == _BAD and blue_ever_good:
                tau_out = 2
            elif M > 0 and level == 0 and rc == _BAD:
                tau_out = 3
            elif t == limit:
                tau_out = 4
            elif M == target:
                tau_out = 1
            if tau_out != 0:
                tau_time = t

        if decimate > 0 and t % decimate == 0:
            if ns == series.shape[0]:
                bigger = np.empty((2 * series.shape[0], 5), dtype=np.int64)
                bigger[:ns] = series[:ns]
                series = bigger
            series[ns, 0] = t
            series[ns, 1] = M
            series[ns, 2] = R
            series[ns, 3] = B
            series[ns, 4] = level
            ns += 1

    out[O_T] = t
    out[O_C] = C
    out[O_XI] = Xi
    out[O_RED_MOVES] = red_moves
    out[O_WATCH] = watch
    out[O_TBLUE] = T_blue
    out[O_TRED] = T_red
    out[O_TLATE] = T_late
    out[O_TOK] = T_ok
    out[O_TAU_TIME] = tau_time
    out[O_TAU_OUT] = tau_out
    return series[:ns]


@njit(cache=True)
def _run_batch(seed, entry, trial0, ntrials, n, p, topo, kind, a, tmpl, rs, bs, inv_w, budget, target,
               audit, watch_vertex, watch_horizon, out, keys):
    V = 2 * n
    count = np.zeros((2, V), dtype=np.int64)
    pos = np.zeros((2, n), dtype=np.int64)
    head = np.full((2, V), -1, dtype=np.int64)
    nxt = np.full((2, n), -1, dtype=np.int64)
    prv = np.full((2, n), -1, dtype=np.int64)
    scal = np.zeros(4, dtype=np.int64)
    stack = np.zeros(2 * n + 2, dtype=np.int64)
    s = np.zeros(4, dtype=np.uint64)
    for k in range(ntrials):
        key = stream_key(seed, entry, np.uint64(trial0 + k))
        keys[k] = key
        seed_state(key, s)
        _trial(s, n, p, topo, kind, a, tmpl, rs, bs, inv_w, budget, target,
               count, pos, head, nxt, prv, scal, stack,
               audit, watch_vertex, watch_horizon, 0, out[k])


@njit(cache=True)
def _run_one(s, n, p, topo, kind, a, tmpl, rs, bs, inv_w, budget, target,
             audit, watch_vertex, watch_horizon, decimate, out):
    V = 2 * n
    count = np.zeros((2, V), dtype=np.int64)
    pos = np.zeros((2, n), dtype=np.int64)
    head = np.full((2, V), -1, dtype=np.int64)
    nxt = np.full((2, n), -1, dtype=np.int64)
    prv = np.full((2, n), -1, dtype=np.int64)
    scal = np.zeros(4, dtype=np.int64)
    stack = np.zeros(2 * n + 2, dtype=np.int64)
    return _trial(s, n, p, topo, kind, a, tmpl, rs, bs, inv_w, budget, target,
                  count, pos, head, nxt, prv, scal, stack,
                  audit, watch_vertex, watch_horizon, decimate, out)


def _prepare(params, w, budget):
    kind, a, tmpl, rs, bs = params.init.resolve(params.n, params.topology)
    budget = default_budget(params.n) if budget is None else int(budget)
    return (params.n, float(params.p), params.topology_code, kind, a, tmpl, rs, bs,
            float(w.inverse(params.n)), budget, tau_target(params.n))


def row_to_stats(row, series=None):
    """Convert one kernel output row to :class:`TraceStats`."""
    row = [int(x) for x in row]
    truncated = bool(row[O_TRUNC])
    d = decompose(row[O_T], row[O_TBLUE], row[O_TRED], row[O_TLATE], row[O_TOK],
                  row[O_TAU_TIME], row[O_TAU_OUT], truncated)
    return TraceStats(
        T=row[O_T], decomposition=d, C=row[O_C], Xi=row[O_XI], A=row[O_A],
        L=None if row[O_L] < 0 else row[O_L], truncated=truncated, red_moves=row[O_RED_MOVES],
        level_ups=row[O_LEVEL_UPS], max_level=row[O_MAX_LEVEL], genesis_red=row[O_GEN_RED],
        genesis_blue=row[O_GEN_BLUE], level_return_violations=row[O_VIOL], watch_events=row[O_WATCH],
        series=series,
    )


def row_from_stats(st):
    """Inverse of :func:`row_to_stats` (the series is not part of a row)."""
    row = np.zeros(OUT_SIZE, dtype=np.int64)
    d = st.decomposition
    row[[O_T, O_TBLUE, O_TRED, O_TLATE, O_TOK, O_TAU_TIME, O_TAU_OUT]] = (
        st.T, d.T_blue, d.T_red, d.T_late, d.T_ok, d.tau_time, int(d.tau_outcome))
    row[[O_C, O_XI, O_A, O_L, O_TRUNC]] = (st.C, st.Xi, st.A, -1 if st.L is None else st.L, st.truncated)
    row[[O_RED_MOVES, O_LEVEL_UPS, O_MAX_LEVEL, O_GEN_RED, O_GEN_BLUE, O_VIOL, O_WATCH]] = (
        st.red_moves, st.level_ups, st.max_level, st.genesis_red, st.genesis_blue,
        st.level_return_violations, st.watch_events)
    return row


def simulate(params, trial=0, entry=0, rng=None, w=DEFAULT_W, budget=None, audit=None,
             watch_vertex=-1, watch_horizon=0, decimate=0):
    """Run one instrumented trial in compiled code.

    Uses the stream ``(params.seed, entry, trial)`` unless ``rng`` is given.
    ``audit``, when passed, is a float array of length ``AUDIT_SIZE`` that
    accumulates the bias-audit strata.
    """
    from .rng import TrialRNG

    rng = TrialRNG(params.seed, entry, trial) if rng is None else rng
    args = _prepare(params, w, budget)
    audit = np.zeros(0) if audit is None else audit
    out = np.zeros(OUT_SIZE, dtype=np.int64)
    series = _run_one(rng.state, *args, audit, int(watch_vertex), int(watch_horizon), int(decimate), out)
    return row_to_stats(out, series.copy() if decimate > 0 else None)


@dataclass
class TrialBatch:
    """Raw kernel output for a contiguous block of trials."""

    rows: np.ndarray  # (trials, OUT_SIZE) int64
    keys: np.ndarray  # per-trial stream keys, uint64
    trial0: int
    audit: np.ndarray | None = None

    @property
    def T(self):
        return self.rows[:, O_T]

    def column(self, idx):
        return self.rows[:, idx]

    def stats(self):
        return [row_to_stats(r) for r in self.rows]


def run_trials(params, trials, entry=0, trial0=0, w=DEFAULT_W, budget=None, audit=False,
               watch_vertex=-1, watch_horizon=0):
    """Run trials ``trial0 .. trial0 + trials - 1`` of plan entry ``entry``."""
    args = _prepare(params, w, budget)
    out = np.zeros((trials, OUT_SIZE), dtype=np.int64)
    keys = np.zeros(trials, dtype=np.uint64)
    acc = np.zeros(AUDIT_SIZE if audit else 0)
    _run_batch(np.uint64(params.seed & ((1 << 64) - 1)), np.uint64(entry), np.int64(trial0), trials,
               *args, acc, int(watch_vertex), int(watch_horizon), out, keys)
    # enforce the decomposition inequality on every completed trial
    parts = out[:, [O_TBLUE, O_TRED, O_TLATE, O_TOK]].sum(axis=1)
    bad = np.flatnonzero((out[:, O_T] > parts) & (out[:, O_TRUNC] == 0))
    if len(bad):
        raise DecompositionError(f"decomposition inequality fails on trials {(bad + trial0).tolist()}")
    return TrialBatch(out, keys, trial0, acc if audit else None)
