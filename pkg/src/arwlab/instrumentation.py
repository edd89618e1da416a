"""Step observers that track spread classification, the red level and tau.

These are the readable reference versions. :mod:`arwlab.kernel` fuses the
same bookkeeping into the compiled trial loop; the test-suite checks that the
two agree field for field.
"""

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .core import BLUE, RED
from .records import TauOutcome, TimeDecomposition


@dataclass(frozen=True)
class WFunction:
    """Slowly growing ``w(n) = (ln n) ** exponent``, exponent in (0, 1/2)."""

    exponent: float = 1.0 / 3.0

    def __post_init__(self):
        if not 0.0 < self.exponent < 0.5:
            raise ValueError(f"w exponent must lie in (0, 1/2), got {self.exponent}")

    def __call__(self, n):
        return math.log(n) ** self.exponent

    def inverse(self, n):
        """``1 / w(n)``, infinite at ``n = 1`` where ``w`` vanishes."""
        w = self(n)
        return math.inf if w == 0.0 else 1.0 / w


DEFAULT_W = WFunction()


class Goodness(IntEnum):
    GOOD = 0
    INTERMEDIATE = 1
    BAD = 2


def f(m, n, w=DEFAULT_W):
    """Closeness tolerance ``max(6m/n, 1/w(n))``."""
    if not 1 <= m <= n:
        raise ValueError(f"f needs 1 <= m <= n, got m={m}, n={n}")
    return max(6.0 * m / n, w.inverse(n))


def classify(count, M, n, w=DEFAULT_W):
    """Classify a colour occupying ``count`` sites while ``M`` particles remain."""
    if M < 1 or not 0 <= count <= M:
        raise ValueError(f"classify needs 0 <= count <= M and M >= 1, got count={count}, M={M}")
    if count == 0:
        return Goodness.BAD
    fm = f(M, n, w)
    if count * (1.0 + fm) >= M:
        return Goodness.GOOD
    if count * (1.0 + 2.0 * fm) < M:
        return Goodness.BAD
    return Goodness.INTERMEDIATE


def tau_target(n):
    """Particle count at which tau succeeds: ``floor((ln n)^2)``."""
    return math.floor(math.log(n) ** 2)


class LevelTracker:
    """Red level with its stack of return thresholds.

    ``thresholds[i]`` is the red site count whose attainment drops the level
    back to ``i``. Any pop that lands on level 0 is counted in
    ``return_violations`` if red is bad at that instant.
    """

    def __init__(self):
        self.level = 0
        self.thresholds = []
        self.level_ups = 0
        self.max_level = 0
        self.L = None
        self.return_violations = 0

    def start(self, n, R0, red_state):
        if red_state != Goodness.GOOD:
            self.thresholds = [n - i for i in range(n - R0)]
            self.level = len(self.thresholds)
            self.max_level = self.level
            self.L = n

    def update(self, event, M_pre, red_pre, red_post):
        """Apply one resolved step; returns a list of ``(kind, new_level)``."""
        moves = []
        if event.collided and red_pre != Goodness.GOOD and event.R_post < event.R_pre:
            self.thresholds.append(event.R_pre)
            self.level += 1
            self.level_ups += 1
            self.max_level = max(self.max_level, self.level)
            if self.L is None:
                self.L = M_pre
            moves.append(("up", self.level))
        while self.thresholds and event.R_post >= self.thresholds[-1]:
            self.thresholds.pop()
            self.level -= 1
            moves.append(("down", self.level))
            if self.level == 0 and red_post == Goodness.BAD:
                self.return_violations += 1
        if red_post == Goodness.GOOD and self.level > 0:
            self.thresholds.clear()
            self.level = 0
            moves.append(("reset", 0))
        return moves


class TauMonitor:
    def __init__(self, n):
        self.target = tau_target(n)
        self.limit = 3 * n * n
        self.blue_ever_good = False
        self.outcome = TauOutcome.NOT_REACHED
        self.time = -1

    @property
    def reached(self):
        return self.outcome != TauOutcome.NOT_REACHED

    def start(self, blue_state):
        self.blue_ever_good = blue_state == Goodness.GOOD

    def update(self, t, M, blue_state, red_state, level):
        """Evaluate the stop rules at resolved time ``t``; failures beat success."""
        if M > 0 and blue_state == Goodness.GOOD:
            self.blue_ever_good = True
        if self.reached:
            return self.outcome
        out = TauOutcome.NOT_REACHED
        if M > 0 and blue_state == Goodness.BAD and self.blue_ever_good:
            out = TauOutcome.FAIL_BLUE_BAD
        elif M > 0 and level == 0 and red_state == Goodness.BAD:
            out = TauOutcome.FAIL_RED_BAD
        elif t == self.limit:
            out = TauOutcome.FAIL_TIMEOUT
        elif M == self.target:
            out = TauOutcome.SUCCESS
        if out != TauOutcome.NOT_REACHED:
            self.outcome = out
            self.time = t
        return self.outcome


# audit accumulator layout, shared with the compiled kernel
A_BNG, A_RNG, A_NB, A_ALL = 0, 7, 14, 18
AUDIT_SIZE = 22


class ProofInstrument:
    """Observer that runs the level process, tau and the time decomposition.

    ``watch_vertex``/``watch_horizon`` count steps before the horizon in which
    a red moves or a blue lands on the watched vertex. ``decimate > 0`` keeps
    ``(t, M, R, B, level)`` every ``decimate`` steps.
    """

    def __init__(self, w=DEFAULT_W, audit=False, watch_vertex=-1, watch_horizon=0, decimate=0):
        self.w = w
        self.audit = np.zeros(AUDIT_SIZE) if audit else None
        self.watch_vertex = watch_vertex
        self.watch_horizon = watch_horizon
        self.decimate = decimate

    def _classify(self, count, M):
        return classify(count, M, self.n, self.w) if M > 0 else None

    def start(self, config, params):
        self.n = params.n
        self.p = params.p
        self.tracker = LevelTracker()
        self.tau = TauMonitor(params.n)
        self.bc = self._classify(config.B, config.M)
        self.rc = self._classify(config.R, config.M)
        self.tracker.start(params.n, config.R, self.rc)
        self.tau.start(self.bc)
        self.T_blue = self.T_red = self.T_late = self.T_ok = 0
        self.genesis = {RED: -1, BLUE: -1}
        self.watch_events = 0
        self.series = []
        self._sample(config)

    def _sample(self, config):
        if self.decimate > 0 and config.t % self.decimate == 0:
            self.series.append((config.t, config.M, config.R, config.B, self.tracker.level))

    def observe(self, config, ev):
        t_pre = config.t - 1
        bc, rc = self.bc, self.rc
        if not self.tau.blue_ever_good:
            self.T_blue += 1
        if self.tracker.level > 0:
            self.T_red += 1
        if self.tau.reached:
            if self.tracker.level == 0:
                self.T_late += 1
        elif bc != Goodness.BAD and rc != Goodness.BAD:
            self.T_ok += 1
        M_pre = config.M + ev.collided
        if self.audit is not None:
            self._audit(ev, M_pre, bc, rc)
        if t_pre < self.watch_horizon and (ev.mover_color == RED or ev.target_vertex == self.watch_vertex):
            self.watch_events += 1

        self.bc = self._classify(config.B, config.M)
        self.rc = self._classify(config.R, config.M)
        self.tracker.update(ev, M_pre, rc, self.rc)
        if rc == Goodness.GOOD and self.rc != Goodness.GOOD:
            self.genesis[RED] = config.t
        if bc == Goodness.GOOD and self.bc != Goodness.GOOD:
            self.genesis[BLUE] = config.t
        self.tau.update(config.t, config.M, self.bc, self.rc, self.tracker.level)
        self._sample(config)

    def _audit(self, ev, M, bc, rc):
        a = self.audit
        n2 = 2.0 * self.n
        q = 1.0 - self.p
        R, B = ev.R_pre, ev.B_pre
        if bc != Goodness.GOOD:
            up = q * (M - B) / M * (n2 - B - R) / n2
            down = q * B / M * (B + R) / n2 + self.p * B / n2
            _acc(a, A_BNG, ev.B_post - B, up, down)
        if rc != Goodness.GOOD:
            up = self.p * (M - R) / M * (n2 - R) / n2
            down = self.p * R / M * (R - 1) / n2
            _acc(a, A_RNG, ev.R_star - R, up, down)
        if bc != Goodness.BAD and rc != Goodness.BAD:
            b = M / (n2 * (1.0 + 2.0 * f(M, self.n, self.w)))
            a[A_NB] += 1.0
            a[A_NB + 1] += ev.collided
            a[A_NB + 2] += b
            a[A_NB + 3] += b * (1.0 - b)
        e = (self.p * B + q * R) / n2
        a[A_ALL] += 1.0
        a[A_ALL + 1] += ev.collided
        a[A_ALL + 2] += e
        a[A_ALL + 3] += e * (1.0 - e)

    def decompose(self, T, truncated):
        return decompose(T, self.T_blue, self.T_red, self.T_late, self.T_ok,
                         self.tau.time, self.tau.outcome, truncated)

    def finish(self, config):
        tr = self.tracker
        out = dict(
            decomposition=self.decompose(config.t, config.M > 0),
            L=tr.L, level_ups=tr.level_ups, max_level=tr.max_level,
            genesis_red=self.genesis[RED], genesis_blue=self.genesis[BLUE],
            level_return_violations=tr.return_violations, watch_events=self.watch_events,
        )
        if self.decimate > 0:
            out["series"] = np.array(self.series, dtype=np.int64).reshape(-1, 5)
        return out


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


class DecompositionError(AssertionError):
    pass


def decompose(T, T_blue, T_red, T_late, T_ok, tau_time, tau_outcome, truncated=False):
    """Assemble the four-part count and enforce ``T <= sum`` on complete traces."""
    d = TimeDecomposition(int(T_blue), int(T_red), int(T_late), int(T_ok), int(tau_time),
                          TauOutcome(int(tau_outcome)), reliable=not truncated)
    if d.reliable and not d.covers(T):
        raise DecompositionError(f"T={T} exceeds T_blue+T_red+T_late+T_ok={d.total}")
    return d


# ---------------------------------------------------------------- audit report


@dataclass(frozen=True)
class AuditCheck:
    stratum: str
    check: str
    steps: int
    observed: float
    bound: float
    sigma: float
    verdict: str  # "pass", "fail" or "inconclusive"

    def line(self):
        return (f"{self.stratum:<16} {self.check:<22} steps={self.steps:<9d} "
                f"observed={self.observed:<12.6g} bound={self.bound:<12.6g} sigma={self.sigma:<10.4g} {self.verdict}")


def bias_audit(audit, min_steps=200, z=3.0):
    """Compare accumulated strata with the analytic bounds.

    Each lower bound passes if the observed count is at least the summed
    per-step bound less ``z`` standard deviations (upper bounds mirrored).
    The ratio checks test ``ups - 2 downs >= -z * sqrt(ups + 4 downs)``.
    Strata with fewer than ``min_steps`` steps are reported inconclusive.
    """
    a = np.asarray(audit, dtype=float)
    checks = []

    def emit(stratum, name, steps, obs, bound, sigma, ok):
        verdict = "inconclusive" if steps < min_steps else ("pass" if ok else "fail")
        checks.append(AuditCheck(stratum, name, int(steps), float(obs), float(bound), float(sigma), verdict))

    for label, base, what in (("blue_not_good", A_BNG, "B"), ("red_not_good", A_RNG, "R*")):
        steps, ups, downs = a[base], a[base + 1], a[base + 2]
        s_up, s_dn = math.sqrt(a[base + 4]), math.sqrt(a[base + 6])
        emit(label, f"{what} up >= bound", steps, ups, a[base + 3], s_up, ups >= a[base + 3] - z * s_up)
        emit(label, f"{what} down <= bound", steps, downs, a[base + 5], s_dn, downs <= a[base + 5] + z * s_dn)
        s_r = math.sqrt(ups + 4.0 * downs)
        emit(label, f"{what} up/down >= 2", steps if ups + downs >= 30 else 0,
             ups / downs if downs else math.inf, 2.0, s_r, ups - 2.0 * downs >= -z * s_r)
    steps = a[A_NB]
    s = math.sqrt(a[A_NB + 3])
    emit("neither_bad", "collisions >= bound", steps, a[A_NB + 1], a[A_NB + 2], s, a[A_NB + 1] >= a[A_NB + 2] - z * s)
    steps = a[A_ALL]
    s = math.sqrt(a[A_ALL + 3])
    emit("all_steps", "collisions ~ exact", steps, a[A_ALL + 1], a[A_ALL + 2], s,
         abs(a[A_ALL + 1] - a[A_ALL + 2]) <= (z + 1.0) * s)
    return checks
