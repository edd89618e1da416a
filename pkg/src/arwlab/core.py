"""State and one-step dynamics of the balanced two-type annihilating walk.

Colours are indexed ``RED = 0`` and ``BLUE = 1``. A configuration keeps, per
colour, a per-vertex count, a dense particle->vertex array (live slots are
``0..M-1``) and a doubly linked list of slots per vertex. The linked lists let
a collision remove *some* particle of the struck colour at the target in O(1);
removal swaps the last live slot into the hole.

On the complete topology the target of a move is uniform over all ``2n``
vertices, the current one included (a loop at every vertex). On the bipartite
topology vertices ``0..n-1`` and ``n..2n-1`` form the two sides and the target
is uniform over the opposite side.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .records import TraceStats
from .rng import TrialRNG, next_float, randbelow

RED = 0
BLUE = 1

COMPLETE = 0
BIPARTITE = 1
TOPOLOGIES = {"complete": COMPLETE, "bipartite": BIPARTITE}

INIT_DEFAULT = 0
INIT_DISJOINT = 1
INIT_CLUSTERED = 2
INIT_EXPLICIT = 3
_INIT_KINDS = {"default": INIT_DEFAULT, "disjoint": INIT_DISJOINT, "clustered": INIT_CLUSTERED, "explicit": INIT_EXPLICIT}

# slots of the int64 scalar block carried with every configuration
S_M, S_R, S_B, S_T = 0, 1, 2, 3

# slots of the int64 event record filled by _step
E_COLOR, E_SRC, E_TGT, E_COLLIDED = 0, 1, 2, 3
E_R_PRE, E_R_STAR, E_R_POST = 4, 5, 6
E_B_PRE, E_B_STAR, E_B_POST = 7, 8, 9
E_BAD_MOVE = 10
EVENT_SIZE = 11


class ConfigError(ValueError):
    """An initial configuration that violates the model's constraints."""


@dataclass(frozen=True)
class InitSpec:
    """How to lay out the ``n`` reds and ``n`` blues at time zero.

    ``default`` puts one particle on every vertex with a uniformly random
    colouring. ``disjoint`` uses ``n - a`` red sites and ``n`` blue sites; each
    red site gets one red and the ``a`` surplus reds go to uniformly chosen red
    sites. Sites are drawn at random per trial unless given. ``clustered``
    stacks every red on vertex 0 and puts blues on vertices ``1..n``.
    ``explicit`` takes ``(vertex, colour, count)`` triples with colour in
    ``{"red", "blue", 0, 1}``.
    """

    variant: str = "default"
    a: int = 0
    red_sites: tuple = ()
    blue_sites: tuple = ()
    entries: tuple = ()

    @classmethod
    def one_per_vertex(cls):
        return cls("default")

    @classmethod
    def disjoint(cls, a, red_sites=(), blue_sites=()):
        return cls("disjoint", a=int(a), red_sites=tuple(red_sites), blue_sites=tuple(blue_sites))

    @classmethod
    def clustered(cls):
        return cls("clustered")

    @classmethod
    def explicit(cls, entries):
        return cls("explicit", entries=tuple((int(v), c, int(k)) for v, c, k in entries))

    @classmethod
    def parse(cls, text):
        """Parse the CLI form: ``default``, ``clustered`` or ``disjoint:A``."""
        if text in ("default", "clustered"):
            return cls(text)
        if text.startswith("disjoint:"):
            try:
                return cls.disjoint(int(text.split(":", 1)[1]))
            except ValueError:
                raise ConfigError(f"bad disjoint spec {text!r}") from None
        raise ConfigError(f"unknown init spec {text!r}")

    @property
    def label(self):
        return f"disjoint:{self.a}" if self.variant == "disjoint" else self.variant

    def resolve(self, n, topology):
        """Validate against ``n`` and return the arrays the init kernel consumes."""
        if self.variant not in _INIT_KINDS:
            raise ConfigError(f"unknown init variant {self.variant!r}")
        V = 2 * n
        counts = np.zeros((2, V), dtype=np.int64)
        red_sites = np.asarray(self.red_sites, dtype=np.int64)
        blue_sites = np.asarray(self.blue_sites, dtype=np.int64)
        if self.variant == "disjoint":
            if not 0 <= self.a < n:
                raise ConfigError(f"disjoint init needs 0 <= A < n, got A={self.a}, n={n}")
            if len(red_sites) or len(blue_sites):
                if len(red_sites) != n - self.a or len(blue_sites) != n:
                    raise ConfigError(
                        f"need {n - self.a} red sites and {n} blue sites, got {len(red_sites)} and {len(blue_sites)}"
                    )
                allsites = np.concatenate([red_sites, blue_sites])
                _check_range(allsites, V)
                if len(np.unique(allsites)) != len(allsites):
                    raise ConfigError("red and blue sites must be distinct and disjoint")
        elif self.variant == "clustered":
            counts[RED, 0] = n
            counts[BLUE, 1 : n + 1] = 1
        elif self.variant == "explicit":
            for v, c, k in self.entries:
                col = _colour_index(c)
                _check_range(np.array([v]), V)
                if k < 0:
                    raise ConfigError(f"negative count at vertex {v}")
                counts[col, v] += k
            mixed = np.flatnonzero((counts[RED] > 0) & (counts[BLUE] > 0))
            if len(mixed):
                raise ConfigError(f"vertices {mixed.tolist()} hold both colours")
            tot = counts.sum(axis=1)
            if tot[RED] != n or tot[BLUE] != n:
                raise ConfigError(f"need {n} reds and {n} blues, got {tot[RED]} and {tot[BLUE]}")
        return _INIT_KINDS[self.variant], self.a, counts, red_sites, blue_sites


def _colour_index(c):
    if c in (RED, "red", "r"):
        return RED
    if c in (BLUE, "blue", "b"):
        return BLUE
    raise ConfigError(f"unknown colour {c!r}")


def _check_range(vs, V):
    bad = vs[(vs < 0) | (vs >= V)]
    if len(bad):
        raise ConfigError(f"vertex index {int(bad[0])} out of range 0..{V - 1}")


@dataclass(frozen=True)
class SimParams:
    n: int
    p: float = 0.5
    topology: str = "complete"
    init: InitSpec = field(default_factory=InitSpec)
    seed: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not 0.0 < self.p <= 0.5:
            raise ValueError(f"p must lie in (0, 1/2], got {self.p}")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")

    @property
    def q(self):
        return 1.0 - self.p

    @property
    def topology_code(self):
        return TOPOLOGIES[self.topology]


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _link(c, i, v, head, nxt, prv):
    h = head[c, v]
    nxt[c, i] = h
    prv[c, i] = -1
    if h >= 0:
        prv[c, h] = i
    head[c, v] = i


@njit(cache=True)
def _init_config(kind, n, a, tmpl, red_sites, blue_sites, s, count, pos, head, nxt, prv, scal):
    V = 2 * n
    count[:, :] = 0
    head[:, :] = -1
    if kind == 0 or kind == 1:
        perm = np.arange(V)
        for i in range(V - 1):
            j = i + randbelow(s, V - i)
            tmp = perm[i]
            perm[i] = perm[j]
            perm[j] = tmp
        if kind == 0:
            for i in range(n):
                count[0, perm[i]] = 1
                count[1, perm[n + i]] = 1
        else:
            nr = n - a
            if len(red_sites) > 0:
                rs = red_sites
                bs = blue_sites
            else:
                rs = perm[:nr]
                bs = perm[nr : nr + n]
            for i in range(nr):
                count[0, rs[i]] = 1
            for i in range(n):
                count[1, bs[i]] = 1
            for _ in range(a):
                count[0, rs[randbelow(s, nr)]] += 1
    else:
        count[:, :] = tmpl
    occ = np.zeros(2, dtype=np.int64)
    for c in range(2):
        idx = 0
        for v in range(V):
            k = count[c, v]
            if k > 0:
                occ[c] += 1
            for _ in range(k):
                pos[c, idx] = v
                _link(c, idx, v, head, nxt, prv)
                idx += 1
    scal[0] = n
    scal[1] = occ[0]
    scal[2] = occ[1]
    scal[3] = 0


@njit(cache=True, inline="always")
def _step_core(s, p, topo, n, M, R, B, count, pos, head, nxt, prv):
    """Advance one step from ``M`` particles per colour on ``R``/``B`` sites.

    Draw order: colour, particle, target. Returns ``(colour, source, target,
    collided, R_star, B_star, R_post, B_post, bad_move)``.

    The list surgery is written out in full: every array argument of a
    helper call costs an NRT incref/decref pair even when inlined, which
    made the step ten times slower.
    """
    c = 0 if next_float(s) < p else 1
    o = 1 - c
    i = randbelow(s, M)
    src = pos[c, i]
    # a single randbelow call site: duplicating it per topology is ~5x slower
    if topo == 0:
        base = 0
        span = 2 * n
    else:
        base = n if src < n else 0
        span = n
    tgt = base + randbelow(s, span)
    bad = c == 0 and tgt != src and count[0, tgt] > 0
    occ = R if c == 0 else B
    if tgt != src:
        a = prv[c, i]
        b = nxt[c, i]
        if a >= 0:
            nxt[c, a] = b
        else:
            head[c, src] = b
        if b >= 0:
            prv[c, b] = a
        count[c, src] -= 1
        if count[c, src] == 0:
            occ -= 1
        if count[c, tgt] == 0:
            occ += 1
        count[c, tgt] += 1
        pos[c, i] = tgt
        h = head[c, tgt]
        nxt[c, i] = h
        prv[c, i] = -1
        if h >= 0:
            prv[c, h] = i
        head[c, tgt] = i
    if c == 0:
        R = occ
    else:
        B = occ
    R_star = R
    B_star = B
    collided = count[o, tgt] > 0
    if collided:
        # drop the mover and the head particle of the other colour at tgt;
        # the last live slot of each colour is swapped into the hole
        last = M - 1
        j = head[o, tgt]
        for cc, ii in ((c, i), (o, j)):
            v = pos[cc, ii]
            a = prv[cc, ii]
            b = nxt[cc, ii]
            if a >= 0:
                nxt[cc, a] = b
            else:
                head[cc, v] = b
            if b >= 0:
                prv[cc, b] = a
            count[cc, v] -= 1
            if count[cc, v] == 0:
                if cc == 0:
                    R -= 1
                else:
                    B -= 1
            if ii != last:
                v2 = pos[cc, last]
                a = prv[cc, last]
                b = nxt[cc, last]
                pos[cc, ii] = v2
                prv[cc, ii] = a
                nxt[cc, ii] = b
                if a >= 0:
                    nxt[cc, a] = ii
                else:
                    head[cc, v2] = ii
                if b >= 0:
                    prv[cc, b] = ii
    return c, src, tgt, collided, R_star, B_star, R, B, bad


@njit(cache=True)
def _step(s, p, topo, n, count, pos, head, nxt, prv, scal, ev):
    """Array-in/array-out wrapper of :func:`_step_core` for the Python path."""
    M = scal[0]
    ev[E_R_PRE] = scal[1]
    ev[E_B_PRE] = scal[2]
    c, src, tgt, collided, R_star, B_star, R, B, bad = _step_core(
        s, p, topo, n, M, scal[1], scal[2], count, pos, head, nxt, prv)
    ev[E_COLOR] = c
    ev[E_SRC] = src
    ev[E_TGT] = tgt
    ev[E_COLLIDED] = collided
    ev[E_R_STAR] = R_star
    ev[E_B_STAR] = B_star
    ev[E_R_POST] = R
    ev[E_B_POST] = B
    ev[E_BAD_MOVE] = bad
    scal[0] = M - 1 if collided else M
    scal[1] = R
    scal[2] = B
    scal[3] += 1


# ---------------------------------------------------------------- Python surface


@dataclass(frozen=True)
class StepEvent:
    mover_color: int
    source_vertex: int
    target_vertex: int
    collided: bool
    R_pre: int
    R_star: int
    R_post: int
    B_pre: int
    B_star: int
    B_post: int
    bad_move: bool

    @classmethod
    def from_array(cls, ev):
        return cls(
            int(ev[E_COLOR]), int(ev[E_SRC]), int(ev[E_TGT]), bool(ev[E_COLLIDED]),
            int(ev[E_R_PRE]), int(ev[E_R_STAR]), int(ev[E_R_POST]),
            int(ev[E_B_PRE]), int(ev[E_B_STAR]), int(ev[E_B_POST]),
            bool(ev[E_BAD_MOVE]),
        )


class Configuration:
    """Live particle-system state. Mutated in place by :func:`step`."""

    def __init__(self, n, topology="complete"):
        self.n = n
        self.V = 2 * n
        self.topology = topology
        self.count = np.zeros((2, self.V), dtype=np.int64)
        self.pos = np.zeros((2, n), dtype=np.int64)
        self.head = np.full((2, self.V), -1, dtype=np.int64)
        self.nxt = np.full((2, n), -1, dtype=np.int64)
        self.prv = np.full((2, n), -1, dtype=np.int64)
        self.scal = np.zeros(4, dtype=np.int64)
        self.A = 0

    @property
    def M(self):
        return int(self.scal[S_M])

    @property
    def R(self):
        return int(self.scal[S_R])

    @property
    def B(self):
        return int(self.scal[S_B])

    @property
    def t(self):
        return int(self.scal[S_T])

    @property
    def red_count(self):
        return self.count[RED]

    @property
    def blue_count(self):
        return self.count[BLUE]

    @property
    def red_positions(self):
        return self.pos[RED, : self.M]

    @property
    def blue_positions(self):
        return self.pos[BLUE, : self.M]

    def copy(self):
        other = Configuration(self.n, self.topology)
        for name in ("count", "pos", "head", "nxt", "prv", "scal"):
            getattr(other, name)[...] = getattr(self, name)
        other.A = self.A
        return other

    def check(self):
        """Raise ``AssertionError`` if any structural invariant is broken."""
        M = self.M
        assert np.all(np.minimum(self.count[RED], self.count[BLUE]) == 0), "mixed site"
        for c in (RED, BLUE):
            assert self.count[c].sum() == M, "count total != M"
            assert np.all(self.count[c] >= 0)
            assert np.array_equal(np.bincount(self.pos[c, :M], minlength=self.V), self.count[c]), "positions/counts"
            for v in np.flatnonzero(self.count[c]):
                seen = []
                i = self.head[c, v]
                while i >= 0:
                    assert self.pos[c, i] == v and i < M
                    seen.append(i)
                    i = self.nxt[c, i]
                assert len(seen) == self.count[c, v], "slot list length"
        assert self.R == np.count_nonzero(self.count[RED])
        assert self.B == np.count_nonzero(self.count[BLUE])
        assert self.R <= M and self.B <= M


def init_configuration(params, rng):
    """Build the time-zero configuration for ``params`` using ``rng``'s stream."""
    kind, a, tmpl, red_sites, blue_sites = params.init.resolve(params.n, params.topology)
    config = Configuration(params.n, params.topology)
    _init_config(kind, params.n, a, tmpl, red_sites, blue_sites, rng.state,
                 config.count, config.pos, config.head, config.nxt, config.prv, config.scal)
    config.A = params.n - config.R
    return config


def step(config, params, rng):
    if config.M < 1:
        raise ValueError("step called on an extinct configuration")
    ev = np.empty(EVENT_SIZE, dtype=np.int64)
    _step(rng.state, params.p, params.topology_code, params.n, config.count, config.pos,
          config.head, config.nxt, config.prv, config.scal, ev)
    return StepEvent.from_array(ev)


def default_budget(n):
    return 10 * n * n


def run_to_extinction(params, rng=None, monitors=(), budget=None):
    """Step until no particles remain, feeding every event to ``monitors``.

    Monitors implement ``start(config, params)``, ``observe(config, event)``
    and ``finish(config)``; ``finish`` may return a dict of extra
    :class:`TraceStats` fields. Monitors see each event in registration order
    before the next step runs. Hitting ``budget`` (default ``10 n^2``) stops
    the run with ``truncated=True``.
    """
    if rng is None:
        rng = TrialRNG(params.seed)
    budget = default_budget(params.n) if budget is None else budget
    config = init_configuration(params, rng)
    for m in monitors:
        m.start(config, params)
    C = Xi = red_moves = 0
    truncated = False
    while config.M > 0:
        if config.t >= budget:
            truncated = True
            break
        ev = step(config, params, rng)
        C += ev.collided
        Xi += ev.bad_move
        red_moves += ev.mover_color == RED
        for m in monitors:
            m.observe(config, ev)
    fields = dict(T=config.t, C=C, Xi=Xi, A=config.A, truncated=truncated, red_moves=red_moves)
    for m in monitors:
        extra = m.finish(config)
        if extra:
            fields.update(extra)
    return TraceStats(**fields)
