import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numba import njit

from arwlab.core import (BLUE, RED, ConfigError, Configuration, InitSpec, SimParams, _init_config, _step,
                         init_configuration, run_to_extinction, step)
from arwlab.rng import TrialRNG, seed_state, stream_key


def _init(n, init=InitSpec(), topology="complete", seed=0, trial=0):
    params = SimParams(n, 0.5, topology, init, seed)
    return params, init_configuration(params, TrialRNG(seed, 0, trial))


# ---------------------------------------------------------------- params & init


@pytest.mark.parametrize("kw", [dict(n=0), dict(n=3, p=0.0), dict(n=3, p=0.51), dict(n=3, topology="ring"),
                                dict(n=2.5)])
def test_params_rejected(kw):
    with pytest.raises(ValueError):
        SimParams(**kw)


def test_q_is_exact_complement():
    assert SimParams(5, 0.3).q == 1.0 - 0.3


def test_default_n1():
    _, c = _init(1)
    c.check()
    assert (c.M, c.R, c.B, c.A) == (1, 1, 1, 0)
    assert c.red_positions[0] != c.blue_positions[0]


def test_clustered_n4():
    _, c = _init(4, InitSpec.clustered())
    assert c.red_count[0] == 4 and c.R == 1 and c.A == 3
    assert c.B == 4


def test_disjoint_n100():
    _, c = _init(100, InitSpec.disjoint(10))
    c.check()
    assert (c.A, c.R, c.B) == (10, 90, 100)


def test_default_is_one_per_vertex():
    _, c = _init(50, seed=3)
    assert np.all(c.red_count + c.blue_count == 1)


def test_disjoint_given_sites():
    init = InitSpec.disjoint(1, red_sites=[0, 1], blue_sites=[2, 3, 4])
    _, c = _init(3, init)
    assert c.red_count[:2].sum() == 3 and np.all(c.blue_count[2:5] == 1)


def test_explicit():
    init = InitSpec.explicit([(0, "red", 2), (3, "blue", 1), (1, "b", 1)])
    _, c = _init(2, init)
    c.check()
    assert (c.R, c.B, c.A) == (1, 2, 1)


@pytest.mark.parametrize("init", [
    InitSpec.explicit([(0, "red", 1), (0, "blue", 1), (1, "red", 1), (2, "blue", 1)]),  # mixed site
    InitSpec.explicit([(9, "red", 2), (1, "blue", 2)]),  # out of range
    InitSpec.explicit([(0, "red", 1), (1, "blue", 2)]),  # unequal totals
    InitSpec.explicit([(0, "green", 2), (1, "blue", 2)]),
    InitSpec.disjoint(2),  # A must be < n
    InitSpec.disjoint(0, red_sites=[0, 1], blue_sites=[1, 2]),  # overlap
    InitSpec.disjoint(0, red_sites=[0], blue_sites=[1, 2]),  # wrong length
])
def test_bad_init_rejected(init):
    with pytest.raises(ConfigError):
        _init(2, init)


@pytest.mark.parametrize("text,label", [("default", "default"), ("clustered", "clustered"), ("disjoint:3", "disjoint:3")])
def test_parse(text, label):
    assert InitSpec.parse(text).label == label


@pytest.mark.parametrize("text", ["", "disjoint:x", "spread"])
def test_parse_rejects(text):
    with pytest.raises(ConfigError):
        InitSpec.parse(text)


# ---------------------------------------------------------------- dynamics


def test_step_on_extinct_configuration():
    params, c = _init(1)
    rng = TrialRNG(1)
    while c.M:
        step(c, params, rng)
    with pytest.raises(ValueError):
        step(c, params, rng)


configs = st.tuples(
    st.integers(1, 12),
    st.sampled_from([0.5, 0.3, 0.05]),
    st.sampled_from(["complete", "bipartite"]),
    st.sampled_from(["default", "clustered", "disjoint"]),
    st.integers(0, 2**32),
)


@given(configs)
@settings(max_examples=60, deadline=None)
def test_invariants_every_step(cfg):
    n, p, topo, variant, seed = cfg
    init = InitSpec.disjoint(n // 3) if variant == "disjoint" else InitSpec(variant)
    params = SimParams(n, p, topo, init, seed)
    rng = TrialRNG(seed)
    c = init_configuration(params, rng)
    c.check()
    while c.M > 0:
        M, R, B = c.M, c.R, c.B
        ev = step(c, params, rng)
        c.check()
        assert (ev.R_pre, ev.B_pre) == (R, B)
        assert (ev.R_post, ev.B_post) == (c.R, c.B)
        assert c.M == M - ev.collided
        assert abs(ev.R_star - ev.R_pre) <= 1 and abs(ev.B_star - ev.B_pre) <= 1
        assert abs(ev.R_post - ev.R_star) <= 1 and abs(ev.B_post - ev.B_star) <= 1
        if topo == "bipartite":
            assert (ev.source_vertex < n) != (ev.target_vertex < n)
        if ev.bad_move:
            assert ev.mover_color == RED and ev.R_star in (ev.R_pre, ev.R_pre - 1)
        if ev.source_vertex == ev.target_vertex:
            assert not ev.collided and not ev.bad_move and ev.R_star == R and ev.B_star == B


def test_conditional_step_cases():
    """Check the forced-transition cases whenever they occur in long runs."""
    seen = {"blue_hits_single_red": 0, "red_to_empty_from_single": 0}
    for seed in range(40):
        params = SimParams(30, 0.5, seed=seed)
        rng = TrialRNG(seed)
        c = init_configuration(params, rng)
        while c.M > 0:
            before = c.copy()
            ev = step(c, params, rng)
            src, tgt = ev.source_vertex, ev.target_vertex
            if ev.mover_color == BLUE and before.red_count[tgt] == 1:
                seen["blue_hits_single_red"] += 1
                assert ev.collided and c.M == before.M - 1 and ev.R_post == ev.R_pre - 1
                emptied = before.blue_count[src] == 1
                assert ev.B_post == ev.B_pre - emptied
            if (ev.mover_color == RED and src != tgt and before.red_count[src] == 1
                    and before.red_count[tgt] == 0 and before.blue_count[tgt] == 0):
                seen["red_to_empty_from_single"] += 1
                assert ev.R_post == ev.R_pre and not ev.bad_move and not ev.collided
    assert all(v > 50 for v in seen.values())


def test_collision_probability_n1():
    params = SimParams(1, 0.37)
    rng = TrialRNG(21)
    hits = 0
    steps = 100_000
    c = init_configuration(params, rng)
    for _ in range(steps):
        if c.M == 0:
            c = init_configuration(params, rng)
        hits += step(c, params, rng).collided
    sigma = np.sqrt(steps * 0.25)
    assert abs(hits - steps / 2) <= 3 * sigma


@njit
def _target_counts(n, p, samples, seed):
    V = 2 * n
    counts = np.zeros((2, V), dtype=np.int64)
    cnt = np.zeros((2, V), dtype=np.int64)
    pos = np.zeros((2, n), dtype=np.int64)
    head = np.full((2, V), -1, dtype=np.int64)
    nxt = np.full((2, n), -1, dtype=np.int64)
    prv = np.full((2, n), -1, dtype=np.int64)
    scal = np.zeros(4, dtype=np.int64)
    ev = np.zeros(11, dtype=np.int64)
    s = np.zeros(4, dtype=np.uint64)
    tmpl = np.zeros((2, V), dtype=np.int64)
    empty = np.zeros(0, dtype=np.int64)
    got = 0
    trial = 0
    while got < samples:
        seed_state(stream_key(np.uint64(seed), np.uint64(0), np.uint64(trial)), s)
        trial += 1
        _init_config(0, n, 0, tmpl, empty, empty, s, cnt, pos, head, nxt, prv, scal)
        while scal[0] > 0 and got < samples:
            _step(s, p, 0, n, cnt, pos, head, nxt, prv, scal, ev)
            counts[ev[0], ev[2]] += 1
            got += 1
    return counts


def test_target_uniform_chi_square():
    from scipy.stats import chisquare

    counts = _target_counts(8, 0.3, 1_000_000, 99)
    assert counts.sum() == 1_000_000
    for c in (RED, BLUE):
        assert chisquare(counts[c]).pvalue > 1e-4
    # colour choice itself is Bernoulli(p)
    reds = counts[RED].sum()
    assert abs(reds - 300_000) <= 4 * np.sqrt(1_000_000 * 0.21)


# ---------------------------------------------------------------- runs


def test_run_to_extinction_counts():
    params = SimParams(40, 0.2, seed=4)
    st_ = run_to_extinction(params)
    assert not st_.truncated and st_.C == 40 and st_.Xi <= st_.red_moves


def test_budget_truncates():
    st_ = run_to_extinction(SimParams(40, seed=4), budget=10)
    assert st_.truncated and st_.T == 10


def test_run_is_deterministic():
    a = run_to_extinction(SimParams(30, 0.3, seed=8))
    b = run_to_extinction(SimParams(30, 0.3, seed=8))
    assert a.same_as(b)


class _Order:
    def __init__(self, log, tag):
        self.log, self.tag = log, tag

    def start(self, config, params):
        pass

    def observe(self, config, ev):
        self.log.append((config.t, self.tag))

    def finish(self, config):
        return {}


def test_monitors_in_registration_order():
    log = []
    run_to_extinction(SimParams(5, seed=1), monitors=[_Order(log, "a"), _Order(log, "b")])
    assert [tag for _, tag in log] == ["a", "b"] * (len(log) // 2)
    assert [t for t, _ in log[::2]] == list(range(1, len(log) // 2 + 1))


def test_configuration_copy_is_independent():
    params, c = _init(6, seed=2)
    d = c.copy()
    step(c, params, TrialRNG(2))
    assert d.t == 0 and c.t == 1
    d.check()


def test_check_catches_corruption():
    _, c = _init(4)
    v = int(np.flatnonzero(c.red_count)[0])
    c.blue_count[v] += 1
    with pytest.raises(AssertionError):
        c.check()


def test_empty_configuration_shape():
    c = Configuration(3)
    assert c.count.shape == (2, 6) and c.M == 0
