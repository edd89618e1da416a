import numpy as np
import pytest

from arwlab.knn import LAYOUTS, SCHEDULES, SiteStacks, abelian_check, initial_layout, run_schedule, stationary_times
from arwlab.oracles import knn_stationary_bounds


@pytest.mark.parametrize("layout", LAYOUTS)
def test_initial_layouts_are_valid(layout):
    n = 9
    red, blue = initial_layout(n, layout, seed=4)
    assert red.sum() == n and len(blue) == n
    assert not np.any(red[blue] > 0)
    if layout != "random":
        assert np.all(blue >= n) and red[n:].sum() == 0


def test_unknown_layout():
    with pytest.raises(ValueError):
        stationary_times(4, 2, "diagonal")


def test_times_deterministic_and_trial_offset():
    a = stationary_times(20, 30, seed=3)
    assert np.array_equal(a, stationary_times(20, 30, seed=3))
    assert np.array_equal(a[10:], stationary_times(20, 20, seed=3, trial0=10))
    assert np.all(a >= 20)


def test_one_side_mean_matches_lower_bound():
    n = 32
    T = stationary_times(n, 20_000, "one_side", seed=1)
    lo, _ = knn_stationary_bounds(n)
    assert abs(T.mean() - lo) <= 4 * T.std() / np.sqrt(len(T))


def test_stacked_reds_take_quadratic_time():
    n = 16
    T = stationary_times(n, 20_000, "clustered", seed=2)
    assert abs(T.mean() - (2 * n * n - n)) <= 4 * T.std() / np.sqrt(len(T))


def test_random_layout_between_bounds():
    n = 64
    T = stationary_times(n, 5000, "random", seed=5)
    lo, up = knn_stationary_bounds(n)
    assert lo <= T.mean() <= up


@pytest.mark.parametrize("layout", LAYOUTS)
def test_order_independence(layout):
    rows = abelian_check(5, trials=30, layout=layout, seed=8)
    assert all(len(set(r.values())) == 1 for r in rows)
    assert set(rows[0]) == set(SCHEDULES)


def test_schedules_leave_same_reds():
    red, blue = initial_layout(6, "random", seed=1)
    stacks = SiteStacks(6, seed=1)
    outs = [run_schedule(red, blue, stacks.fresh(), s)[1] for s in SCHEDULES]
    assert all(np.array_equal(outs[0], o) for o in outs)
    assert outs[0].sum() == 0


def test_stacks_rewind():
    s = SiteStacks(3, seed=2)
    first = [s.pop(0) for _ in range(5)]
    assert all(3 <= v < 6 for v in first)
    assert [s.fresh().pop(0) for _ in range(1)] == first[:1]


def test_unknown_schedule():
    red, blue = initial_layout(3)
    with pytest.raises(ValueError):
        run_schedule(red, blue, SiteStacks(3), "lifo")
