import json
import math

import numpy as np
import pytest

from arwlab.core import InitSpec
from arwlab.oracles import (CONSTANTS_PATH, AlternatingTrialSpec, BiasedWalkSpec, OracleError, alternating_identity_check,
                            alternating_pmf, bake, bias_inequality_scan, biased_walk_solve, build_chain,
                            exact_extinction_expectation, harmonic, knn_stationary_bounds, load_constants,
                            random_walk_specs, two_x_minus_y_pmf, walk_bound_scan)

# ---------------------------------------------------------------- exact chain


def test_n1_is_two():
    assert exact_extinction_expectation(1) == pytest.approx(2.0, abs=1e-12)


def test_n1_bipartite_is_one():
    assert exact_extinction_expectation(1, "bipartite") == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("p", [0.5, 0.1])
def test_compressed_matches_uncompressed(n, p):
    a = exact_extinction_expectation(n, p=p)
    b = exact_extinction_expectation(n, p=p, compress=False)
    assert a == pytest.approx(b, rel=1e-12)


def test_n2_value_is_56_over_9():
    assert exact_extinction_expectation(2, p=0.5) == pytest.approx(56 / 9, rel=1e-12)


@pytest.mark.parametrize("init", [InitSpec(), InitSpec.clustered(), InitSpec.disjoint(1)])
@pytest.mark.parametrize("topology", ["complete", "bipartite"])
def test_solved_values_respect_mean_bound(init, topology):
    for n in (2, 3):
        v = exact_extinction_expectation(n, topology, init, p=0.3)
        assert 1.0 <= v <= 2 * n * n


def test_rows_sum_to_one():
    for topo in ("complete", "bipartite"):
        for n in (2, 3):
            chain = build_chain(n, topo, 0.3, start=[tuple([1] * n + [-1] * n)])
            assert chain.row_error < 1e-12


def test_state_cap_refusal():
    with pytest.raises(OracleError, match="cap of 20"):
        exact_extinction_expectation(3, max_states=20, compress=False)


def test_bad_p_rejected():
    with pytest.raises(OracleError):
        exact_extinction_expectation(1, p=0.7)


# ---------------------------------------------------------------- biased walk


def test_walk_k1_start0():
    r = biased_walk_solve(BiasedWalkSpec.uniform(1, 0.5, 0.25), start=0)
    assert r.hit_prob == 1.0 and r.hit_bound == 1.0


def test_walk_gamblers_ruin():
    r = biased_walk_solve(BiasedWalkSpec.uniform(2, 2 / 3, 1 / 3))
    assert r.hit_prob == pytest.approx(1 / 3, abs=1e-14)
    assert r.expected_time == pytest.approx(3.0, abs=1e-12)
    assert r.expected_time <= r.time_bound + 1e-12


def test_walk_closed_form_hit():
    for k in range(1, 15):
        r = biased_walk_solve(BiasedWalkSpec.uniform(k, 0.4, 0.2))
        assert r.hit_prob == pytest.approx(1 / (2**k - 1), rel=1e-10)


def test_walk_hold_scales_time():
    a = biased_walk_solve(BiasedWalkSpec.uniform(5, 0.6, 0.1)).expected_time
    b = biased_walk_solve(BiasedWalkSpec.uniform(5, 0.3, 0.05)).expected_time
    assert b == pytest.approx(2 * a, rel=1e-9)


@pytest.mark.parametrize("kw", [
    dict(k=0, up=(), down=(), hold=(), alpha=0.5),
    dict(k=1, up=(0.5,), down=(0.3,), hold=(0.2,), alpha=0.5),  # down > up/2
    dict(k=1, up=(0.5,), down=(0.2,), hold=(0.2,), alpha=0.5),  # sum != 1
    dict(k=1, up=(0.4,), down=(0.2,), hold=(0.4,), alpha=0.5),  # up < alpha
    dict(k=1, up=(0.8,), down=(0.2,), hold=(0.0,), alpha=0.8),  # alpha > 2/3
    dict(k=2, up=(0.5,), down=(0.2,), hold=(0.3,), alpha=0.5),  # wrong length
])
def test_walk_spec_rejected(kw):
    with pytest.raises(OracleError):
        BiasedWalkSpec(**kw)


def test_walk_floor_insensitive():
    for s in random_walk_specs(100, seed=3):
        assert biased_walk_solve(s).floor_sensitivity < 1e-9


def test_walk_scan_flags_violation():
    # an inadmissible walk smuggled past validation must be reported
    s = BiasedWalkSpec.uniform(3, 0.5, 0.25)
    object.__setattr__(s, "down", (0.5,) * 3)
    object.__setattr__(s, "hold", (0.0,) * 3)
    rep = walk_bound_scan([s])
    assert rep.hit_violations == 1 and not rep.ok


# ---------------------------------------------------------------- bias scan


def test_bias_scan_small_is_clean():
    assert bias_inequality_scan(64) == []


def test_bias_scan_cap():
    with pytest.raises(OracleError):
        bias_inequality_scan(513)


def test_good_stratum_would_violate():
    n, M = 100, 40
    B = M
    assert 2 * n * (M - B) < M * M + 4 * M * B + B * B


def test_seven_fold_spot_case():
    for n in (50, 200):
        for M in range(7, n + 1):
            for B in range(0, M // 7 + 1):
                assert 2 * n * (M - B) >= 12 / 7 * M * M - 1e-9 or M > n
                assert M * M + 4 * M * B + B * B <= 78 / 49 * M * M + 1e-9


# ---------------------------------------------------------------- K_{n,n}


def test_identity_example():
    assert alternating_identity_check(AlternatingTrialSpec(0.3, 0.2), 50) <= 1e-12


def test_identity_p2_zero_mean():
    n, m = 100, 7
    spec = AlternatingTrialSpec(m / n, 0.0)
    assert spec.mean == pytest.approx(2 * n / m - 1, rel=1e-12)
    pmf = alternating_pmf(spec, 4000)
    assert float(np.sum(np.arange(1, 4001) * pmf)) == pytest.approx(2 * n / m - 1, rel=1e-9)


def test_identity_equal_probs_series():
    spec = AlternatingTrialSpec(0.25, 0.25)
    pmf = two_x_minus_y_pmf(spec, 600)
    assert float(np.sum(np.arange(1, 601) * pmf)) == pytest.approx(spec.mean, abs=1e-12)


def test_identity_rejects_zero():
    with pytest.raises(OracleError):
        AlternatingTrialSpec(0.0, 0.0)


def test_knn_lower_closed_form():
    for n in (3, 10, 1000):
        lo, up = knn_stationary_bounds(n)
        assert lo == pytest.approx(2 * n * harmonic(n) - n, rel=1e-12)
        assert up > lo


def test_knn_gap_is_n_loglog():
    gaps = []
    for e in range(10, 17):
        n = 2**e
        lo, up = knn_stationary_bounds(n)
        gaps.append((up - lo) / (n * math.log(math.log(n))))
    assert max(gaps) < 3.0 and max(gaps) / min(gaps) < 1.5


def test_knn_ratio_tends_to_one():
    r = [knn_stationary_bounds(2**e)[0] / (2 * 2**e * math.log(2**e)) for e in (8, 12, 16)]
    assert r[0] > r[1] > r[2] > 1.0


def test_knn_small_n_rejected():
    with pytest.raises(OracleError):
        knn_stationary_bounds(2)


# ---------------------------------------------------------------- bake


def test_bake_reproduces_frozen_constants(tmp_path):
    fresh = bake(tmp_path / "c.json")
    frozen = json.loads(CONSTANTS_PATH.read_text())
    assert set(fresh["constants"]) == set(frozen["constants"])
    for name, entry in frozen["constants"].items():
        new = fresh["constants"][name]
        assert new["parameters"] == entry["parameters"]
        assert abs(new["value"] - entry["value"]) <= entry["tolerance"]
        assert {"oracle", "parameters", "value", "tolerance"} <= set(entry)


def test_load_constants():
    c = load_constants()
    assert c["exact_T_n1_complete"] == 2.0
    assert c["exact_T_n2_complete_default_p0.5"] == pytest.approx(56 / 9)
