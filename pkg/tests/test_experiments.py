import json

import numpy as np
import pytest

from arwlab.core import InitSpec, SimParams
from arwlab.experiments import (RECORD_COLUMNS, ExperimentIOError, ExperimentPlan, PlanEntry, asymptotic_sweep, execute,
                                knn_stationary_run, read_records_csv, rerun_trial, run_plan, slow_clustered_scenario,
                                worker_count)


def _plan(**kw):
    entries = [PlanEntry(SimParams(40, 0.5), 300), PlanEntry(SimParams(25, 0.2, init=InitSpec.clustered()), 60)]
    return ExperimentPlan(entries, master_seed=11, **kw)


def test_workers_do_not_change_results():
    plan = _plan()
    a, b = execute(plan, 1), execute(plan, 2)
    for x, y in zip(a, b):
        assert np.array_equal(x.rows, y.rows) and np.array_equal(x.keys, y.keys)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("ARWLAB_WORKERS", "3")
    assert worker_count() == 3
    assert worker_count(1) == 1
    monkeypatch.setenv("ARWLAB_WORKERS", "zero")
    with pytest.raises(ValueError):
        worker_count()


def test_csv_round_trip_and_summary(tmp_path):
    plan = _plan()
    res = run_plan(plan, tmp_path, "csv", workers=1)
    text = (tmp_path / "records.csv").read_text()
    assert text.splitlines()[0].split(",") == list(RECORD_COLUMNS)
    back = read_records_csv(text)
    assert len(back) == 360
    for e, es in enumerate(res.summary.entries):
        Ts = [r["T"] for r in back if r["entry"] == e]
        assert es.trials == len(Ts)
        assert es.mean_T == pytest.approx(np.mean(Ts), rel=1e-12)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["manifest"]["plan_hash"] == plan.digest()
    assert not (tmp_path / "series.csv").exists()


def test_json_format(tmp_path):
    run_plan(_plan(), tmp_path, "json", workers=1)
    doc = json.loads((tmp_path / "records.json").read_text())
    assert len(doc["records"]) == 360 and "plan_hash" in doc["manifest"]


def test_bad_format(tmp_path):
    with pytest.raises(ValueError):
        run_plan(_plan(), tmp_path, "xml")


def test_rerun_single_trial_matches_record():
    plan = _plan()
    res = run_plan(plan, workers=1)
    for r in (res.records[7], res.records[-3]):
        st = rerun_trial(plan, r["entry"], r["trial"])
        assert (st.T, st.C, st.Xi, st.A, st.L) == (r["T"], r["C"], r["Xi"], r["A"], r["L"])


def test_unwritable_output_reports_partial(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ExperimentIOError) as ei:
        run_plan(_plan(), blocker, workers=1)
    assert ei.value.partial["written"] == [] and ei.value.partial["missing"]


def test_series_written_when_decimating(tmp_path):
    plan = ExperimentPlan.single(SimParams(20, seed=1), 3, decimate=10)
    run_plan(plan, tmp_path, workers=1)
    lines = (tmp_path / "series.csv").read_text().splitlines()
    assert lines[0] == "entry,trial,t,M,R,B,level" and len(lines) > 4


def test_digest_depends_on_plan():
    assert _plan().digest() == _plan().digest()
    assert _plan().digest() != _plan(budget=100).digest()


@pytest.mark.parametrize("build", [
    lambda: ExperimentPlan(()),
    lambda: PlanEntry(SimParams(5), 0),
    lambda: ExperimentPlan((PlanEntry(SimParams(5), 1),), w_exponent=0.7),
])
def test_bad_plans(build):
    with pytest.raises(ValueError):
        build()


def test_sweep_flags_and_table():
    r = asymptotic_sweep([64, 256], [0.5, 0.2], trials=100, seed=3, workers=1)
    assert len(r.rows) == 4 and r.in_band
    assert "ratio" in r.table()
    assert all(row.ci_low < row.ratio < row.ci_high for row in r.rows)
    with pytest.raises(ValueError):
        asymptotic_sweep([256, 64])


def test_slow_scenario_small():
    rep = slow_clustered_scenario(256, trials=40, seed=1, workers=1)
    assert rep.truncated == 40 and rep.ratio is None
    assert rep.events_ok


def test_slow_scenario_fast_reds_full_run_is_in_band():
    rep = slow_clustered_scenario(512, trials=60, seed=2, p=0.5, full=True, workers=1)
    assert rep.truncated == 0 and 0.85 <= rep.ratio <= 1.3


def test_knn_run_small():
    rep = knn_stationary_run(128, trials=300, seed=1, abelian_trials=10)
    assert rep.abelian_ok and rep.lower_ok and rep.lower < rep.upper
    with pytest.raises(ValueError):
        knn_stationary_run(1)
