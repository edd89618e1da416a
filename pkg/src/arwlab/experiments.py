"""Batch harness: plans, parallel execution, summaries, serialization, scenarios.

Every trial owns the random stream keyed by ``(master_seed, entry, trial)``.
Trials are cut into fixed-size chunks whatever the worker count, and chunk
results are merged in index order, so outputs are a pure function of the
plan and the master seed.
"""

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import InitSpec, SimParams
from .instrumentation import AUDIT_SIZE, WFunction, bias_audit
from .kernel import (O_A, O_C, O_L, O_LEVEL_UPS, O_MAX_LEVEL, O_T, O_TAU_OUT, O_TBLUE, O_TLATE, O_TOK,
                     O_TRED, O_TRUNC, O_VIOL, O_WATCH, O_XI, run_trials, simulate)
from .knn import abelian_check, stationary_times
from .oracles import knn_stationary_bounds
from .records import TauOutcome

CHUNK = 250
WORKERS_ENV = "ARWLAB_WORKERS"

# acceptance bands for ratio = mean T / (2 n ln n)
RATIO_BAND = (0.85, 1.3)
KNN_BAND = (0.8, 1.2)

RECORD_COLUMNS = ("entry", "trial", "n", "p", "topology", "init_variant", "seed", "stream_key",
                  "T", "T_blue", "T_red", "T_late", "T_ok", "tau_outcome", "C", "Xi", "A", "L", "truncated")
_INT_COLUMNS = {"T": O_T, "T_blue": O_TBLUE, "T_red": O_TRED, "T_late": O_TLATE, "T_ok": O_TOK,
                "C": O_C, "Xi": O_XI, "A": O_A}


def nlogn(n):
    return 2.0 * n * math.log(n)


def worker_count(workers=None):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


# ---------------------------------------------------------------- plans


@dataclass(frozen=True)
class PlanEntry:
    params: SimParams
    trials: int

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trial count must be >= 1, got {self.trials}")


@dataclass(frozen=True)
class ExperimentPlan:
    """What to run. ``SimParams.seed`` is ignored in favour of ``master_seed``."""

    entries: tuple
    master_seed: int = 0
    w_exponent: float = 1.0 / 3.0
    budget: int | None = None
    audit: bool = False
    decimate: int = 0
    watch_vertex: int = -1
    watch_horizon: int = 0

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise ValueError("a plan needs at least one entry")
        WFunction(self.w_exponent)

    @classmethod
    def single(cls, params, trials, **kw):
        return cls((PlanEntry(params, trials),), master_seed=params.seed, **kw)

    def describe(self):
        return {
            "entries": [
                {"n": e.params.n, "p": e.params.p, "topology": e.params.topology,
                 "init": _init_desc(e.params.init), "trials": e.trials}
                for e in self.entries
            ],
            "master_seed": self.master_seed, "w_exponent": self.w_exponent, "budget": self.budget,
            "audit": self.audit, "decimate": self.decimate,
            "watch_vertex": self.watch_vertex, "watch_horizon": self.watch_horizon,
        }

    def digest(self):
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def entry_params(self, i):
        return dataclasses.replace(self.entries[i].params, seed=self.master_seed)


def _init_desc(init):
    d = {"variant": init.variant, "a": init.a}
    if init.red_sites or init.blue_sites:
        d["red_sites"] = list(init.red_sites)
        d["blue_sites"] = list(init.blue_sites)
    if init.entries:
        d["entries"] = [list(x) for x in init.entries]
    return d


# ---------------------------------------------------------------- execution


def _run_chunk(task):
    plan, e, trial0, count = task
    params = plan.entry_params(e)
    w = WFunction(plan.w_exponent)
    if plan.decimate > 0:
        rows, keys, series = [], [], []
        audit = np.zeros(AUDIT_SIZE) if plan.audit else None
        from .kernel import row_from_stats
        from .rng import TrialRNG

        for t in range(trial0, trial0 + count):
            rng = TrialRNG(plan.master_seed, e, t)
            st = simulate(params, t, e, rng=rng, w=w, budget=plan.budget, audit=audit,
                          watch_vertex=plan.watch_vertex, watch_horizon=plan.watch_horizon,
                          decimate=plan.decimate)
            rows.append(row_from_stats(st))
            keys.append(rng.key)
            series.append(st.series)
        return e, trial0, np.array(rows), np.array(keys, dtype=np.uint64), audit, series
    batch = run_trials(params, count, entry=e, trial0=trial0, w=w, budget=plan.budget, audit=plan.audit,
                       watch_vertex=plan.watch_vertex, watch_horizon=plan.watch_horizon)
    return e, trial0, batch.rows, batch.keys, batch.audit, None


@dataclass
class EntryResult:
    """Raw kernel rows for one plan entry, in trial order."""

    params: SimParams
    rows: np.ndarray
    keys: np.ndarray
    audit: np.ndarray | None = None
    series: list | None = None


def execute(plan, workers=None):
    """Run every trial of ``plan``; returns one :class:`EntryResult` per entry."""
    tasks = [(plan, e, t0, min(CHUNK, entry.trials - t0))
             for e, entry in enumerate(plan.entries) for t0 in range(0, entry.trials, CHUNK)]
    nw = min(worker_count(workers), len(tasks))
    if nw <= 1:
        done = [_run_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            done = list(pool.map(_run_chunk, tasks))
    done.sort(key=lambda r: (r[0], r[1]))
    results = []
    for e, entry in enumerate(plan.entries):
        mine = [r for r in done if r[0] == e]
        audit = None
        if plan.audit:
            audit = np.zeros(AUDIT_SIZE)
            for r in mine:  # ordered reduction keeps float sums reproducible
                audit += r[4]
        series = None
        if plan.decimate > 0:
            series = [s for r in mine for s in r[5]]
        results.append(EntryResult(plan.entry_params(e), np.concatenate([r[2] for r in mine]),
                                   np.concatenate([r[3] for r in mine]), audit, series))
    return results


# ---------------------------------------------------------------- records & summaries


def records(plan, results):
    """Flat per-trial dicts in (entry, trial) order."""
    out = []
    for e, res in enumerate(results):
        prm = res.params
        for t, (row, key) in enumerate(zip(res.rows, res.keys)):
            rec = {"entry": e, "trial": t, "n": prm.n, "p": prm.p, "topology": prm.topology,
                   "init_variant": prm.init.label, "seed": plan.master_seed, "stream_key": f"{int(key):016x}"}
            for name, idx in _INT_COLUMNS.items():
                rec[name] = int(row[idx])
            rec["tau_outcome"] = TauOutcome(int(row[O_TAU_OUT])).label
            rec["L"] = None if row[O_L] < 0 else int(row[O_L])
            rec["truncated"] = bool(row[O_TRUNC])
            out.append({k: rec[k] for k in RECORD_COLUMNS})
    return out


def _mean(xs):
    return float(sum(xs) / len(xs)) if len(xs) else None


@dataclass
class EntrySummary:
    n: int
    p: float
    topology: str
    init_variant: str
    trials: int
    mean_T: float
    stderr_T: float
    min_T: int
    max_T: int
    ratio: float
    ratio_stderr: float
    mean_T_blue: float
    mean_T_red: float
    mean_T_late: float
    mean_T_ok: float
    mean_C: float
    mean_Xi: float
    mean_A: float
    mean_L: float | None
    tau_outcomes: dict
    failures: int
    truncated: int
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_records(cls, recs, extra=None):
        """Aggregate per-trial record dicts of a single entry."""
        r0 = recs[0]
        T = np.array([r["T"] for r in recs], dtype=float)
        k = len(recs)
        se = float(T.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0
        scale = nlogn(r0["n"]) if r0["n"] > 1 else float("nan")
        outcomes = {o.label: 0 for o in TauOutcome}
        for r in recs:
            outcomes[r["tau_outcome"]] += 1
        failures = sum(v for lab, v in outcomes.items() if lab.startswith("failure"))
        Ls = [r["L"] for r in recs if r["L"] is not None]
        return cls(
            n=r0["n"], p=r0["p"], topology=r0["topology"], init_variant=r0["init_variant"], trials=k,
            mean_T=_mean([r["T"] for r in recs]), stderr_T=se,
            min_T=int(T.min()), max_T=int(T.max()),
            ratio=_mean([r["T"] for r in recs]) / scale, ratio_stderr=se / scale,
            mean_T_blue=_mean([r["T_blue"] for r in recs]), mean_T_red=_mean([r["T_red"] for r in recs]),
            mean_T_late=_mean([r["T_late"] for r in recs]), mean_T_ok=_mean([r["T_ok"] for r in recs]),
            mean_C=_mean([r["C"] for r in recs]), mean_Xi=_mean([r["Xi"] for r in recs]),
            mean_A=_mean([r["A"] for r in recs]), mean_L=_mean(Ls),
            tau_outcomes=outcomes, failures=failures, truncated=sum(r["truncated"] for r in recs),
            extra=dict(extra or {}),
        )

    def as_dict(self):
        return dataclasses.asdict(self)


def _proof_extras(plan, res):
    """Raw analogues of the excursion bounds, reported but never asserted."""
    prm = res.params
    w = WFunction(plan.w_exponent)(prm.n) if prm.n > 1 else 0.0
    ups = int(res.rows[:, O_LEVEL_UPS].sum())
    ex = {
        "mean_level_ups": float(res.rows[:, O_LEVEL_UPS].mean()),
        "max_level": int(res.rows[:, O_MAX_LEVEL].max()),
        "steps_per_level_up": float(res.rows[:, O_TRED].sum() / ups) if ups else None,
        "excursion_bound": 2.0 / prm.p * (1.0 + w),
        "level_up_bound": (2.0 * prm.q * prm.n + float(res.rows[:, O_A].mean())) * w,
        "level_return_violations": int(res.rows[:, O_VIOL].sum()),
        "mean_watch_events": float(res.rows[:, O_WATCH].mean()),
    }
    if res.audit is not None:
        ex["audit"] = [dataclasses.asdict(c) for c in bias_audit(res.audit)]
    return ex


@dataclass
class ExperimentSummary:
    manifest: dict
    entries: list

    def as_dict(self):
        return {"manifest": self.manifest, "entries": [e.as_dict() for e in self.entries]}

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"


def manifest(plan):
    return {
        "tool": "arwlab", "tool_version": __version__, "master_seed": plan.master_seed,
        "plan_hash": plan.digest(), "plan": plan.describe(), "chunk": CHUNK,
        "trial_counts": "fixed by pilot runs; no analytic variance guidance",
    }


@dataclass
class PlanResult:
    summary: ExperimentSummary
    records: list
    results: list
    files: list = field(default_factory=list)


def summarize(plan, results, recs=None):
    recs = records(plan, results) if recs is None else recs
    entries = []
    for e, res in enumerate(results):
        mine = [r for r in recs if r["entry"] == e]
        entries.append(EntrySummary.from_records(mine, _proof_extras(plan, res)))
    return ExperimentSummary(manifest(plan), entries)


# ---------------------------------------------------------------- serialization


class ExperimentIOError(OSError):
    """Writing outputs failed; ``partial`` lists the files that were written."""

    def __init__(self, msg, partial):
        super().__init__(msg)
        self.partial = partial


def records_csv(recs):
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=RECORD_COLUMNS, lineterminator="\n")
    wr.writeheader()
    for r in recs:
        wr.writerow({k: ("" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k]))
                     for k in RECORD_COLUMNS})
    return buf.getvalue()


def read_records_csv(text):
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        r = dict(row)
        for k in ("entry", "trial", "n", "seed", "T", "T_blue", "T_red", "T_late", "T_ok", "C", "Xi", "A"):
            r[k] = int(r[k])
        r["p"] = float(r["p"])
        r["L"] = int(r["L"]) if r["L"] else None
        r["truncated"] = r["truncated"] == "True"
        out.append(r)
    return out


def records_json(plan, recs):
    return json.dumps({"manifest": manifest(plan), "records": recs}, indent=1) + "\n"


def series_csv(results):
    buf = io.StringIO()
    buf.write("entry,trial,t,M,R,B,level\n")
    for e, res in enumerate(results):
        for t, s in enumerate(res.series or []):
            for row in s:
                buf.write(f"{e},{t}," + ",".join(str(int(x)) for x in row) + "\n")
    return buf.getvalue()


def write_outputs(plan, result, out_dir, fmt="csv"):
    """Write records, summary and (if any) series; returns the paths written."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be csv or json, got {fmt!r}")
    out = Path(out_dir)
    files = {}
    files[f"records.{fmt}"] = records_csv(result.records) if fmt == "csv" else records_json(plan, result.records)
    files["summary.json"] = result.summary.to_json()
    if plan.decimate > 0:
        files["series.csv"] = series_csv(result.results)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            (out / name).write_text(text)
            written.append(str(out / name))
    except OSError as exc:
        partial = {"written": written, "missing": [str(out / n) for n in files if str(out / n) not in written],
                   "error": str(exc), "plan_hash": plan.digest()}
        try:
            (out / "manifest.partial.json").write_text(json.dumps(partial, indent=2) + "\n")
        except OSError:
            pass
        raise ExperimentIOError(f"could not write outputs to {out}: {exc}", partial) from exc
    return written


def run_plan(plan, out_dir=None, fmt="csv", workers=None):
    """Run, aggregate and (optionally) write a plan."""
    results = execute(plan, workers)
    recs = records(plan, results)
    res = PlanResult(summarize(plan, results, recs), recs, results)
    if out_dir is not None:
        res.files = write_outputs(plan, res, out_dir, fmt)
    return res


def rerun_trial(plan, entry, trial):
    """Re-run one trial of a plan in isolation."""
    return simulate(plan.entry_params(entry), trial, entry, w=WFunction(plan.w_exponent), budget=plan.budget)


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepRow:
    n: int
    p: float
    trials: int
    mean_T: float
    stderr_T: float
    ratio: float
    ratio_stderr: float
    ci_low: float
    ci_high: float
    residual: float  # (mean T - 2 n ln n) / (n (ln n)^(2/3))
    residual_stderr: float
    failures: int
    truncated: int


@dataclass
class SweepResult:
    rows: list
    z: float
    non_monotone: list  # (p, n_small, n_large) where the ratio rose beyond noise
    speed_mismatch: list  # (n, p_a, p_b) with non-overlapping intervals
    summary: ExperimentSummary
    results: list = field(default_factory=list, repr=False)

    @property
    def in_band(self):
        lo, hi = RATIO_BAND
        return all(lo <= r.ratio <= hi for r in self.rows)

    def table(self):
        head = f"{'n':>8} {'p':>6} {'trials':>7} {'mean T':>12} {'ratio':>8} {'95% CI':>19} {'residual':>9}"
        lines = [head]
        for r in self.rows:
            lines.append(f"{r.n:>8d} {r.p:>6.3g} {r.trials:>7d} {r.mean_T:>12.1f} {r.ratio:>8.4f} "
                         f"[{r.ci_low:.4f}, {r.ci_high:.4f}] {r.residual:>9.4f}")
        lines.append(f"non-monotone: {self.non_monotone or 'none'}; speed mismatch: {self.speed_mismatch or 'none'}")
        return "\n".join(lines)


def _overlap(a, b):
    return a.ci_low <= b.ci_high and b.ci_low <= a.ci_high


def asymptotic_sweep(n_list, p_list=(0.5,), trials=200, seed=0, init=None, w_exponent=1.0 / 3.0,
                     z=1.96, workers=None):
    """Ratio table over ``n_list x p_list`` with confidence intervals and flags."""
    n_list = list(n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be strictly increasing")
    init = InitSpec() if init is None else init
    entries = [PlanEntry(SimParams(n, p, init=init), trials) for p in p_list for n in n_list]
    plan = ExperimentPlan(entries, master_seed=seed, w_exponent=w_exponent)
    res = run_plan(plan, workers=workers)
    rows = []
    for es in res.summary.entries:
        n = es.n
        scale = n * math.log(n) ** (2.0 / 3.0)
        rows.append(SweepRow(n, es.p, es.trials, es.mean_T, es.stderr_T, es.ratio, es.ratio_stderr,
                             es.ratio - z * es.ratio_stderr, es.ratio + z * es.ratio_stderr,
                             (es.mean_T - nlogn(n)) / scale, es.stderr_T / scale, es.failures, es.truncated))
    by_p = {p: [r for r in rows if r.p == p] for p in p_list}
    non_mono = [(p, a.n, b.n) for p, rs in by_p.items() for a, b in zip(rs, rs[1:])
                if b.ci_low > a.ci_high]
    mismatch = []
    for n in n_list:
        at = [r for r in rows if r.n == n]
        for i in range(len(at)):
            for j in range(i + 1, len(at)):
                if not _overlap(at[i], at[j]):
                    mismatch.append((n, at[i].p, at[j].p))
    return SweepResult(rows, z, non_mono, mismatch, res.summary, res.results)


# ---------------------------------------------------------------- scenarios


@dataclass
class SlowClusteredReport:
    n: int
    p: float
    trials: int
    horizon: int  # floor(3 n ln n)
    frac_beyond: float  # trials with T > 3 n ln n
    events_mean: float
    events_min: int
    events_max: int
    events_prediction: float  # 3 p n ln n
    events_tolerance: float  # 5 sqrt(n ln n)
    ratio: float | None  # only when runs go to extinction
    max_T: int
    truncated: int

    @property
    def events_ok(self):
        return (abs(self.events_min - self.events_prediction) <= self.events_tolerance
                and abs(self.events_max - self.events_prediction) <= self.events_tolerance)

    @property
    def slow_ok(self):
        return self.frac_beyond >= 0.99


def slow_clustered_scenario(n, trials=200, seed=0, p=None, full=False, workers=None):
    """All reds stacked on vertex 0 with a slow red speed (default ``1 / (4 ln n)``).

    Counts steps before ``3 n ln n`` in which a red moves or a blue lands on
    vertex 0. Unless ``full``, runs stop one step past the horizon, which is
    enough to tell whether ``T`` exceeds it.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    L = math.log(n)
    p = 1.0 / (4.0 * L) if p is None else p
    horizon = math.floor(3 * n * L)
    plan = ExperimentPlan((PlanEntry(SimParams(n, p, init=InitSpec.clustered()), trials),), master_seed=seed,
                          budget=None if full else horizon + 1, watch_vertex=0, watch_horizon=horizon)
    res = execute(plan, workers)[0]
    T = res.rows[:, O_T]
    ev = res.rows[:, O_WATCH]
    done = res.rows[:, O_TRUNC] == 0
    return SlowClusteredReport(
        n=n, p=p, trials=trials, horizon=horizon, frac_beyond=float(np.mean(T > 3 * n * L)),
        events_mean=float(ev.mean()), events_min=int(ev.min()), events_max=int(ev.max()),
        events_prediction=3 * p * n * L, events_tolerance=5 * math.sqrt(n * L),
        ratio=float(T.mean() / nlogn(n)) if done.all() else None,
        max_T=int(T.max()), truncated=int((~done).sum()),
    )


@dataclass
class KnnReport:
    n: int
    layout: str
    trials: int
    mean_T: float
    stderr_T: float
    ratio: float
    lower: float
    upper: float
    abelian_n: int
    abelian_trials: int
    abelian_ok: bool

    @property
    def lower_ok(self):
        return self.mean_T >= self.lower - 3 * self.stderr_T

    @property
    def band_ok(self):
        return KNN_BAND[0] <= self.ratio <= KNN_BAND[1]


def knn_stationary_run(n, trials=200, layout="random", seed=0, abelian_n=3, abelian_trials=50):
    """Stationary-red run on ``K_{n,n}`` plus an order-independence check at ``abelian_n``."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    T = stationary_times(n, trials, layout, seed)
    mean = float(T.mean())
    se = float(T.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    lo, up = knn_stationary_bounds(n) if n >= 3 else (float("nan"), float("nan"))
    rows = abelian_check(abelian_n, abelian_trials, layout, seed)
    ok = all(len(set(r.values())) == 1 for r in rows)
    return KnnReport(n, layout, trials, mean, se, mean / nlogn(n), lo, up, abelian_n, abelian_trials, ok)
