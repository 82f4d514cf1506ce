"""Repeated optimization studies and the tables computed from their run files.

A study runs ``reps x variants`` optimizations of one problem.  Within a
repetition every variant starts from the same initial design and uses the same
candidate sets and u-nodes.  Each run is written to
``<out>/runs/<VARIANT>_rep<NN>.csv``; all reports are recomputed from those
files alone.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .optimizer import VARIANTS, AlgorithmConfig, read_run_csv, run
from .problems import get_problem, stored_reference, true_metrics

log = logging.getLogger(__name__)

TABLE_SCHEMA = 1


class ConfigError(ValueError):
    """Invalid study configuration."""


class ReportError(RuntimeError):
    """Run directory is missing or holds no usable runs."""


@dataclass
class StudyConfig:
    """Settings of a study; every field has a matching CLI flag."""

    problem: str = "analytic-2d"
    variants: list = field(default_factory=lambda: list(VARIANTS))
    reps: int = 10
    budget: int = 40
    t_init: int = 6
    alpha: float | None = None
    seed: int = 0
    out: str = "results"
    mc_traj: int = 200
    mc_u: int = 100
    mc_samples: int = 500
    mc_incumbent: int = 1000
    mc_report: int = 10_000
    cand_factor: int = 500
    restarts: int = 20
    retrain_restarts: int | None = None
    jobs: int = 1

    def __post_init__(self):
        if isinstance(self.variants, str):
            self.variants = [self.variants]
        self.variants = [str(v).upper() for v in self.variants]
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad or not self.variants:
            raise ConfigError(f"variants must be a non-empty subset of {VARIANTS}, got {self.variants}")
        if len(set(self.variants)) != len(self.variants):
            raise ConfigError("variants must not repeat")
        for name in ("reps", "jobs", "mc_traj", "mc_u", "mc_samples", "mc_incumbent", "cand_factor",
                     "restarts"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.budget < 0:
            raise ConfigError("budget must be >= 0")
        if self.t_init < 2:
            raise ConfigError("t_init must be >= 2")
        if self.mc_report < 1000:
            raise ConfigError("mc_report must be >= 1000")
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.retrain_restarts is not None and self.retrain_restarts < 0:
            raise ConfigError("retrain_restarts must be >= 0")

    @classmethod
    def from_dict(cls, values: dict) -> StudyConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def algorithm_config(self, variant: str) -> AlgorithmConfig:
        return AlgorithmConfig(
            variant=variant, t_init=self.t_init, budget=self.budget, alpha=self.alpha,
            n_nodes=self.mc_u, n_incumbent_nodes=self.mc_incumbent, n_traj=self.mc_traj,
            n_samples=self.mc_samples, cand_factor=self.cand_factor, restarts=self.restarts,
            retrain_restarts=self.retrain_restarts, seed=self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("jobs")
        d.pop("out")
        return d


def run_file(out_dir, variant: str, rep: int) -> Path:
    return Path(out_dir) / "runs" / f"{variant}_rep{rep:02d}.csv"


def _job(cfg: StudyConfig, variant: str, rep: int) -> tuple:
    """Run one (variant, rep) pair; executed in a worker process when ``jobs > 1``."""
    problem = get_problem(cfg.problem)
    acfg = cfg.algorithm_config(variant)
    tm = true_metrics(problem, n_mc=cfg.mc_report)
    rec = run(problem, acfg, rep, metrics=tm)
    return variant, rep, rec.to_csv(), rec.summary()


@dataclass
class StudyResult:
    out: Path
    complete: bool
    n_runs: int
    n_failed: int
    summaries: list

    @property
    def exit_code(self) -> int:
        return 0 if self.complete else 2


def _reusable(path: Path) -> bool:
    if not path.exists():
        return False
    try:
        meta, _ = read_run_csv(path)
    except (ValueError, StopIteration, IndexError):
        return False
    return meta["status"] == "ok"


def run_study(cfg: StudyConfig, resume: bool = False, make_report: bool = True) -> StudyResult:
    """Execute all runs of a study, write the run files and the reports.

    With ``resume`` a run whose file already exists with status ``ok`` is kept
    if the stored configuration matches; runs are otherwise deterministic, so
    this reproduces the same files.
    """
    out = Path(cfg.out)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    cfg_path = out / "config.json"
    cfg_text = json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
    if resume and cfg_path.exists() and cfg_path.read_text() != cfg_text:
        log.info("configuration changed; previous runs are discarded")
        resume = False
    cfg_path.write_text(cfg_text)
    get_problem(cfg.problem)  # fail fast on unknown names

    todo = [(v, r) for r in range(cfg.reps) for v in cfg.variants
            if not (resume and _reusable(run_file(out, v, r)))]
    summaries = {}

    def store(v, r, outcome):
        if isinstance(outcome, Exception):
            summaries[(v, r)] = {"variant": v, "rep": r, "status": "failed",
                                 "message": f"{type(outcome).__name__}: {outcome}"}
            log.error("%s rep %d failed: %s", v, r, outcome)
            return
        _, _, text, summ = outcome
        run_file(out, v, r).write_text(text)
        summaries[(v, r)] = summ

    if cfg.jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(todo))) as pool:
            futs = {pool.submit(_job, cfg, v, r): (v, r) for v, r in todo}
            for fut in as_completed(futs):
                try:
                    store(*futs[fut], fut.result())
                except Exception as exc:  # noqa: BLE001 - recorded as a failed run
                    store(*futs[fut], exc)
    else:
        for v, r in todo:
            log.info("running %s rep %d", v, r)
            try:
                store(v, r, _job(cfg, v, r))
            except Exception as exc:  # noqa: BLE001
                store(v, r, exc)
    for v in cfg.variants:
        for r in range(cfg.reps):
            if (v, r) not in summaries:
                meta, rows = read_run_csv(run_file(out, v, r))
                summaries[(v, r)] = _summary_from_rows(meta, rows)

    ordered = [summaries[(v, r)] for v in cfg.variants for r in range(cfg.reps)]
    with open(out / "summary.jsonl", "w") as fh:
        for s in ordered:
            fh.write(json.dumps(_clean(s), sort_keys=True) + "\n")
    n_failed = sum(s.get("status") != "ok" for s in ordered)
    res = StudyResult(out, n_failed == 0, len(ordered), n_failed, ordered)
    if make_report:
        report(out, complete=res.complete)
    return res


def _num(v):
    return float(v) if v not in ("", None) else None


def _summary_from_rows(meta: dict, rows: list) -> dict:
    fin = rows[-1] if rows else {}
    xs = sorted(k for k in fin if k.startswith("inc_x_"))
    return {"problem": meta["problem"], "variant": meta["variant"], "rep": meta["rep"],
            "seed": meta["seed"], "status": meta["status"], "message": "",
            "iterations": int(fin.get("iteration", 0) or 0), "con_evals": int(fin.get("con_evals", 0) or 0),
            "obj_evals": int(fin.get("obj_evals", 0) or 0),
            "x_final": [_num(fin[k]) for k in xs] if fin else None,
            "true_mean_objective": _num(fin.get("true_mean_objective")),
            "true_pof": _num(fin.get("true_pof")),
            "true_feasible": bool(int(fin["true_feasible"])) if fin.get("true_feasible") else None,
            "wall_time": None}


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class RunTrace:
    """One run file reduced to what the reports need."""

    variant: str
    rep: int
    problem: str
    status: str
    con_evals: np.ndarray
    best_value: np.ndarray  # running best feasible true mean objective, NaN before any
    best_x: np.ndarray  # (rows, d), NaN before any feasible incumbent
    counts: np.ndarray  # constraint evaluations per level over the whole run


def _trace(meta: dict, rows: list) -> RunTrace:
    if not rows:
        raise ReportError(f"run {meta['variant']} rep {meta['rep']} has no rows")
    d = sum(1 for k in rows[0] if k.startswith("inc_x_"))
    l = sum(1 for k in rows[0] if k.startswith("n_g"))
    n = len(rows)
    ce = np.array([int(r["con_evals"]) for r in rows])
    best = np.full(n, np.nan)
    bx = np.full((n, d), np.nan)
    cur, cur_x = np.inf, None
    counts = np.zeros(l, dtype=int)
    for i, r in enumerate(rows):
        if r.get("true_feasible") == "1":
            v = float(r["true_mean_objective"])
            if v < cur:
                cur, cur_x = v, [float(r[f"inc_x_{j + 1}"]) for j in range(d)]
        if cur_x is not None:
            best[i], bx[i] = cur, cur_x
        p = r.get("p", "")
        if p == "all":
            counts += 1
        elif p:
            counts[int(p) - 1] += 1
    return RunTrace(meta["variant"], meta["rep"], meta["problem"], meta["status"], ce, best, bx, counts)


def load_traces(run_dir) -> list:
    """Parse every run file below ``run_dir`` (or ``run_dir/runs``)."""
    base = Path(run_dir)
    files = sorted((base / "runs").glob("*.csv")) if (base / "runs").is_dir() else sorted(base.glob("*.csv"))
    traces = []
    for f in files:
        try:
            meta, rows = read_run_csv(f)
        except ValueError:
            continue
        if rows:
            traces.append(_trace(meta, rows))
    if not traces:
        raise ReportError(f"no run files in {run_dir}")
    return traces


def _variants(traces) -> list:
    present = {t.variant for t in traces}
    return [v for v in VARIANTS if v in present]


def _value_at(trace: RunTrace, arr: np.ndarray, e: int):
    """Value of the last row with at most ``e`` constraint evaluations."""
    i = np.searchsorted(trace.con_evals, e, side="right") - 1
    return arr[i]


def _quartiles(vals) -> tuple:
    v = np.asarray([x for x in vals if np.isfinite(x)])
    if v.size == 0:
        return (np.nan, np.nan, np.nan)
    return tuple(float(q) for q in np.percentile(v, [25, 50, 75]))


def report_convergence(run_dir, reference_x=None, reference_value=None) -> list:
    """Best feasible true objective and distance to the reference optimum vs budget.

    For each variant and each constraint-evaluation count ``e`` the table
    holds quartiles over repetitions of the running best over incumbents
    that are feasible under the reporting sample; repetitions without any
    feasible incumbent yet are excluded (``n_feasible`` counts the rest).
    The reference optimum defaults to the stored enumeration result.
    """
    traces = load_traces(run_dir)
    if reference_x is None:
        ref = stored_reference(traces[0].problem)
        if ref is not None:
            reference_x, reference_value = ref["x"], ref["value"]
    ref_x = None if reference_x is None else np.asarray(reference_x, dtype=float)
    table = []
    for v in _variants(traces):
        ts = [t for t in traces if t.variant == v]
        grid = np.unique(np.concatenate([t.con_evals for t in ts]))
        for e in grid:
            vals = np.array([_value_at(t, t.best_value, e) for t in ts])
            if ref_x is not None:
                dist = np.array([np.linalg.norm(_value_at(t, t.best_x, e) - ref_x) for t in ts])
            else:
                dist = np.full(len(ts), np.nan)
            oq = _quartiles(vals)
            dq = _quartiles(dist)
            gap = (oq[1] - reference_value) / abs(reference_value) if reference_value else np.nan
            table.append({"variant": v, "con_evals": int(e), "n_runs": len(ts),
                          "n_feasible": int(np.sum(np.isfinite(vals))),
                          "objective_q25": oq[0], "objective_median": oq[1], "objective_q75": oq[2],
                          "distance_q25": dq[0], "distance_median": dq[1], "distance_q75": dq[2],
                          "relative_gap_median": gap})
    return table


def report_constraint_usage(run_dir) -> list:
    """Constraint-evaluation counts and shares per run and averaged per variant."""
    traces = load_traces(run_dir)
    table = []
    for v in _variants(traces):
        ts = sorted((t for t in traces if t.variant == v), key=lambda t: t.rep)
        shares = []
        for t in ts:
            tot = t.counts.sum()
            sh = t.counts / tot if tot else np.full(t.counts.size, np.nan)
            shares.append(sh)
            table.append({"variant": v, "rep": t.rep, "total": int(tot),
                          **{f"count_g{p + 1}": int(c) for p, c in enumerate(t.counts)},
                          **{f"share_g{p + 1}": float(s) for p, s in enumerate(sh)}})
        S = np.array(shares)
        ok = np.all(np.isfinite(S), axis=1)
        mean = S[ok].mean(axis=0) if ok.any() else np.full(S.shape[1], np.nan)
        counts = np.array([t.counts for t in ts])
        table.append({"variant": v, "rep": "mean", "total": float(counts.sum(axis=1).mean()),
                      **{f"count_g{p + 1}": float(c) for p, c in enumerate(counts.mean(axis=0))},
                      **{f"share_g{p + 1}": float(s) for p, s in enumerate(mean)}})
    return table


def report_final(run_dir) -> list:
    """Boxplot statistics of the final best feasible true objective per variant."""
    traces = load_traces(run_dir)
    table = []
    for v in _variants(traces):
        ts = [t for t in traces if t.variant == v]
        vals = np.array([t.best_value[-1] for t in ts])
        fin = vals[np.isfinite(vals)]
        q = _quartiles(fin)
        table.append({"variant": v, "n_runs": len(ts), "n_feasible": int(fin.size),
                      "n_failed": sum(t.status != "ok" for t in ts),
                      "min": float(fin.min()) if fin.size else np.nan, "q25": q[0], "median": q[1],
                      "q75": q[2], "max": float(fin.max()) if fin.size else np.nan})
    return table


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if np.isnan(v) else "%.17g" % v
    return str(v)


def write_table(path, name: str, table: list) -> None:
    cols = list(table[0]) if table else []
    for row in table:
        cols += [k for k in row if k not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["# schema", name, TABLE_SCHEMA])
        w.writerow(cols)
        for row in table:
            w.writerow([_fmt(row.get(c)) for c in cols])


def read_table(path) -> list:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        cols = next(r)
        return [dict(zip(cols, line)) for line in r]


def report(run_dir, complete: bool | None = None, figures: bool = True) -> dict:
    """Write the convergence, usage and final tables, ``summary.json`` and figures."""
    out = Path(run_dir)
    conv = report_convergence(out)
    usage = report_constraint_usage(out)
    final = report_final(out)
    write_table(out / "convergence.csv", "convergence", conv)
    write_table(out / "constraint_usage.csv", "constraint-usage", usage)
    write_table(out / "final.csv", "final", final)
    traces = load_traces(out)
    if complete is None:
        complete = all(t.status == "ok" for t in traces)
    summary = {"schema": TABLE_SCHEMA, "problem": traces[0].problem, "complete": bool(complete),
               "n_runs": len(traces), "n_failed": sum(t.status != "ok" for t in traces),
               "variants": {}}
    for row in final:
        v = row["variant"]
        last = [r for r in conv if r["variant"] == v][-1]
        mean_usage = next(r for r in usage if r["variant"] == v and r["rep"] == "mean")
        summary["variants"][v] = {
            "final": {k: row[k] for k in ("n_feasible", "q25", "median", "q75")},
            "final_distance_median": last["distance_median"],
            "usage_share": [mean_usage[f"share_g{p + 1}"]
                            for p in range(sum(k.startswith("share_g") for k in mean_usage))],
        }
    (out / "summary.json").write_text(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n")
    if figures:
        from .plotting import plot_study

        plot_study(out, conv, usage, traces)
    return summary


def _clean(v):
    """Replace NaN by None so the output is valid JSON."""
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (float, np.floating)):
        return None if np.isnan(v) else float(v)
    return v


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)
