"""The robust constrained BO loop and its four variants.

===========  ========================  ==========================
variant      constraint model          uncertain-parameter choice
===========  ========================  ==========================
``REF``      ``l`` independent GPs     common ``u`` for f and all g
``SMCS``     ``l`` independent GPs     ``u_f`` and ``(u_g, p)``
``MMCU``     one multi-output GP       common ``u`` for f and all g
``MMCS``     one multi-output GP       ``u_f`` and ``(u_g, p)``
===========  ========================  ==========================

The budget is counted in constraint evaluations: common-``u`` variants spend
``l`` per iteration, constraint-selection variants spend one.

Seeds
-----
Everything random in a run is derived from ``(seed, rep)`` or
``(seed, rep, variant, iteration)`` through ``numpy.random.default_rng``
sequences: the initial design and candidate sets depend on ``(seed, rep)``
and the u-nodes on ``(seed, rep, iteration)``, so they are shared by all
variants of a repetition; training restarts and acquisition sampling use the per-iteration
stream.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gp
from .acquisition import AcquisitionContext, select_u, select_x_targ
from .doe import candidate_set, maximin_lhs, scale_unit
from .problems import ProblemDefinition, TrueMetrics, true_metrics
from .robust import (IndependentConstraints, Incumbent, MultiOutputConstraints,
                     UncertaintyQuadrature, incumbent_feasible_min)

log = logging.getLogger(__name__)

VARIANTS = ("REF", "SMCS", "MMCU", "MMCS")
VARIANT_CODE = {v: i for i, v in enumerate(VARIANTS)}
RUN_SCHEMA = 1


class RowCapError(RuntimeError):
    """The multi-output conditioning matrix would exceed the configured size."""


@dataclass
class AlgorithmConfig:
    """Settings of one optimization run.

    ``n_nodes`` u-nodes drive the acquisition criteria and
    ``n_incumbent_nodes`` u-nodes the feasibility test of the incumbent; both
    sets are redrawn every iteration.  ``retrain_restarts`` is the number of random likelihood restarts used when
    retraining inside the loop (the previous optimum is always added as a warm
    start); ``None`` means ``restarts``.
    """

    variant: str = "MMCS"
    t_init: int = 6
    budget: int = 40
    alpha: float | None = None
    n_nodes: int = 100
    n_traj: int = 200
    n_samples: int = 500
    n_incumbent_nodes: int = 1000
    cand_factor: int = 500
    restarts: int = 20
    retrain_restarts: int | None = None
    seed: int = 0
    max_rows: int = 3000

    def __post_init__(self):
        self.variant = self.variant.upper()
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.t_init < 2:
            raise ValueError("t_init must be >= 2")
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")

    @property
    def multi_output(self) -> bool:
        return self.variant in ("MMCU", "MMCS")

    @property
    def split(self) -> bool:
        return self.variant in ("SMCS", "MMCS")


# ---------------------------------------------------------------------------
# Data and shared per-repetition state
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Joint points and values for f and for each constraint."""

    f_points: np.ndarray
    f_values: np.ndarray
    g_points: list
    g_values: list

    def copy(self) -> Dataset:
        return Dataset(self.f_points.copy(), self.f_values.copy(),
                       [a.copy() for a in self.g_points], [a.copy() for a in self.g_values])

    @property
    def sizes(self) -> tuple:
        return (self.f_points.shape[0], *[a.shape[0] for a in self.g_points])


def _contains(points: np.ndarray, row: np.ndarray) -> bool:
    return bool(points.shape[0]) and bool(np.any(np.all(points == row, axis=1)))


def init_doe(problem: ProblemDefinition, t_init: int, rng_seed) -> Dataset:
    """Maximin LHS over ``S_X x S_U`` with the u-part redrawn from ``rho_U``.

    The same joint points are used for the objective and every constraint.
    """
    if t_init < 2:
        raise ValueError("t_init must be >= 2")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    S = maximin_lhs(t_init, problem.d + problem.m, rng)
    XU = scale_unit(S, problem.joint_bounds)
    XU[:, problem.d:] = problem.sample_u(rng, t_init)
    X, U = XU[:, :problem.d], XU[:, problem.d:]
    f = problem.f(X, U)
    G = problem.g(X, U)
    return Dataset(XU, f, [XU.copy() for _ in range(problem.l)],
                   [G[:, p].copy() for p in range(problem.l)])


@dataclass
class RepetitionSetup:
    """Everything shared by the variants of one repetition.

    The u-node sets depend on the iteration index only, so every variant sees
    the same nodes in the same iteration.
    """

    problem: ProblemDefinition
    doe: Dataset
    candidate_x: np.ndarray
    candidate_u: np.ndarray
    base: tuple
    n_nodes: int
    n_incumbent_nodes: int

    def nodes(self, it: int) -> UncertaintyQuadrature:
        rng = np.random.default_rng([*self.base, 3, int(it)])
        return UncertaintyQuadrature.monte_carlo(self.problem, self.n_nodes, rng)

    def incumbent_nodes(self, it: int) -> UncertaintyQuadrature:
        rng = np.random.default_rng([*self.base, 4, int(it)])
        return UncertaintyQuadrature.monte_carlo(self.problem, self.n_incumbent_nodes, rng)


def repetition_setup(problem: ProblemDefinition, config: AlgorithmConfig, rep: int) -> RepetitionSetup:
    base = (int(config.seed), int(rep))
    doe = init_doe(problem, config.t_init, np.random.default_rng([*base, 0]))
    cx = candidate_set(problem.x_bounds, config.cand_factor, np.random.default_rng([*base, 1]))
    cu = candidate_set(problem.u_bounds, config.cand_factor, np.random.default_rng([*base, 2]))
    return RepetitionSetup(problem, doe, cx, cu, base, config.n_nodes, config.n_incumbent_nodes)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


@dataclass
class Models:
    objective: gp.GpModel
    constraints: object

    def specs(self):
        if isinstance(self.constraints, MultiOutputConstraints):
            return self.objective.kernel, self.constraints.model.kernel
        return self.objective.kernel, [m.kernel for m in self.constraints.models]


def _fit(template, X, y, levels, bounds, restarts, rng, init):
    return gp.fit(template, X, y, levels, bounds=bounds, n_restarts=restarts, rng_seed=rng, init=init)


def train_models(problem: ProblemDefinition, data: Dataset, config: AlgorithmConfig, rng,
                 previous: Models | None = None, restarts: int | None = None) -> Models:
    """Fit the objective GP and the constraint model of the configured variant."""
    jb = problem.joint_bounds
    D = jb.shape[0]
    n_r = config.restarts if restarts is None else restarts
    prev_f, prev_g = previous.specs() if previous is not None else (None, None)
    fm = _fit(gp.default_template(D), data.f_points, data.f_values, None, jb, n_r, rng, prev_f)
    if config.multi_output:
        X = np.vstack(data.g_points)
        n_rows = X.shape[0]
        if n_rows > config.max_rows:
            raise RowCapError(f"multi-output model needs {n_rows} rows, cap is {config.max_rows}")
        y = np.concatenate(data.g_values)
        lv = np.concatenate([np.full(a.shape[0], p) for p, a in enumerate(data.g_points)])
        cm = MultiOutputConstraints(_fit(gp.default_template(D, problem.l), X, y, lv, jb, n_r, rng, prev_g))
    else:
        cm = IndependentConstraints([
            _fit(gp.default_template(D), data.g_points[p], data.g_values[p], None, jb, n_r, rng,
                 None if prev_g is None else prev_g[p])
            for p in range(problem.l)])
    return Models(fm, cm)


def final_solution(models: Models, candidate_x, quad: UncertaintyQuadrature, alpha: float) -> Incumbent:
    """Best candidate by ``m_Z`` among those with ``E[C] <= 0`` (flagged fallback otherwise)."""
    return incumbent_feasible_min(models.objective, models.constraints, candidate_x, quad, alpha)


# ---------------------------------------------------------------------------
# Run record
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    problem: str
    variant: str
    rep: int
    seed: int
    d: int
    m: int
    l: int
    rows: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""
    wall_time: float = 0.0
    data: Dataset | None = field(default=None, repr=False)

    @property
    def final(self) -> dict | None:
        return self.rows[-1] if self.rows else None

    def columns(self) -> list:
        d, m, l = self.d, self.m, self.l
        cols = ["iteration", "con_evals", "obj_evals", "n_f", *[f"n_g{p + 1}" for p in range(l)]]
        cols += [f"x_targ_{i + 1}" for i in range(d)] + [f"u_f_{i + 1}" for i in range(m)]
        cols += [f"u_g_{i + 1}" for i in range(m)] + ["p", "f_value"]
        cols += [f"g{p + 1}_value" for p in range(l)]
        cols += ["efi", "x_fallback"]
        cols += [f"inc_x_{i + 1}" for i in range(d)]
        cols += ["inc_model_value", "inc_fallback", "true_mean_objective", "true_pof", "true_feasible"]
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["# schema", "ccbo-run", RUN_SCHEMA, self.problem, self.variant, self.rep, self.seed,
                    self.status])
        cols = self.columns()
        w.writerow(cols)
        for r in self.rows:
            w.writerow([_fmt(r.get(c)) for c in cols])
        return buf.getvalue()

    def summary(self) -> dict:
        fin = self.final or {}
        d = self.d
        return {
            "problem": self.problem, "variant": self.variant, "rep": self.rep, "seed": self.seed,
            "status": self.status, "message": self.message,
            "iterations": fin.get("iteration", 0), "con_evals": fin.get("con_evals", 0),
            "obj_evals": fin.get("obj_evals", 0),
            "x_final": [fin.get(f"inc_x_{i + 1}") for i in range(d)] if fin else None,
            "true_mean_objective": fin.get("true_mean_objective"), "true_pof": fin.get("true_pof"),
            "true_feasible": fin.get("true_feasible"), "wall_time": self.wall_time,
        }


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def read_run_csv(path) -> tuple[dict, list]:
    """Parse a run CSV into its header metadata and a list of row dicts."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        meta_row = next(r)
        if meta_row[:2] != ["# schema", "ccbo-run"]:
            raise ValueError(f"{path} is not a run file")
        meta = {"schema": int(meta_row[2]), "problem": meta_row[3], "variant": meta_row[4],
                "rep": int(meta_row[5]), "seed": int(meta_row[6]), "status": meta_row[7]}
        cols = next(r)
        rows = [dict(zip(cols, line)) for line in r]
    return meta, rows


# ---------------------------------------------------------------------------
# Loop
# ---------------------------------------------------------------------------


def _snapshot(record: RunRecord, it, con_evals, obj_evals, data: Dataset, inc: Incumbent,
              tm: TrueMetrics, sel: dict | None) -> dict:
    row = {"iteration": it, "con_evals": con_evals, "obj_evals": obj_evals, "n_f": data.sizes[0]}
    for p, n in enumerate(data.sizes[1:]):
        row[f"n_g{p + 1}"] = n
    if sel:
        row.update(sel)
    for i, v in enumerate(inc.x):
        row[f"inc_x_{i + 1}"] = float(v)
    row["inc_model_value"] = inc.value
    row["inc_fallback"] = inc.fallback
    row["true_mean_objective"] = float(tm.mean_objective(inc.x)[0])
    pof = float(tm.pof(inc.x)[0])
    row["true_pof"] = pof
    row["true_feasible"] = pof >= 1.0 - tm.problem.alpha
    return row


def run(problem: ProblemDefinition, config: AlgorithmConfig, rep: int = 0,
        setup: RepetitionSetup | None = None, metrics: TrueMetrics | None = None) -> RunRecord:
    """Execute one optimization run.

    Row ``k`` of the returned record describes the state after ``k``
    iterations: the design chosen in iteration ``k`` and the incumbent of the
    models retrained on the enlarged data.  Row 0 is the initial design.
    """
    t0 = time.perf_counter()
    if config.alpha is not None and config.alpha != problem.alpha:
        problem = ProblemDefinition(problem.name, problem.objective, problem.constraints,
                                    problem.x_bounds, problem.u_bounds, config.alpha,
                                    problem.u_distribution)
    alpha = problem.alpha
    setup = setup or repetition_setup(problem, config, rep)
    tm = metrics or true_metrics(problem)
    rec = RunRecord(problem.name, config.variant, rep, config.seed, problem.d, problem.m, problem.l)
    data = setup.doe.copy()
    rec.data = data
    l, d = problem.l, problem.d
    cost = 1 if config.split else l
    # with one constraint the multi-output model is a scalar GP, so MMCU/MMCS
    # share the streams of REF/SMCS and reproduce them exactly
    code = VARIANT_CODE[config.variant]
    if l == 1 and config.multi_output:
        code = VARIANT_CODE["SMCS" if config.split else "REF"]

    def stream(it, k):
        return np.random.default_rng([int(config.seed), int(rep), code, it, k])

    def train(it, previous):
        restarts = config.restarts if previous is None else (
            config.retrain_restarts if config.retrain_restarts is not None else config.restarts)
        try:
            return train_models(problem, data, config, stream(it, 0), previous, restarts)
        except RowCapError:
            raise
        except (gp.TrainingError, np.linalg.LinAlgError) as exc:
            log.warning("training failed at iteration %d (%s); retrying", it, exc)
            return train_models(problem, data, config, stream(it, 1), None, config.restarts)

    con_evals = obj_evals = it = 0
    try:
        models = train(0, None)
        inc = final_solution(models, setup.candidate_x, setup.incumbent_nodes(0), alpha)
        rec.rows.append(_snapshot(rec, 0, 0, 0, data, inc, tm, None))
        while con_evals + cost <= config.budget:
            it += 1
            ctx = AcquisitionContext(models.objective, models.constraints, setup.nodes(it), alpha, inc.value,
                                     setup.candidate_x, setup.candidate_u, n_traj=config.n_traj,
                                     n_samples=config.n_samples,
                                     seed=[int(config.seed), int(rep), code, it])
            tsel = select_x_targ(ctx)
            usel = select_u(ctx, tsel.x, "split" if config.split else "common")
            sel = {"efi": tsel.efi, "x_fallback": tsel.fallback}
            sel.update({f"x_targ_{i + 1}": float(v) for i, v in enumerate(tsel.x)})
            sel.update({f"u_f_{i + 1}": float(v) for i, v in enumerate(usel.u_f)})
            sel.update({f"u_g_{i + 1}": float(v) for i, v in enumerate(usel.u_g)})
            sel["p"] = "all" if usel.p is None else usel.p + 1

            xf = np.concatenate([tsel.x, usel.u_f])
            fval = float(problem.f(tsel.x, usel.u_f)[0])
            sel["f_value"] = fval
            obj_evals += 1
            if not _contains(data.f_points, xf):
                data.f_points = np.vstack([data.f_points, xf])
                data.f_values = np.append(data.f_values, fval)
            xg = np.concatenate([tsel.x, usel.u_g])
            levels = range(l) if usel.p is None else [usel.p]
            for p in levels:
                gval = float(problem.g(tsel.x, usel.u_g, p)[0])
                sel[f"g{p + 1}_value"] = gval
                con_evals += 1
                if not _contains(data.g_points[p], xg):
                    data.g_points[p] = np.vstack([data.g_points[p], xg])
                    data.g_values[p] = np.append(data.g_values[p], gval)
            models = train(it, models)
            inc = final_solution(models, setup.candidate_x, setup.incumbent_nodes(it), alpha)
            rec.rows.append(_snapshot(rec, it, con_evals, obj_evals, data, inc, tm, sel))
    except Exception as exc:  # noqa: BLE001 - the partial record is the product
        rec.status = "failed"
        rec.message = f"{type(exc).__name__}: {exc}"
        log.error("run %s rep %d aborted at iteration %d: %s", config.variant, rep, it, rec.message)
    rec.wall_time = time.perf_counter() - t0
    return rec


def config_dict(config: AlgorithmConfig) -> dict:
    return asdict(config)
