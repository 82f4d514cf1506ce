import numpy as np
import pytest

from ccbo import optimizer as opt
from ccbo import problems as pb

FAST = dict(cand_factor=30, n_nodes=20, n_traj=40, n_samples=40, n_incumbent_nodes=100,
            restarts=2, retrain_restarts=1, seed=3)


def _cfg(variant, budget, **kw):
    args = dict(FAST, variant=variant, budget=budget)
    args.update(kw)
    return opt.AlgorithmConfig(**args)


@pytest.fixture(scope="module")
def problem():
    return pb.problem_2d()


@pytest.fixture(scope="module")
def metrics(problem):
    return pb.true_metrics(problem, n_mc=2000, rng_seed=0, reference=False)


@pytest.fixture(scope="module")
def runs(problem, metrics):
    return {v: opt.run(problem, _cfg(v, 5), rep=1, metrics=metrics) for v in opt.VARIANTS}


def _one_constraint_problem():
    return pb.ProblemDefinition(
        "one-g", lambda X, U: (X[:, 0] - 0.3) ** 2 + 0.1 * U[:, 0],
        (lambda X, U: 0.5 - X[:, 0] - 0.2 * U[:, 0],), [[0.0, 1.0]], [[0.0, 1.0]], alpha=0.1)


def test_runs_complete(runs):
    for v, rec in runs.items():
        assert rec.status == "ok", rec.message


@pytest.mark.parametrize("variant,iters,evals", [("REF", 2, 4), ("MMCU", 2, 4), ("SMCS", 5, 5),
                                                 ("MMCS", 5, 5)])
def test_budget_bookkeeping(runs, variant, iters, evals):
    rows = runs[variant].rows
    assert len(rows) == iters + 1
    assert [r["iteration"] for r in rows] == list(range(iters + 1))
    assert rows[-1]["con_evals"] == evals
    assert rows[-1]["obj_evals"] == iters
    cost = 1 if variant in ("SMCS", "MMCS") else 2
    assert all(b["con_evals"] - a["con_evals"] == cost for a, b in zip(rows, rows[1:]))


def test_selected_levels(runs):
    for v in ("REF", "MMCU"):
        assert all(r["p"] == "all" for r in runs[v].rows[1:])
        assert all("g1_value" in r and "g2_value" in r for r in runs[v].rows[1:])
    for v in ("SMCS", "MMCS"):
        for r in runs[v].rows[1:]:
            assert r["p"] in (1, 2)
            assert f"g{r['p']}_value" in r and f"g{3 - r['p']}_value" not in r


def test_data_sizes_grow_by_at_most_one(runs):
    for rec in runs.values():
        for a, b in zip(rec.rows, rec.rows[1:]):
            for key in ("n_f", "n_g1", "n_g2"):
                assert b[key] - a[key] in (0, 1)
        assert rec.rows[0]["n_f"] == 6


def test_designs_within_bounds(runs, problem):
    lo, hi = problem.x_bounds[0]
    ulo, uhi = problem.u_bounds[0]
    for rec in runs.values():
        for r in rec.rows:
            assert lo <= r["inc_x_1"] <= hi
        for r in rec.rows[1:]:
            assert lo <= r["x_targ_1"] <= hi
            assert ulo <= r["u_f_1"] <= uhi and ulo <= r["u_g_1"] <= uhi


def test_evaluations_match_problem(runs, problem):
    for rec in runs.values():
        for r in rec.rows[1:]:
            x, uf, ug = [r["x_targ_1"]], [r["u_f_1"]], [r["u_g_1"]]
            assert r["f_value"] == problem.f(x, uf)[0]
            for p in (0, 1):
                if f"g{p + 1}_value" in r:
                    assert r[f"g{p + 1}_value"] == problem.g(x, ug, p)[0]


def test_common_variants_use_one_u(runs):
    for v in ("REF", "MMCU"):
        assert all(r["u_f_1"] == r["u_g_1"] for r in runs[v].rows[1:])


def test_budget_below_one_iteration_gives_row_zero(problem, metrics):
    for v, b in [("REF", 0), ("REF", 1), ("MMCS", 0)]:
        rec = opt.run(problem, _cfg(v, b), rep=0, metrics=metrics)
        assert rec.status == "ok"
        assert len(rec.rows) == 1 and rec.rows[0]["con_evals"] == 0


def test_repetition_setup_shared_across_variants(problem):
    s1 = opt.repetition_setup(problem, _cfg("REF", 4), rep=2)
    s2 = opt.repetition_setup(problem, _cfg("MMCS", 4), rep=2)
    assert np.array_equal(s1.doe.f_points, s2.doe.f_points)
    assert np.array_equal(s1.candidate_x, s2.candidate_x)
    assert np.array_equal(s1.candidate_u, s2.candidate_u)
    assert np.array_equal(s1.nodes(3).nodes, s2.nodes(3).nodes)
    assert not np.array_equal(s1.nodes(3).nodes, s1.nodes(4).nodes)
    assert s1.incumbent_nodes(0).nodes.shape[0] == 100
    s3 = opt.repetition_setup(problem, _cfg("REF", 4), rep=3)
    assert not np.array_equal(s1.doe.f_points, s3.doe.f_points)


def test_doe_evaluates_all_outputs_on_shared_points(problem):
    data = opt.init_doe(problem, 8, 0)
    assert data.sizes == (8, 8, 8)
    X, U = data.f_points[:, :1], data.f_points[:, 1:]
    assert np.array_equal(data.f_values, problem.f(X, U))
    assert np.array_equal(data.g_values[1], problem.g(X, U)[:, 1])
    assert all(np.array_equal(g, data.f_points) for g in data.g_points)
    with pytest.raises(ValueError):
        opt.init_doe(problem, 1, 0)


def test_replay_is_byte_identical(problem, metrics, runs):
    again = opt.run(problem, _cfg("MMCS", 5), rep=1, metrics=metrics)
    assert again.to_csv() == runs["MMCS"].to_csv()


def test_csv_roundtrip(tmp_path, runs):
    rec = runs["SMCS"]
    path = tmp_path / "r.csv"
    path.write_text(rec.to_csv())
    meta, rows = opt.read_run_csv(path)
    assert meta == {"schema": opt.RUN_SCHEMA, "problem": "analytic-2d", "variant": "SMCS", "rep": 1,
                    "seed": 3, "status": "ok"}
    assert len(rows) == len(rec.rows)
    assert float(rows[-1]["true_mean_objective"]) == rec.rows[-1]["true_mean_objective"]
    assert rows[0]["x_targ_1"] == ""


def test_single_constraint_split_always_picks_it():
    p = _one_constraint_problem()
    tm = pb.true_metrics(p, n_mc=1000, rng_seed=0, reference=False)
    for v in ("SMCS", "MMCS"):
        rec = opt.run(p, _cfg(v, 3), rep=0, metrics=tm)
        assert rec.status == "ok", rec.message
        assert [r["p"] for r in rec.rows[1:]] == [1, 1, 1]


def test_row_cap_aborts_with_partial_record(problem, metrics):
    rec = opt.run(problem, _cfg("MMCS", 4, max_rows=13), rep=0, metrics=metrics)
    assert rec.status == "failed"
    assert "RowCapError" in rec.message
    # 12 rows from the design, the first added constraint point reaches 13, the second exceeds it
    assert len(rec.rows) == 2


def test_alpha_override(problem, metrics):
    rec = opt.run(problem, _cfg("REF", 0, alpha=0.2), rep=0)
    assert rec.status == "ok"
    assert rec.rows[0]["true_feasible"] == (rec.rows[0]["true_pof"] >= 0.8)


@pytest.mark.parametrize("kw", [dict(variant="XYZ"), dict(t_init=1), dict(budget=-1), dict(restarts=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        _cfg(**{"variant": "REF", "budget": 1, **kw})


def test_contains():
    pts = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert opt._contains(pts, np.array([3.0, 4.0]))
    assert not opt._contains(pts, np.array([3.0, 4.5]))
    assert not opt._contains(np.zeros((0, 2)), np.array([0.0, 0.0]))


def test_single_constraint_multi_output_reproduces_independent():
    p = _one_constraint_problem()
    tm = pb.true_metrics(p, n_mc=1000, rng_seed=0, reference=False)
    body = {v: opt.run(p, _cfg(v, 3), rep=0, metrics=tm).to_csv().split("\n", 1)[1] for v in opt.VARIANTS}
    assert body["MMCS"] == body["SMCS"]
    assert body["MMCU"] == body["REF"]
