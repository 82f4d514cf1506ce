"""Command-line entry point: ``ccbo study | report | pof-error | reference``.

Exit codes: 0 success, 2 some runs failed, 1 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import __version__
from .problems import PROBLEMS, REPORTING_SEED, get_problem, reference_optimum
from .study import ConfigError, ReportError, StudyConfig, report, run_study

# flag name -> StudyConfig field
STUDY_FLAGS = {
    "problem": "problem", "variant": "variants", "reps": "reps", "budget": "budget",
    "t_init": "t_init", "alpha": "alpha", "seed": "seed", "out": "out", "mc_traj": "mc_traj",
    "mc_u": "mc_u", "mc_samples": "mc_samples", "mc_incumbent": "mc_incumbent",
    "mc_report": "mc_report", "cand_factor": "cand_factor", "restarts": "restarts",
    "retrain_restarts": "retrain_restarts", "jobs": "jobs",
}


def flatten(mapping: dict, prefix: str = "") -> dict:
    """``{"mc": {"traj": 200}}`` -> ``{"mc_traj": 200}``; dashes become underscores."""
    out = {}
    for k, v in mapping.items():
        key = f"{prefix}{str(k).replace('-', '_')}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "_"))
        else:
            out[key] = v
    return out


def load_config_file(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    data = flatten(data)
    if "variant" in data:
        data["variants"] = data.pop("variant")
    return data


def study_config(args) -> StudyConfig:
    values = load_config_file(args.config) if args.config else {}
    for flag, name in STUDY_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    return StudyConfig.from_dict(values)


def _add_study_flags(p):
    p.add_argument("--config", help="YAML file with study settings; flags override it")
    p.add_argument("--problem", help=f"{sorted(PROBLEMS)} or module:factory")
    p.add_argument("--variant", action="append", choices=["REF", "SMCS", "MMCU", "MMCS"],
                   type=str.upper, help="repeatable; default all four")
    p.add_argument("--reps", type=int)
    p.add_argument("--budget", type=int, help="constraint evaluations per run")
    p.add_argument("--t-init", type=int, help="initial design size")
    p.add_argument("--alpha", type=float, help="override the problem's risk level")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--mc-traj", type=int, help="trajectories per PoF estimate")
    p.add_argument("--mc-u", type=int, help="u-nodes for the acquisition criteria")
    p.add_argument("--mc-samples", type=int, help="samples of the updated mean in S_f")
    p.add_argument("--mc-incumbent", type=int, help="u-nodes for the incumbent feasibility test")
    p.add_argument("--mc-report", type=int, help="u-samples for the true metrics")
    p.add_argument("--cand-factor", type=int, help="candidates per dimension")
    p.add_argument("--restarts", type=int, help="likelihood restarts for the first fit")
    p.add_argument("--retrain-restarts", type=int, help="random restarts when refitting in the loop")
    p.add_argument("--jobs", type=int, help="worker processes")
    p.add_argument("--resume", action="store_true", help="keep completed run files")
    p.add_argument("--no-figures", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccbo", description="Chance-constrained Bayesian optimization benchmarks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("study", help="run repeated optimizations and write reports")
    _add_study_flags(p)

    p = sub.add_parser("report", help="recompute tables and figures from run files")
    p.add_argument("run_dir")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("pof-error", help="PoF error of independent vs multi-output constraint models")
    p.add_argument("--problem", default="analytic-4d")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--n-train", type=int, default=30)
    p.add_argument("--n-test", type=int, default=400)
    p.add_argument("--mc-u", type=int, default=1000)
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results/pof_error")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("reference", help="enumerate the true chance-constrained optimum on a grid")
    p.add_argument("--problem", required=True)
    p.add_argument("--grid", type=int, required=True, help="points per design dimension")
    p.add_argument("--mc", type=int, default=10_000, help="u-samples")
    p.add_argument("--seed", type=int, default=REPORTING_SEED)
    p.add_argument("--output", help="write the JSON here instead of stdout")
    return parser


def _cmd_study(args) -> int:
    cfg = study_config(args)
    res = run_study(cfg, resume=args.resume, make_report=False)
    report(res.out, complete=res.complete, figures=not args.no_figures)
    print(f"{res.n_runs - res.n_failed}/{res.n_runs} runs completed; results in {res.out}")
    return res.exit_code


def _cmd_report(args) -> int:
    summary = report(args.run_dir, figures=not args.no_figures)
    print(json.dumps(summary, indent=2))
    return 0 if summary["complete"] else 2


def _cmd_pof_error(args) -> int:
    from .robust import pof_error_study

    problem = get_problem(args.problem)
    res = pof_error_study(problem, n_train=args.n_train, n_test=args.n_test, n_mc=args.mc_u,
                          n_reps=args.reps, rng_seed=args.seed, n_restarts=args.restarts,
                          out_dir=args.out)
    if not args.no_figures:
        from .plotting import plot_pof_error

        plot_pof_error(res["per_rep"], res["per_point"], Path(args.out) / "pof_error.png")
    wins = sum(mo < ind for _, ind, mo in res["per_rep"])
    print(f"multi-output error below independent in {wins}/{len(res['per_rep'])} repetitions")
    return 0


def _cmd_reference(args) -> int:
    ref = reference_optimum(get_problem(args.problem), args.grid, args.mc, args.seed)
    text = json.dumps(ref, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n")
    else:
        print(text)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"study": _cmd_study, "report": _cmd_report, "pof-error": _cmd_pof_error,
                "reference": _cmd_reference}
    try:
        return handlers[args.command](args)
    except (ConfigError, KeyError, TypeError, yaml.YAMLError, OSError) as exc:
        print(f"ccbo: configuration error: {exc}", file=sys.stderr)
        return 1
    except ReportError as exc:
        print(f"ccbo: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
