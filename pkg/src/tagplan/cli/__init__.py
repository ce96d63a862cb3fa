"""Command line interface: ``tagplan plan|render|validate|eval``.

Exit codes: 0 success, 2 input error, 3 infeasible project, 4 validation
failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import ga
from ..sensing import METRIC_KINDS
from ..validation import TRAJECTORY_KINDS
from ..valuation import FimTable, PlanningContext, worker_count
from .planfile import PlanFile, PlanFileError, build_plan, history_dumps
from .projectfile import LoadedProject, ProjectError, load_project, override_planning
from .render import render_convergence, render_phase

log = logging.getLogger("tagplan")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_VALIDATION = 0, 2, 3, 4


class Infeasible(RuntimeError):
    pass


@dataclass
class PlanRun:
    plan: PlanFile
    history: list
    ctx: PlanningContext
    genes: np.ndarray


def check_feasible(ctx: PlanningContext):
    for j, d in enumerate(ctx.phases):
        name = d.phase.name or f"phase {j}"
        if not d.cells:
            raise Infeasible(f"phase {name!r} has no grid cells inside its regions of interest")
        if not ctx.mask[j].any():
            raise Infeasible(f"phase {name!r} has no tag placement options (no usable installable edges)")


def make_context(loaded: LoadedProject, metric: str | None = None, workers: int | None = None,
                 cache: Path | None = None) -> PlanningContext:
    project = loaded.project
    if metric is not None:
        project = override_planning(project, metric_kind=metric)
    ctx = PlanningContext(project, workers=workers)
    check_feasible(ctx)
    if cache is not None and Path(cache).exists():
        ctx.table.load(Path(cache), project.fingerprint())
    ctx.precompute()
    if cache is not None:
        ctx.table.save(Path(cache), project.fingerprint())
    return ctx


def plan_project(
    loaded: LoadedProject,
    seed: int = 0,
    metric: str | None = None,
    no_cost: bool = False,
    workers: int | None = None,
    cache: Path | None = None,
    max_iters: int | None = None,
) -> PlanRun:
    """Full pipeline: scene, options, grid, FIM table, GA, plan."""
    ctx = make_context(loaded, metric, workers, cache)
    scorer = ctx.with_cost(ctx.cost_params.without_cost()) if no_cost else ctx
    params = replace(loaded.ga, seed=seed)
    if max_iters is not None:
        params = replace(params, max_iters=max_iters)
    res = ga.run(
        ctx.mask, ctx.params.n_sizes, scorer.score_many, params,
        ctx.params.max_tags_per_phase, cache_stats=scorer.cache_stats,
    )
    plan = build_plan(scorer, res.best, loaded.content_hash, seed, cost_enabled=not no_cost)
    return PlanRun(plan, res.history, ctx, res.best)


def write_heatmaps(ctx: PlanningContext, genes: np.ndarray, out: Path) -> list[Path]:
    paths = []
    for j in range(ctx.n_phases):
        p = out / f"heatmap_{j + 1:02d}.svg"
        p.write_text(render_phase(ctx, genes, j))
        paths.append(p)
    return paths


# ------------------------------------------------------------------ commands


def cmd_plan(args) -> int:
    loaded = load_project(args.project)
    run = plan_project(
        loaded, seed=args.seed, metric=args.metric, no_cost=args.no_cost,
        workers=args.threads, cache=args.cache, max_iters=args.max_iters,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run.plan.save(out / "plan.json")
    (out / "history.json").write_text(history_dumps(run.history))
    (out / "convergence.svg").write_text(render_convergence(run.history))
    write_heatmaps(run.ctx, run.genes, out)
    p = run.plan
    print(f"U\t{p.utility:.6f}\nJ\t{p.cost:.6f}\nscore\t{p.score:.6f}")
    print(f"n_plc\t{','.join(map(str, p.n_plc))}\nn_rmv\t{p.n_rmv}\nn_rpl\t{p.n_rpl}")
    print(f"wrote\t{out}")
    return EXIT_OK


def _load_matching(plan_path, loaded: LoadedProject) -> PlanFile:
    plan = PlanFile.load(plan_path)
    if plan.input_hash != loaded.content_hash:
        raise PlanFileError(
            f"{plan_path} was made from a different project file "
            f"(hash {plan.input_hash[:12]} vs {loaded.content_hash[:12]}); refusing"
        )
    return plan


def cmd_render(args) -> int:
    loaded = load_project(args.project)
    plan = _load_matching(args.plan, loaded)
    ctx = make_context(loaded, plan.metric, args.threads, args.cache)
    genes = plan.genes(ctx.n_phases, ctx.n_slots)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in write_heatmaps(ctx, genes, out):
        print(f"wrote\t{p}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .suites import SUITES

    checks = SUITES[args.suite](seed=args.seed)
    for c in checks:
        print(f"{c.name}\t{'PASS' if c.ok else 'FAIL'}\t{c.detail}")
    return EXIT_OK if all(c.ok for c in checks) else EXIT_VALIDATION


def cmd_eval(args) -> int:
    from .suites import rmse_table

    loaded = load_project(args.project)
    plan_a = _load_matching(args.plan_a, loaded)
    plan_b = _load_matching(args.plan_b, loaded)
    ctx = make_context(loaded, None, args.threads, args.cache)
    kinds = [k.strip().upper() for k in args.trajectories.split(",") if k.strip()]
    for k in kinds:
        if k not in TRAJECTORY_KINDS:
            raise ProjectError("--trajectories", f"unknown trajectory kind {k!r}")
    plans = {
        "A": plan_a.genes(ctx.n_phases, ctx.n_slots),
        "B": plan_b.genes(ctx.n_phases, ctx.n_slots),
        "all_occupied": ctx.all_occupied(),
    }
    table = rmse_table(ctx, plans, kinds, range(args.seeds), args.phase)
    lines = ["trajectory\tplan\tmedian_rmse_m\tseeds\tposes\tskipped\tfailed"]
    for k in kinds:
        for name in plans:
            med, skipped, failed, n = table[k, name]
            rmse = "nan" if math.isnan(med) else f"{med:.6g}"
            lines.append(f"{k}\t{name}\t{rmse}\t{args.seeds}\t{n}\t{skipped}\t{failed}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return EXIT_OK


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tagplan", description="Fiducial tag placement planning for drone localization.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: TAGPLAN_THREADS or 1)")
        p.add_argument("--cache", type=Path, default=None, help="FIM table cache file (.npz)")

    p = sub.add_parser("plan", help="plan tag placements for a project")
    p.add_argument("project")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metric", choices=METRIC_KINDS, default=None)
    p.add_argument("--no-cost", "--cost.w-plc-zero", dest="no_cost", action="store_true",
                   help="plan without installation cost (w_plc = 0)")
    p.add_argument("--max-iters", type=int, default=None, help="override the GA iteration limit")
    p.add_argument("--out", default="tagplan-out")
    common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("render", help="render heatmaps of an existing plan")
    p.add_argument("plan")
    p.add_argument("project")
    p.add_argument("--out", default="tagplan-out")
    common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("validate", help="run a validation suite")
    p.add_argument("suite", choices=("jacobian", "crlb", "oracle", "rmse"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instance", default="tiny", choices=("tiny",), help="oracle instance (bundled)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("eval", help="compare two plans by simulated localization RMSE")
    p.add_argument("project")
    p.add_argument("plan_a")
    p.add_argument("plan_b")
    p.add_argument("--trajectories", default="cwk,lsa,spn")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--phase", type=int, default=0)
    p.add_argument("--out", default=None, help="also write the TSV report here")
    common(p)
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "threads", None) is None and hasattr(args, "threads"):
        args.threads = worker_count()
    try:
        return args.func(args)
    except ProjectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PlanFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
