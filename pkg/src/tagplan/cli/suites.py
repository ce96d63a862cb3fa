"""Validation suites behind ``tagplan validate``.

Each suite returns a list of :class:`Check` rows; a suite fails when any
row fails.
"""

from __future__ import annotations

import math
import time
from dataclasses import replace
from typing import Callable, NamedTuple

import numpy as np

from .. import ga
from ..scene import modified_rois
from ..sensing import corner_jacobian
from ..spatial import Pose
from ..validation import (
    TRAJECTORY_KINDS,
    crlb_check,
    exhaustive_oracle,
    fd_jacobian,
    gen_trajectory,
    jacobian_relative_error,
    random_baseline,
    random_corner_case,
    rmse_eval,
)
from ..valuation import PlanningContext
from .projectfile import bundled, load_project


class Check(NamedTuple):
    name: str
    ok: bool
    detail: str


# ----------------------------------------------------------------- jacobian


def jacobian_errors(cam, seed: int = 0, n: int = 100) -> np.ndarray:
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n):
        t_vw, p_w = random_corner_case(cam, rng)
        errs.append(jacobian_relative_error(corner_jacobian(t_vw, cam, p_w), fd_jacobian(t_vw, cam, p_w)))
    return np.array(errs)


def jacobian_suite(seed: int = 0, n: int = 100, tol: float = 1e-5) -> list[Check]:
    cam = load_project(bundled("room")).project.camera
    t0 = time.perf_counter()
    errs = jacobian_errors(cam, seed, n)
    dt = time.perf_counter() - t0
    good = int(np.sum(errs < tol))
    return [
        Check("jacobian", good == n, f"{good}/{n} within {tol:g} (max relative error {errs.max():.2e})"),
        Check("jacobian_runtime", dt < 5.0, f"{dt:.2f} s (limit 5 s)"),
    ]


# --------------------------------------------------------------------- crlb


def crlb_setup():
    """A pose 1.5 m in front of one column face observing two 0.23 m tags."""
    ctx = PlanningContext(load_project(bundled("tiny")).project, workers=1)
    face = [
        s for s, slot in enumerate(ctx.slots)
        if np.allclose(slot.option.normal, (0.0, -1.0)) and slot.option.anchor[1] < 2.5
    ]
    config = [(s, ctx.slots[s], 0.23) for s in face[:2]]
    x = float(np.mean([ctx.slots[s].option.anchor[0] for s in face[:2]]))
    t_true = Pose.from_position_yaw((x, 0.5, 1.5), math.pi / 2)
    p = ctx.project
    return t_true, config, ctx.phases[0].scene, p.camera, p.noise


def crlb_suite(seed: int = 0, trials: int = 2000) -> list[Check]:
    t_true, config, scene, cam, noise = crlb_setup()
    t0 = time.perf_counter()
    res = crlb_check(t_true, config, scene, cam, noise, trials=trials, seed=seed)
    dt = time.perf_counter() - t0
    return [
        Check(
            "crlb_ratio",
            0.8 <= res.ratio <= 1.25,
            f"ratio {res.ratio:.4f} in [0.8, 1.25] (empirical {res.empirical_trace:.3e}, "
            f"bound {res.crlb_trace:.3e}, {res.trials} trials, {res.failures} failures)",
        ),
        Check("crlb_runtime", dt < 60.0, f"{dt:.1f} s (limit 60 s)"),
    ]


# ------------------------------------------------------------------- oracle


def ga_run(ctx: PlanningContext, params: ga.GaParams) -> ga.GaResult:
    return ga.run(
        ctx.mask, ctx.params.n_sizes, ctx.score_many, params,
        ctx.params.max_tags_per_phase, cache_stats=ctx.cache_stats,
    )


def oracle_gaps(seeds=range(10), iters: int = 500) -> tuple[float, list[float]]:
    ctx = PlanningContext(load_project(bundled("tiny")).project, workers=1)
    best, _ = exhaustive_oracle(ctx)
    gaps = []
    for seed in seeds:
        r = ga_run(ctx, ga.GaParams(population=50, max_iters=iters, seed=seed))
        gaps.append((best - r.best_score) / max(abs(best), 1e-12))
    return best, gaps


def oracle_suite(seed: int = 0) -> list[Check]:
    t0 = time.perf_counter()
    best, gaps = oracle_gaps(range(seed, seed + 10))
    dt = time.perf_counter() - t0
    within = sum(g <= 0.01 for g in gaps)
    return [
        Check("oracle_gap", within >= 9, f"{within}/10 seeds within 1% of the optimum {best:.6g} (max gap {max(gaps):.2%})"),
        Check("oracle_bound", min(gaps) >= -1e-12, "GA never exceeds the exhaustive optimum"),
        Check("oracle_runtime", dt < 120.0, f"{dt:.1f} s (limit 120 s)"),
    ]


# --------------------------------------------------------------------- rmse


def room_plans(seed: int = 0):
    """(context, {name: genes}) for the trace-planned, random and all-occupied plans of the room."""
    lp = load_project(bundled("room"))
    ctx = PlanningContext(lp.project)
    ctx.precompute()
    planned = ga_run(ctx, replace(lp.ga, seed=seed)).best
    _, rand = random_baseline(ctx, n=100, seed=seed)
    return ctx, {"trace": planned, "random": rand, "all": ctx.all_occupied()}


def rmse_table(ctx: PlanningContext, plans: dict, kinds=TRAJECTORY_KINDS, seeds=range(10), phase: int = 0):
    """Median RMSE and total skipped/failed poses per (trajectory kind, plan)."""
    d = ctx.phases[phase]
    region = max((p for p, _ in modified_rois(d.scene, ctx.params.cell_size)), key=lambda p: p.area)
    alt = d.phase.flight_altitudes[0]
    p = ctx.project
    out = {}
    for kind in kinds:
        traj = gen_trajectory(kind, region, alt)
        for name, genes in plans.items():
            config = ctx.config_of(genes, phase)
            reports = [rmse_eval(traj, config, d.scene, p.camera, p.noise, seed=s) for s in seeds]
            vals = [r.rmse for r in reports if r.rmse is not None]
            med = float(np.median(vals)) if vals else float("nan")
            out[kind, name] = (med, sum(r.skipped for r in reports), sum(r.failed for r in reports), len(traj))
    return out


def rmse_suite(seed: int = 0) -> list[Check]:
    ctx, plans = room_plans(seed)
    table = rmse_table(ctx, plans)
    checks = []
    for kind in TRAJECTORY_KINDS:
        t, r, a = (table[kind, n][0] for n in ("trace", "random", "all"))
        checks.append(Check(f"rmse_{kind}_trace_vs_random", t <= r, f"trace {t:.4g} m <= random {r:.4g} m"))
        checks.append(Check(f"rmse_{kind}_all_occupied", a <= t and a <= r, f"all-occupied {a:.4g} m <= both"))
    return checks


SUITES: dict[str, Callable[..., list[Check]]] = {
    "jacobian": jacobian_suite,
    "crlb": crlb_suite,
    "oracle": oracle_suite,
    "rmse": rmse_suite,
}
