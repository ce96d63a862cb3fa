import math
import warnings

import numpy as np
import pytest

from tagplan.scene import Polygon, Scene, Slot, TagOption, tag_corners_world
from tagplan.sensing import CameraModel, NoiseModel, corner_jacobian, forward_camera_extrinsics, project, to_camera
from tagplan.spatial import Pose, perturb_left
from tagplan.validation import (
    IllConditionedWarning,
    InstanceTooLarge,
    RankDeficientFim,
    SingularNormalEquations,
    TrajectoryError,
    crlb_check,
    estimate_pose,
    exhaustive_oracle,
    fd_jacobian,
    gauss_newton,
    gen_trajectory,
    line_trajectory,
    oracle_state_count,
    pose_error,
    random_baseline,
    random_corner_case,
    rmse_eval,
    simulate_measurements,
)
from tagplan.valuation import PlanningContext

CAM = CameraModel(450.0, 450.0, 320.0, 240.0, 640, 480, t_cv=forward_camera_extrinsics((0.1, 0.0, -0.05)))
EMPTY = Scene(0, 1.5)


def wall_tags(ys, size=0.23):
    return [(i, Slot(TagOption(i, (0.0, y), (1.0, 0.0)), 1.5), size) for i, y in enumerate(ys)]


def facing(distance, y=0.0, yaw_offset=0.0):
    return Pose.from_position_yaw((distance, y, 1.5), math.pi + yaw_offset)


def slot_map(config):
    return {sid: (slot, size) for sid, slot, size in config}


# ------------------------------------------------------------------ jacobian


def test_fd_step_sweep_plateau():
    rng = np.random.default_rng(0)
    t, p = random_corner_case(CAM, rng)
    a = corner_jacobian(t, CAM, p)
    errs = {h: np.max(np.abs(fd_jacobian(t, CAM, p, h) - a)) / np.max(np.abs(a)) for h in (1e-3, 1e-4, 1e-5, 1e-6, 1e-7)}
    # truncation error shrinks from large steps, then levels off in roundoff
    assert errs[1e-3] > errs[1e-5]
    assert max(errs[h] for h in (1e-5, 1e-6, 1e-7)) < 1e-5


def test_fd_on_axis_translation_column():
    cam = CameraModel(450.0, 450.0, 320.0, 240.0, 640, 480, t_cv=Pose.identity())
    z = 3.0
    j = fd_jacobian(Pose.identity(), cam, [0, 0, z, 1])
    assert j[0, 0] == pytest.approx(cam.fu / z, rel=1e-6)


# -------------------------------------------------------------- measurements


def test_zero_noise_exact_projection():
    cfg = wall_tags([0.0])
    t = facing(2.0)
    tiny = NoiseModel(0.0)
    meas = simulate_measurements(t, cfg, EMPTY, CAM, tiny, np.random.default_rng(0))
    corners = tag_corners_world(cfg[0][1].option, 1.5, 0.23)
    assert len(meas) == 4
    for m in meas:
        assert m.pixel == pytest.approx(project(to_camera(t, CAM, corners[m.corner]), CAM), abs=1e-12)


def test_noise_sample_mean_clt():
    cfg = wall_tags([0.0])
    t = facing(2.0)
    rng = np.random.default_rng(1)
    n = 10_000
    acc = np.zeros((4, 2))
    for _ in range(n):
        acc += np.array([m.pixel for m in simulate_measurements(t, cfg, EMPTY, CAM, NoiseModel(1.0), rng)])
    truth = np.array([m.pixel for m in simulate_measurements(t, cfg, EMPTY, CAM, NoiseModel(0.0), rng)])
    assert np.all(np.abs(acc / n - truth) < 3.0 / math.sqrt(n) * 1.5)


def test_undetectable_tags_produce_nothing():
    cfg = wall_tags([0.0])
    away = Pose.from_position_yaw((2.0, 0.0, 1.5), 0.0)
    assert simulate_measurements(away, cfg, EMPTY, CAM, NoiseModel(), np.random.default_rng(0)) == []


# ---------------------------------------------------------------- estimator


def test_noiseless_recovery():
    cfg = wall_tags([-0.4, 0.4])
    t = facing(2.0, 0.1, 0.1)
    meas = simulate_measurements(t, cfg, EMPTY, CAM, NoiseModel(0.0), np.random.default_rng(2))
    init = perturb_left(t, np.array([0.05, -0.03, 0.02, 0.01, -0.02, 0.03]))
    est = estimate_pose(meas, slot_map(cfg), CAM, init)
    assert np.linalg.norm(est.origin_in_world() - t.origin_in_world()) < 1e-8


def test_residual_orthogonal_at_optimum():
    cfg = wall_tags([-0.4, 0.4])
    t = facing(2.0)
    meas = simulate_measurements(t, cfg, EMPTY, CAM, NoiseModel(1.0), np.random.default_rng(3))
    est = gauss_newton(meas, slot_map(cfg), CAM, t)
    g = est.jacobian
    assert np.max(np.abs(g.T @ est.residual)) / (np.linalg.norm(g) * np.linalg.norm(est.residual)) < 1e-8


def test_distant_single_tag_flags_conditioning():
    cfg = wall_tags([0.0], size=0.12)
    t = facing(4.0)
    meas = simulate_measurements(t, cfg, EMPTY, CAM, NoiseModel(1.0), np.random.default_rng(4))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            est = gauss_newton(meas, slot_map(cfg), CAM, t)
        except SingularNormalEquations:
            return
    if any(issubclass(w.category, IllConditionedWarning) for w in caught):
        return
    # otherwise the reported covariance must be large
    cov = np.linalg.inv(est.information)
    assert np.trace(cov[:3, :3]) > 1e-3


def test_too_few_measurements():
    with pytest.raises(SingularNormalEquations):
        gauss_newton([], {}, CAM, Pose.identity())


def test_pose_error_zero_for_identical():
    t = facing(2.0)
    assert np.allclose(pose_error(t, t), 0.0, atol=1e-12)


# ---------------------------------------------------------------------- CRLB


def test_crlb_ratio_near_one():
    cfg = wall_tags([-0.3, 0.3])
    res = crlb_check(facing(1.5), cfg, EMPTY, CAM, NoiseModel(1.0), trials=500, seed=0)
    assert 0.8 <= res.ratio <= 1.25
    assert res.failures == 0
    # unbiased at first order: mean within a few standard errors
    se = np.sqrt(np.diag(res.empirical_cov) / res.trials)
    assert np.all(np.abs(res.mean_error) < 4 * se)


def test_crlb_sigma_scaling():
    cfg = wall_tags([-0.3, 0.3])
    a = crlb_check(facing(1.5), cfg, EMPTY, CAM, NoiseModel(1.0), trials=300, seed=1)
    b = crlb_check(facing(1.5), cfg, EMPTY, CAM, NoiseModel(0.5), trials=300, seed=1)
    assert b.crlb_trace == pytest.approx(a.crlb_trace / 4, rel=1e-9)
    assert b.empirical_trace == pytest.approx(a.empirical_trace / 4, rel=0.05)
    assert b.ratio == pytest.approx(a.ratio, rel=0.05)


def test_crlb_rank_deficient():
    with pytest.raises(RankDeficientFim):
        crlb_check(facing(1.5), [], EMPTY, CAM, NoiseModel(), trials=10)


# --------------------------------------------------------------- trajectories


def test_lsa_four_meters():
    t = line_trajectory("LSA", (0, 0), (4, 0), 1.5)
    assert len(t) == 17
    assert len(set(t.yaws.tolist())) == 1
    steps = np.linalg.norm(np.diff(t.positions, axis=0), axis=1)
    assert np.all(steps <= t.step + 1e-12)


def test_cwk_perpendicular():
    t = line_trajectory("CWK", (0, 0), (3, 3), 1.5)
    motion = np.array([1.0, 1.0]) / math.sqrt(2)
    for y in t.yaws:
        heading = np.array([math.cos(math.radians(y)), math.sin(math.radians(y))])
        assert abs(heading @ motion) < 1e-12


def test_spn_yaw_cover():
    t = line_trajectory("SPN", (0, 0), (2, 0), 1.5)
    per = int(360 / 30)
    assert len(t) % per == 0
    for k in range(0, len(t), per):
        assert sorted(t.yaws[k : k + per].tolist()) == [float(30 * i) for i in range(per)]


def test_gen_trajectory_inside_region():
    region = Polygon(np.array([[0, 0], [6, 0], [6, 4], [0, 4]]))
    for kind in ("CWK", "LSA", "SPN"):
        t = gen_trajectory(kind, region, 1.5)
        assert np.all((t.positions[:, 0] > 0) & (t.positions[:, 0] < 6))
        assert np.allclose(t.positions[:, 1], 2.0)


def test_gen_trajectory_too_small():
    with pytest.raises(TrajectoryError):
        gen_trajectory("LSA", Polygon(np.array([[0, 0], [0.8, 0], [0.8, 0.8], [0, 0.8]])), 1.5)


def test_unknown_kind():
    with pytest.raises(TrajectoryError):
        line_trajectory("ZIG", (0, 0), (1, 0), 1.5)


# ----------------------------------------------------------------------- RMSE


def test_rmse_zero_noise():
    traj = line_trajectory("LSA", (4.0, -0.5), (2.0, -0.5), 1.5)
    cfg = wall_tags([-0.6, -0.2, 0.2, 0.6])
    rep = rmse_eval(traj, cfg, EMPTY, CAM, NoiseModel(0.0), seed=0)
    assert rep.rmse is not None and rep.rmse < 1e-6
    assert rep.skipped == 0


def test_rmse_no_tags_reported_cleanly():
    traj = line_trajectory("LSA", (0, 0), (2, 0), 1.5)
    rep = rmse_eval(traj, [], EMPTY, CAM, NoiseModel(), seed=0)
    assert rep.rmse is None
    assert rep.skipped == len(traj)


def test_rmse_deterministic():
    traj = line_trajectory("SPN", (3.0, -1.0), (3.0, 1.0), 1.5)
    cfg = wall_tags([-0.6, -0.2, 0.2, 0.6])
    a = rmse_eval(traj, cfg, EMPTY, CAM, NoiseModel(), seed=4)
    b = rmse_eval(traj, cfg, EMPTY, CAM, NoiseModel(), seed=4)
    assert a.rmse == b.rmse
    assert [r.error for r in a.records] == [r.error for r in b.records]


def test_rmse_more_tags_not_worse():
    traj = line_trajectory("LSA", (4.0, -1.0), (2.0, 1.0), 1.5)
    full = wall_tags([-1.2, -0.8, -0.4, 0.0, 0.4, 0.8, 1.2])
    sub = [full[1], full[5]]
    med = lambda cfg: np.median([rmse_eval(traj, cfg, EMPTY, CAM, NoiseModel(), seed=s).rmse for s in range(10)])
    assert med(full) <= med(sub)


# ------------------------------------------------------------------- oracle


def test_oracle_state_count():
    mask = np.ones((1, 8), bool)
    assert oracle_state_count(mask, 2, 2) == 1 + 8 * 2 + 28 * 4


def test_oracle_matches_brute_force(tiny_loaded):
    import dataclasses

    ctx = PlanningContext(tiny_loaded.project, workers=1)
    best, genes = exhaustive_oracle(ctx, budget=2)
    assert ctx.score(genes) == best
    assert np.count_nonzero(genes) <= 2
    # any single-gene change within the budget cannot improve on it
    for s in range(ctx.n_slots):
        for v in range(3):
            g = genes.copy()
            g[s] = v
            if np.count_nonzero(g) <= 2:
                assert ctx.score(g) <= best


def test_oracle_all_infeasible(tiny_loaded):
    ctx = PlanningContext(tiny_loaded.project, workers=1)
    ctx.mask[:] = False
    best, genes = exhaustive_oracle(ctx)
    assert best == 0.0 and not genes.any()


def test_oracle_too_large(tiny_loaded):
    ctx = PlanningContext(tiny_loaded.project, workers=1)
    ctx.mask = np.ones((1, 40), bool)
    with pytest.raises(InstanceTooLarge):
        exhaustive_oracle(ctx, budget=20)


def test_random_baseline_best_of_n(tiny_ctx):
    score, genes = random_baseline(tiny_ctx, n=20, seed=3)
    assert tiny_ctx.score(genes) == score
    assert np.count_nonzero(genes) <= tiny_ctx.params.max_tags_per_phase
