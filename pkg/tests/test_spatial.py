import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tagplan.spatial import (
    Pose,
    apply,
    compose,
    exp_se3,
    exp_se3_series,
    hat,
    homogeneous,
    invert,
    log_se3,
    odot,
    perturb_left,
    skew,
)

vec3 = st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=3).map(np.array)
vec6 = st.lists(st.floats(-2, 2, allow_nan=False), min_size=6, max_size=6).map(np.array)


def random_pose(rng):
    return exp_se3(np.concatenate([rng.normal(0, 2, 3), rng.normal(0, 1, 3)]))


def rodrigues_oracle(phi):
    """Rotation from axis-angle by the textbook formula, independent of the library."""
    a = np.linalg.norm(phi)
    if a == 0:
        return np.eye(3)
    k = phi / a
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(a) * K + (1 - np.cos(a)) * K @ K


def test_skew_zero():
    assert np.array_equal(skew([0, 0, 0]), np.zeros((3, 3)))


def test_skew_cross_identity():
    assert np.allclose(skew([0, 0, 1]) @ [1, 0, 0], [0, 1, 0])


def test_skew_layout():
    ex, ey, ez = 1.0, 2.0, 3.0
    expected = np.array([[0, -ez, ey], [ez, 0, -ex], [-ey, ex, 0]])
    assert np.array_equal(skew([ex, ey, ez]), expected)


@given(vec3, vec3)
def test_skew_matches_cross(v, w):
    assert np.allclose(skew(v) @ w, np.cross(v, w), atol=1e-9)


def test_odot_origin():
    expected = np.zeros((4, 6))
    expected[:3, :3] = np.eye(3)
    assert np.array_equal(odot([0, 0, 0, 1]), expected)


def test_odot_right_block():
    m = odot([1, 2, 3, 1])
    assert np.array_equal(m[:3, 3:], -skew([1, 2, 3]))
    assert np.array_equal(m[3], np.zeros(6))


def test_odot_hat_duality_random():
    rng = np.random.default_rng(1)
    for _ in range(100):
        p = np.append(rng.normal(size=3), 1.0)
        xi = rng.normal(size=6)
        # build the 4x4 se(3) matrix by hand
        H = np.zeros((4, 4))
        H[:3, :3] = np.array([[0, -xi[5], xi[4]], [xi[5], 0, -xi[3]], [-xi[4], xi[3], 0]])
        H[:3, 3] = xi[:3]
        assert np.allclose(odot(p) @ xi, H @ p, atol=1e-12)
        assert np.allclose(hat(xi), H)


def test_compose_identity():
    rng = np.random.default_rng(2)
    t = random_pose(rng)
    c = compose(Pose.identity(), t)
    assert np.allclose(c.matrix(), t.matrix(), atol=1e-12)


def test_compose_inverse_is_identity():
    rng = np.random.default_rng(3)
    for _ in range(50):
        t = random_pose(rng)
        assert np.allclose(compose(t, invert(t)).matrix(), np.eye(4), atol=1e-9)


def test_apply_round_trip_keeps_homogeneous_one():
    rng = np.random.default_rng(4)
    t = random_pose(rng)
    p = homogeneous(rng.normal(size=3))
    q = apply(t, p)
    assert q[3] == 1.0
    assert np.allclose(apply(invert(t), q), p, atol=1e-9)


def test_apply_associativity_random():
    rng = np.random.default_rng(5)
    for _ in range(100):
        a, b = random_pose(rng), random_pose(rng)
        p = homogeneous(rng.normal(size=3))
        assert np.allclose(apply(compose(a, b), p), apply(a, apply(b, p)), atol=1e-9)


def test_body_origin_round_trip():
    rng = np.random.default_rng(6)
    t = random_pose(rng)
    origin = t.origin_in_world()
    assert np.allclose(t.rotation @ origin + t.translation, 0, atol=1e-12)
    assert np.allclose(origin, -t.rotation.T @ t.translation)


def test_exp_zero_is_identity():
    assert np.array_equal(exp_se3(np.zeros(6)).matrix(), np.eye(4))


def test_exp_pure_translation():
    t = exp_se3([1.0, -2.0, 0.5, 0, 0, 0])
    assert np.array_equal(t.rotation, np.eye(3))
    assert np.allclose(t.translation, [1.0, -2.0, 0.5])


def test_exp_rotation_matches_rodrigues_oracle():
    rng = np.random.default_rng(7)
    for _ in range(50):
        phi = rng.normal(size=3)
        assert np.allclose(exp_se3(np.concatenate([np.zeros(3), phi])).rotation, rodrigues_oracle(phi), atol=1e-12)


def test_exp_tiny_rotation_matches_series():
    xi = np.array([0.3, -0.1, 0.2, 1e-10, -5e-11, 3e-11])
    a, b = exp_se3(xi).matrix(), exp_se3_series(xi, terms=4).matrix()
    assert np.max(np.abs(a - b)) < 1e-12


def test_exp_matches_matrix_exponential():
    scipy_linalg = pytest.importorskip("scipy.linalg")
    rng = np.random.default_rng(8)
    for _ in range(20):
        xi = rng.normal(size=6)
        assert np.allclose(exp_se3(xi).matrix(), scipy_linalg.expm(hat(xi)), atol=1e-10)


@given(vec6)
@settings(max_examples=200)
def test_exp_log_round_trip(xi):
    if np.linalg.norm(xi[3:]) > np.pi - 0.1:
        xi = xi.copy()
        xi[3:] *= (np.pi - 0.2) / np.linalg.norm(xi[3:])
    t = exp_se3(xi)
    assert np.allclose(exp_se3(log_se3(t)).matrix(), t.matrix(), atol=1e-9)


def test_perturb_left_zero():
    rng = np.random.default_rng(9)
    t = random_pose(rng)
    assert np.allclose(perturb_left(t, np.zeros(6)).matrix(), t.matrix(), atol=1e-15)


def test_perturb_left_first_order():
    rng = np.random.default_rng(10)
    t = random_pose(rng)
    xi = rng.normal(size=6)
    h = 1e-7
    fd = (perturb_left(t, h * xi).matrix() - t.matrix()) / h
    assert np.allclose(fd, hat(xi) @ t.matrix(), atol=1e-5)


def test_perturb_left_composition_second_order():
    rng = np.random.default_rng(11)
    t = random_pose(rng)
    x1, x2 = rng.normal(size=6), rng.normal(size=6)
    errs = []
    for s in (1e-2, 1e-3):
        a = perturb_left(perturb_left(t, s * x1), s * x2).matrix()
        b = perturb_left(t, s * (x1 + x2)).matrix()
        errs.append(np.max(np.abs(a - b)))
    # error shrinks quadratically with the perturbation size
    assert errs[1] < errs[0] / 50


def test_orthonormality_after_many_compositions():
    rng = np.random.default_rng(12)
    t = Pose.identity()
    for _ in range(10_000):
        t = compose(exp_se3(rng.normal(0, 0.3, 6)), t)
    c = t.rotation
    assert np.max(np.abs(c.T @ c - np.eye(3))) < 1e-7
    assert abs(np.linalg.det(c) - 1.0) < 1e-9


def test_from_position_yaw_places_origin():
    t = Pose.from_position_yaw((1.0, 2.0, 1.5), 0.7)
    assert np.allclose(t.origin_in_world(), [1.0, 2.0, 1.5])
    # body x axis points along the heading
    assert np.allclose(t.rotation.T @ [1, 0, 0], [np.cos(0.7), np.sin(0.7), 0])
