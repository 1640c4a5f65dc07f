import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from selfcontact.body import (BodyModel, PoseParams, arm_mask, axis_angle_to_matrix, forward_kinematics,
                              matrix_to_axis_angle, point_jacobian, point_vjp, skin_points,
                              skin_vertices, target_vertices, hand_vertices)
from selfcontact.errors import ModelMismatch

from conftest import random_pose


def body_index(model, joint):
    # body_pose excludes the root: joint j occupies components 3(j-1) .. 3j-1
    j = model.joint_name_index[joint]
    return slice(3 * (j - 1), 3 * j)


def test_zero_pose_joints_accumulate_offsets(coarse_model):
    m = coarse_model
    fk = forward_kinematics(m, PoseParams())
    expected = np.zeros((m.n_joints, 3))
    for j in range(m.n_joints):
        p = m.parents[j]
        expected[j] = m.offsets[j] if p < 0 else expected[p] + m.offsets[j]
    np.testing.assert_allclose(fk.positions, expected, atol=1e-15)


def test_zero_pose_vertices_bit_exact(coarse_model, dense_model):
    for m in (coarse_model, dense_model):
        assert np.array_equal(skin_vertices(m, PoseParams()), m.vertices)


def test_global_half_turn_about_z(coarse_model):
    m = coarse_model
    fk0 = forward_kinematics(m, PoseParams())
    fk = forward_kinematics(m, PoseParams(global_orient=[0.0, 0.0, np.pi]))
    root = fk0.positions[0]
    rel = fk0.positions - root
    expected = root + rel * np.array([-1.0, -1.0, 1.0])
    np.testing.assert_allclose(fk.positions, expected, atol=1e-12)


def test_elbow_quarter_turn_two_link_chain(coarse_model):
    m = coarse_model
    pose = PoseParams()
    pose.body_pose[body_index(m, "left_elbow")] = [0.0, np.pi / 2, 0.0]
    fk = forward_kinematics(m, pose)
    e = m.joint_name_index["left_elbow"]
    w = m.joint_name_index["left_wrist"]
    # rest forearm points along +x with length 0.25; a quarter turn about +y sends x -> -z
    np.testing.assert_allclose(fk.positions[w], m.rest_joints[e] + [0.0, 0.0, -0.25], atol=1e-12)
    np.testing.assert_allclose(fk.positions[e], m.rest_joints[e], atol=1e-15)
    v = skin_vertices(m, pose)
    moved = np.flatnonzero(np.linalg.norm(v - m.vertices, axis=1) > 0)
    influenced = np.flatnonzero(m.weights[:, [e, w]].sum(1) > 0)
    assert set(moved) <= set(influenced)
    assert set(hand_vertices(m, "left")) <= set(moved)


def test_blend_of_two_joints_matches_direct_formula(coarse_model):
    m = coarse_model
    pose = PoseParams()
    pose.body_pose[body_index(m, "left_elbow")] = [0.2, -0.7, 0.4]
    pose.body_pose[body_index(m, "left_wrist")] = [0.1, 0.3, -0.5]
    fk = forward_kinematics(m, pose)
    e, w = m.joint_name_index["left_elbow"], m.joint_name_index["left_wrist"]
    W = np.zeros((1, m.n_joints))
    W[0, e] = W[0, w] = 0.5
    x = np.array([[0.62, 1.41, 0.03]])
    got = skin_points(m, fk, x, W)[0]
    # world rotations from independent rotation composition along the chain
    chain, j = [], w
    while j >= 0:
        chain.append(j)
        j = m.parents[j]
    local = np.concatenate([pose.global_orient, pose.body_pose]).reshape(-1, 3)
    R = {}
    for j in reversed(chain):
        Rl = Rotation.from_rotvec(local[j]).as_matrix()
        R[j] = Rl if m.parents[j] < 0 else R[m.parents[j]] @ Rl
    img = [R[j] @ (x[0] - m.rest_joints[j]) + fk.positions[j] for j in (e, w)]
    np.testing.assert_allclose(got, 0.5 * img[0] + 0.5 * img[1], atol=1e-12)


@given(st.integers(0, 2 ** 31 - 1))
def test_rodrigues_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    aa = rng.normal(0, 1, 3)
    aa *= rng.uniform(0, 3.1) / np.linalg.norm(aa)
    np.testing.assert_allclose(axis_angle_to_matrix(aa), Rotation.from_rotvec(aa).as_matrix(), atol=1e-12)
    np.testing.assert_allclose(matrix_to_axis_angle(axis_angle_to_matrix(aa)), aa, atol=1e-9)


def test_rodrigues_small_angle_series():
    for eps in (1e-10, 1e-8, 1e-6):
        aa = np.array([eps, -2 * eps, 0.5 * eps])
        np.testing.assert_allclose(axis_angle_to_matrix(aa), Rotation.from_rotvec(aa).as_matrix(), atol=1e-15)


@given(st.integers(0, 2 ** 31 - 1))
def test_rigid_motion_equivariance(seed):
    m = _coarse()
    rng = np.random.default_rng(seed)
    pose = random_pose(rng)
    pose.global_orient[:] = 0.0
    pose.translation[:] = 0.0
    v0 = skin_vertices(m, pose)
    j0 = forward_kinematics(m, pose).positions
    moved = pose.copy()
    moved.global_orient = rng.normal(0, 1, 3)
    moved.translation = rng.normal(0, 0.5, 3)
    R = axis_angle_to_matrix(moved.global_orient)
    root = m.rest_joints[0]
    tf = lambda p: (p - root) @ R.T + root + moved.translation
    np.testing.assert_allclose(skin_vertices(m, moved), tf(v0), atol=1e-9)
    np.testing.assert_allclose(forward_kinematics(m, moved).positions, tf(j0), atol=1e-9)


_CACHE = {}


def _coarse():
    if "m" not in _CACHE:
        from selfcontact.template import build_capsule_person
        _CACHE["m"] = build_capsule_person()
    return _CACHE["m"]


@given(st.integers(0, 2 ** 31 - 1))
def test_left_arm_locality(seed):
    m = _coarse()
    rng = np.random.default_rng(seed)
    pose = random_pose(rng)
    bumped = pose.copy()
    idx = arm_mask(m, {"left"}).indices
    bumped.body_pose[idx] += rng.normal(0, 0.3, idx.size)
    arm_joints = m.arm_joint_indices("left")
    free = np.flatnonzero(m.weights[:, arm_joints].sum(1) == 0)
    assert np.array_equal(skin_vertices(m, pose)[free], skin_vertices(m, bumped)[free])


@given(st.integers(0, 2 ** 31 - 1))
def test_point_jacobian_finite_differences(seed):
    m = _coarse()
    rng = np.random.default_rng(seed)
    pose = random_pose(rng)
    ids = rng.choice(m.vertices.shape[0], 6, replace=False)
    x, W = m.vertices[ids], m.weights[ids]
    J = point_jacobian(m, forward_kinematics(m, pose), x, W, include_global=True)
    h = 1e-5
    vec = pose.as_vector()
    num = np.empty_like(J)
    for i in range(vec.size):
        a, b = vec.copy(), vec.copy()
        a[i] += h
        b[i] -= h
        pa = skin_points(m, forward_kinematics(m, PoseParams.from_vector(a)), x, W)
        pb = skin_points(m, forward_kinematics(m, PoseParams.from_vector(b)), x, W)
        num[:, :, i] = (pa - pb) / (2 * h)
    # pose vector order is body, orient, translation: same as the Jacobian columns
    err = np.abs(J - num).max() / max(np.abs(num).max(), 1e-12)
    assert err <= 1e-4


@given(st.integers(0, 2 ** 31 - 1))
def test_vjp_equals_explicit_jacobian_product(seed):
    m = _coarse()
    rng = np.random.default_rng(seed)
    pose = random_pose(rng)
    ids = rng.choice(m.vertices.shape[0], 12, replace=False)
    x, W = m.vertices[ids], m.weights[ids]
    G = rng.normal(0, 1, (ids.size, 3))
    fk = forward_kinematics(m, pose)
    J = point_jacobian(m, fk, x, W, include_global=True)
    np.testing.assert_allclose(point_vjp(m, fk, x, W, G), np.einsum("pa,pak->k", G, J), atol=1e-12)


def test_arm_mask_counts(coarse_model):
    left = arm_mask(coarse_model, {"left"})
    both = arm_mask(coarse_model, {"left", "right"})
    right = arm_mask(coarse_model, {"right"})
    assert left.bits.sum() == 9 and both.bits.sum() == 18
    assert not np.any(left.bits & right.bits)
    g = np.arange(63.0) + 1
    masked = both.apply(g)
    assert np.all(masked[~both.bits] == 0) and np.all(masked[both.bits] == g[both.bits])


def test_arm_mask_reads_indices_from_model(coarse_model):
    m = coarse_model
    idx = arm_mask(m, {"left"}).indices
    expected = np.concatenate([np.arange(3 * (j - 1), 3 * j) for j in m.arm_joint_indices("left")])
    assert idx.tolist() == sorted(expected.tolist())
    broken = dict(m.joint_name_index)
    del broken["left_elbow"]
    mm = BodyModel(m.joint_names, m.parents, m.offsets, m.vertices, m.weights, m.regions,
                   broken, m.normals)
    with pytest.raises(ModelMismatch):
        arm_mask(mm, {"left"})


def test_target_sets(coarse_model):
    m = coarse_model
    tl = set(target_vertices(m, "left"))
    for r in ("left_arm", "left_hand", "lower_body"):
        assert not tl & set(m.region(r))
    assert set(m.region("right_hand")) <= tl
    assert set(m.region("left_hand")) <= set(target_vertices(m, "right"))


def test_target_set_without_head(coarse_model):
    m = coarse_model
    regions = {k: v for k, v in m.regions.items()}
    regions["torso"] = np.concatenate([regions["torso"], regions.pop("head")])
    mm = BodyModel(m.joint_names, m.parents, m.offsets, m.vertices, m.weights, regions,
                   m.joint_name_index, m.normals)
    assert set(target_vertices(mm, "left")) == set(target_vertices(m, "left"))


def test_model_invariants(dense_model):
    m = dense_model
    assert m.weights.min() >= 0
    np.testing.assert_allclose(m.weights.sum(1), 1.0, atol=1e-6)
    counts = np.zeros(m.vertices.shape[0], int)
    for idx in m.regions.values():
        counts[idx] += 1
    assert np.all(counts == 1)


def test_model_validation(coarse_model):
    m = coarse_model
    bad = m.weights.copy()
    bad[0] *= 2
    with pytest.raises(ModelMismatch):
        BodyModel(m.joint_names, m.parents, m.offsets, m.vertices, bad, m.regions)
    parents = m.parents.copy()
    parents[3] = 5
    with pytest.raises(ModelMismatch):
        BodyModel(m.joint_names, parents, m.offsets, m.vertices, m.weights, m.regions)
    with pytest.raises(ModelMismatch):
        forward_kinematics(m, PoseParams(np.zeros(60)))


def test_model_json_roundtrip(coarse_model):
    m = coarse_model
    back = BodyModel.from_dict(m.to_dict())
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.weights, m.weights)
    rng = np.random.default_rng(0)
    pose = random_pose(rng)
    assert np.array_equal(skin_vertices(back, pose), skin_vertices(m, pose))
