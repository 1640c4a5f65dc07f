"""Articulated body surrogate: kinematic tree, linear blend skinning, regions.

Body pose is 21 axis-angle triplets (63 reals) for joints 1..21 of the tree in
file order; joint 0 is the root and is driven by the global orientation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ModelMismatch

REGION_NAMES = ("left_hand", "right_hand", "left_arm", "right_arm", "head", "torso", "lower_body")
ARM_JOINTS = ("shoulder", "elbow", "wrist")
SIDES = ("left", "right")
POSE_DIM = 63


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle_to_matrix(aa) -> np.ndarray:
    """Rodrigues' formula; second-order series near zero keeps it exact at the identity."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = float(np.sqrt(aa @ aa))
    K = skew(aa)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def left_jacobian(aa) -> np.ndarray:
    """Maps axis-angle rates to world-frame angular velocity: dR R^T = skew(J_l d(aa))."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = float(np.sqrt(aa @ aa))
    K = skew(aa)
    if theta < 1e-5:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    t2 = theta * theta
    return (np.eye(3) + ((1.0 - np.cos(theta)) / t2) * K
            + ((theta - np.sin(theta)) / (t2 * theta)) * (K @ K))


def matrix_to_axis_angle(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * w
    if np.pi - theta < 1e-6:
        # near pi: axis from the symmetric part
        B = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        k = int(np.argmax(axis))
        axis = B[k] / np.sqrt(B[k, k])
        return theta * axis / np.linalg.norm(axis)
    return theta / (2.0 * np.sin(theta)) * w


@dataclass
class PoseParams:
    body_pose: np.ndarray = field(default_factory=lambda: np.zeros(POSE_DIM))
    global_orient: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.body_pose = np.array(self.body_pose, dtype=np.float64).reshape(-1)
        self.global_orient = np.array(self.global_orient, dtype=np.float64).reshape(-1)
        self.translation = np.array(self.translation, dtype=np.float64).reshape(-1)

    def copy(self) -> "PoseParams":
        return PoseParams(self.body_pose.copy(), self.global_orient.copy(), self.translation.copy())

    def to_dict(self):
        return {"body_pose": self.body_pose.tolist(), "global_orient": self.global_orient.tolist(),
                "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["body_pose"], d["global_orient"], d["translation"])

    def as_vector(self):
        return np.concatenate([self.body_pose, self.global_orient, self.translation])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=np.float64)
        return cls(x[:POSE_DIM], x[POSE_DIM:POSE_DIM + 3], x[POSE_DIM + 3:POSE_DIM + 6])


@dataclass(frozen=True)
class ArmMask:
    bits: np.ndarray

    @property
    def indices(self):
        return np.flatnonzero(self.bits)

    def apply(self, grad):
        return np.where(self.bits, grad, 0.0)


@dataclass(frozen=True)
class FKResult:
    rotations: np.ndarray  # (J, 3, 3) world rotations
    positions: np.ndarray  # (J, 3) world joint origins
    local: tuple  # per-joint axis-angle used (root: global orient)
    axes: np.ndarray | None = None  # (J, 3, 3) angular velocity per unit axis-angle rate


class BodyModel:
    """Immutable template body. Weights are held dense (V x J)."""

    def __init__(self, joint_names, parents, offsets, vertices, weights, regions,
                 joint_name_index=None, normals=None):
        self.joint_names = tuple(joint_names)
        self.parents = np.asarray(parents, dtype=np.int64)
        self.offsets = np.asarray(offsets, dtype=np.float64)
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.n_joints = len(self.joint_names)
        if self.parents.shape != (self.n_joints,) or self.offsets.shape != (self.n_joints, 3):
            raise ModelMismatch("joint table is inconsistent")
        if self.weights.shape != (self.vertices.shape[0], self.n_joints):
            raise ModelMismatch("skin weight table does not match vertices x joints")
        if (self.n_joints - 1) * 3 != POSE_DIM:
            raise ModelMismatch(f"expected 22 joints for a 63-dim body pose, got {self.n_joints}")
        self._check_tree()
        if np.any(self.weights < 0) or np.any(np.abs(self.weights.sum(axis=1) - 1.0) > 1e-6):
            raise ModelMismatch("skin weights must be nonnegative and sum to 1 per vertex")
        self.regions = {k: np.asarray(sorted(v), dtype=np.int64) for k, v in regions.items()}
        self._check_regions()
        self.joint_name_index = dict(joint_name_index or
                                     {n: i for i, n in enumerate(self.joint_names)})
        for name, idx in self.joint_name_index.items():
            if not 0 <= idx < self.n_joints:
                raise ModelMismatch(f"joint index for {name} out of range")
        self.region_names = tuple(self.regions)
        self.region_label = np.empty(self.vertices.shape[0], dtype=np.int64)
        for i, name in enumerate(self.region_names):
            self.region_label[self.regions[name]] = i
        # descendant-or-self table: desc[k, j] is True when joint j is k or below k
        desc = np.eye(self.n_joints, dtype=bool)
        for j in range(self.n_joints):
            p = self.parents[j]
            while p >= 0:
                desc[p, j] = True
                p = self.parents[p]
        self.descendants = desc
        self.descendants_f = desc.astype(np.float64)
        self.rest_joints = forward_kinematics(self, PoseParams()).positions
        self.normals = (np.asarray(normals, dtype=np.float64) if normals is not None
                        else estimate_normals(self.vertices, self.region_label))

    def _check_tree(self):
        roots = np.flatnonzero(self.parents < 0)
        if roots.tolist() != [0]:
            raise ModelMismatch("tree needs a single root at index 0")
        for j in range(1, self.n_joints):
            if not 0 <= self.parents[j] < j:
                raise ModelMismatch("parents must precede children (acyclic, topologically ordered)")

    def _check_regions(self):
        n = self.vertices.shape[0]
        seen = np.zeros(n, dtype=np.int64)
        for name, idx in self.regions.items():
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ModelMismatch(f"region {name} indexes outside the vertex table")
            seen[idx] += 1
        if np.any(seen != 1):
            raise ModelMismatch("regions must be disjoint and cover all vertices")

    def joint(self, side: str, name: str) -> int:
        key = f"{side}_{name}"
        try:
            return self.joint_name_index[key]
        except KeyError:
            raise ModelMismatch(f"model has no joint named {key}") from None

    def arm_joint_indices(self, side: str) -> list[int]:
        return [self.joint(side, n) for n in ARM_JOINTS]

    def region(self, name: str) -> np.ndarray:
        return self.regions.get(name, np.empty(0, dtype=np.int64))

    # serialization ------------------------------------------------------

    def to_dict(self):
        weights = []
        for row in self.weights:
            nz = np.flatnonzero(row)
            weights.append([[int(j), float(row[j])] for j in nz])
        return {
            "joints": [{"name": n, "parent": int(p), "offset": o.tolist()}
                       for n, p, o in zip(self.joint_names, self.parents, self.offsets)],
            "vertices": self.vertices.tolist(),
            "normals": self.normals.tolist(),
            "weights": weights,
            "regions": {k: v.tolist() for k, v in self.regions.items()},
            "joint_name_index": self.joint_name_index,
        }

    @classmethod
    def from_dict(cls, d):
        joints = d["joints"]
        n_v = len(d["vertices"])
        W = np.zeros((n_v, len(joints)))
        if len(d["weights"]) != n_v:
            raise ModelMismatch("one weight row per vertex required")
        for i, row in enumerate(d["weights"]):
            for j, w in row:
                W[i, int(j)] = float(w)
        return cls([j["name"] for j in joints], [j["parent"] for j in joints],
                   [j["offset"] for j in joints], d["vertices"], W, d["regions"],
                   d.get("joint_name_index"), d.get("normals"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def estimate_normals(vertices, labels, k=8):
    """Outward normals from the offset to the local neighbourhood mean (convex parts)."""
    normals = np.zeros_like(vertices)
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        pts = vertices[idx]
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        nn = np.argsort(d2, axis=1)[:, 1:k + 1]
        n = pts - pts[nn].mean(axis=1)
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        normals[idx] = n / np.where(norm > 0, norm, 1.0)
    return normals


def _check_pose(model: BodyModel, pose: PoseParams):
    if pose.body_pose.shape != (POSE_DIM,) or pose.global_orient.shape != (3,) \
            or pose.translation.shape != (3,):
        raise ModelMismatch("pose dimensions do not match the model (63 + 3 + 3)")


def forward_kinematics(model: BodyModel, pose: PoseParams) -> FKResult:
    _check_pose(model, pose)
    local = np.concatenate([pose.global_orient, pose.body_pose]).reshape(-1, 3)
    R, o, axes = kernels.fk_chain(local, model.parents, model.offsets, pose.translation)
    return FKResult(R, o, tuple(local), axes)


def joint_images(model: BodyModel, fk: FKResult, rest_points, weights):
    """Per-joint rigid images R_j (x - J_j) + o_j of rest points; shape (P, J, 3)."""
    rel = rest_points[:, None, :] - model.rest_joints[None, :, :]
    return np.einsum("jab,pjb->pja", fk.rotations, rel) + fk.positions[None]


def skin_points(model: BodyModel, fk: FKResult, rest_points, weights):
    """Linear blend skinning in displacement form (the zero pose stays bit-exact)."""
    J = model.n_joints
    rot_minus_i = fk.rotations - np.eye(3)[None]
    # per-joint affine displacement: (R_j - I) x + (o_j - J_j) - (R_j - I) J_j
    shift = (fk.positions - model.rest_joints) - np.einsum("jab,jb->ja", rot_minus_i, model.rest_joints)
    D = (weights @ rot_minus_i.reshape(J, 9)).reshape(-1, 3, 3)
    return rest_points + np.einsum("pab,pb->pa", D, rest_points) + weights @ shift


def skin_vertices(model: BodyModel, pose: PoseParams, fk: FKResult | None = None) -> np.ndarray:
    fk = fk or forward_kinematics(model, pose)
    return skin_points(model, fk, model.vertices, model.weights)


def posed_normals(model: BodyModel, fk: FKResult, idx) -> np.ndarray:
    idx = np.asarray(idx)
    Rb = (model.weights[idx] @ fk.rotations.reshape(-1, 9)).reshape(-1, 3, 3)
    n = (Rb @ model.normals[idx][:, :, None])[:, :, 0]
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def angular_axes(fk: FKResult, parents) -> np.ndarray:
    """World angular velocity per unit rate of each axis-angle component; (J, 3 comps, 3)."""
    if fk.axes is not None:
        return fk.axes
    J = len(fk.local)
    out = np.empty((J, 3, 3))
    for k in range(J):
        Jl = left_jacobian(fk.local[k])
        parent_R = fk.rotations[parents[k]] if k > 0 else np.eye(3)
        out[k] = (parent_R @ Jl).T  # row c = parent_R @ Jl @ e_c
    return out


def point_jacobian(model: BodyModel, fk: FKResult, rest_points, weights,
                   include_global=False, axes=None):
    """d(posed point)/d(params) for skinned points; shape (P, 3, 63) or (P, 3, 69).

    With ``include_global`` the columns continue with global orient (3) and translation (3).
    """
    rest_points = np.atleast_2d(rest_points)
    weights = np.atleast_2d(weights)
    images = joint_images(model, fk, rest_points, weights)  # (P, J, 3)
    if axes is None:
        axes = angular_axes(fk, model.parents)
    # S[p, k] = sum_{j below k} w_pj (image_pj - o_k)
    Wd = weights[:, None, :] * model.descendants[None, :, :]  # (P, K, J)
    S = np.einsum("pkj,pja->pka", Wd, images) - Wd.sum(-1)[..., None] * fk.positions[None]
    # d point / d theta_kc = axes[k, c] x S[p, k]
    cross = np.cross(axes[None, :, :, :], S[:, :, None, :])  # (P, K, 3c, 3a)
    P = rest_points.shape[0]
    body = cross[:, 1:].reshape(P, -1, 3).transpose(0, 2, 1)  # (P, 3, 63)
    if not include_global:
        return body
    glob = cross[:, 0].transpose(0, 2, 1)  # (P, 3, 3)
    trans = np.broadcast_to(np.eye(3), (P, 3, 3))
    return np.concatenate([body, glob, trans], axis=2)


def point_vjp(model: BodyModel, fk: FKResult, rest_points, weights, grad_points):
    """sum_p g_p . d(point_p)/d(params) without forming the Jacobian; shape (69,).

    With d p / d theta_kc = a_kc x S_pk the sum is a_kc . M_k, M_k = sum_p S_pk x g_p,
    and M_k itself reduces to per-joint 3x3 moments of the rest points.
    """
    x = np.atleast_2d(rest_points)
    W = np.atleast_2d(weights)
    G = np.atleast_2d(grad_points)
    J = model.n_joints
    R, o = fk.rotations, fk.positions
    g = W.T @ G  # (J, 3)
    X = (W.T @ (x[:, :, None] * G[:, None, :]).reshape(-1, 9)).reshape(J, 3, 3)
    Y = R @ X
    axial = np.stack([Y[:, 1, 2] - Y[:, 2, 1], Y[:, 2, 0] - Y[:, 0, 2], Y[:, 0, 1] - Y[:, 1, 0]], axis=1)
    RJ = (R @ model.rest_joints[:, :, None])[:, :, 0]
    Q = axial + _cross(o - RJ, g)
    D = model.descendants_f
    M = D @ Q - _cross(o, D @ g)  # (K, 3)
    rot = (angular_axes(fk, model.parents) @ M[:, :, None])[:, :, 0]
    return np.concatenate([rot[1:].ravel(), rot[0], G.sum(axis=0)])


def _cross(a, b):
    # row-wise cross product; np.cross carries noticeable overhead at these sizes
    return np.stack([a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1],
                     a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2],
                     a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]], axis=1)


def joint_jacobian(model: BodyModel, fk: FKResult, joint_idx, include_global=False, axes=None):
    """d(joint origin)/d(params) for the listed joints."""
    joint_idx = np.asarray(joint_idx)
    onehot = np.zeros((joint_idx.size, model.n_joints))
    onehot[np.arange(joint_idx.size), joint_idx] = 1.0
    return point_jacobian(model, fk, model.rest_joints[joint_idx], onehot, include_global, axes)


def arm_mask(model: BodyModel, arms) -> ArmMask:
    arms = set(arms)
    if not arms:
        raise ValueError("at least one arm required")
    bits = np.zeros(POSE_DIM, dtype=bool)
    for side in arms:
        if side not in SIDES:
            raise ValueError(f"unknown arm {side!r}")
        for j in model.arm_joint_indices(side):
            if j < 1:
                raise ModelMismatch("arm joints cannot be the root")
            bits[3 * (j - 1):3 * j] = True
    return ArmMask(bits)


def other_side(side: str) -> str:
    return "right" if side == "left" else "left"


def target_vertices(model: BodyModel, hand: str) -> np.ndarray:
    """Upper-body vertices a hand may touch: head, torso, opposite arm and hand."""
    opp = other_side(hand)
    parts = [model.region(n) for n in ("head", "torso", f"{opp}_arm", f"{opp}_hand")]
    return np.sort(np.concatenate(parts)).astype(np.int64)


def hand_vertices(model: BodyModel, hand: str) -> np.ndarray:
    return model.region(f"{hand}_hand")
