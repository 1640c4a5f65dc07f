"""Pinhole camera, robust 2D keypoint loss and first-frame global initialisation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .body import (PoseParams, POSE_DIM, forward_kinematics, joint_jacobian, point_vjp,
                   SIDES, ARM_JOINTS)
from .errors import BehindCamera, InputError

log = logging.getLogger(__name__)

Z_MIN = 1e-4
DEFAULT_SIGMA = 100.0


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))  # world -> camera
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: int = 1000
    height: int = 1000

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InputError("focal lengths must be positive")
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))

    def to_camera(self, points):
        return np.asarray(points) @ self.rotation.T + self.translation

    def project(self, points_world):
        return project(self, self.to_camera(points_world))

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                       np.array(d.get("rotation", np.eye(3).tolist()), dtype=np.float64),
                       np.array(d.get("translation", [0.0, 0.0, 0.0]), dtype=np.float64),
                       int(d.get("width", 1000)), int(d.get("height", 1000)))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad camera description: {exc}") from exc

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def project(camera: Camera, points_cam) -> np.ndarray:
    """Perspective projection of camera-frame points to pixels."""
    p = np.atleast_2d(np.asarray(points_cam, dtype=np.float64))
    if np.any(p[:, 2] <= Z_MIN):
        raise BehindCamera("point at or behind the camera plane")
    return np.stack([camera.fx * p[:, 0] / p[:, 2] + camera.cx,
                     camera.fy * p[:, 1] / p[:, 2] + camera.cy], axis=1)


def projection_jacobian(camera: Camera, points_cam) -> np.ndarray:
    """d(u, v)/d(camera-frame point); shape (N, 2, 3)."""
    p = np.atleast_2d(points_cam)
    iz = 1.0 / p[:, 2]
    J = np.zeros((p.shape[0], 2, 3))
    J[:, 0, 0] = camera.fx * iz
    J[:, 0, 2] = -camera.fx * p[:, 0] * iz * iz
    J[:, 1, 1] = camera.fy * iz
    J[:, 1, 2] = -camera.fy * p[:, 1] * iz * iz
    return J


def geman_mcclure(r, sigma=DEFAULT_SIGMA):
    """Bounded robustifier r^2 / (r^2 + sigma^2)."""
    r2 = np.square(r)
    return r2 / (r2 + sigma * sigma)


def geman_mcclure_grad(r, sigma=DEFAULT_SIGMA):
    s2 = sigma * sigma
    return 2.0 * r * s2 / np.square(np.square(r) + s2)


@dataclass
class Keypoints2D:
    """Per-joint pixel observations with confidences, keyed by model joint name."""

    names: list
    uv: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=np.float64).reshape(-1, 2)
        self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        if np.any(self.confidence < 0) or np.any(self.confidence > 1):
            raise InputError("keypoint confidences must lie in [0, 1]")

    def lookup(self, names):
        index = {n: i for i, n in enumerate(self.names)}
        rows = [index.get(n) for n in names]
        uv = np.array([self.uv[i] if i is not None else (0.0, 0.0) for i in rows])
        conf = np.array([self.confidence[i] if i is not None else 0.0 for i in rows])
        return uv.reshape(-1, 2), conf

    def to_dict(self):
        return {n: [float(u), float(v), float(c)]
                for n, (u, v), c in zip(self.names, self.uv, self.confidence)}

    @classmethod
    def from_dict(cls, d, joint_map=None):
        joint_map = joint_map or {}
        names, uv, conf = [], [], []
        for key, (u, v, c) in d.items():
            names.append(joint_map.get(key, key))
            uv.append((u, v))
            conf.append(c)
        return cls(names, np.array(uv).reshape(-1, 2), np.array(conf))


def arm_joint_names(sides=SIDES):
    return [f"{s}_{j}" for s in sides for j in ARM_JOINTS]


def reprojection_loss(camera, model, fk, keypoints: Keypoints2D, joint_names,
                      sigma=DEFAULT_SIGMA, with_grad=False, include_global=False):
    """Confidence-weighted robust reprojection loss over the named joints."""
    if not with_grad:
        return reprojection_terms(camera, model, fk, keypoints, joint_names, sigma, False)[0]
    value, idx, gc = reprojection_terms(camera, model, fk, keypoints, joint_names, sigma)
    onehot = np.zeros((len(idx), model.n_joints))
    onehot[np.arange(len(idx)), idx] = 1.0
    g = point_vjp(model, fk, model.rest_joints[idx], onehot, gc @ camera.rotation)
    return value, (g if include_global else g[:POSE_DIM])


def reprojection_terms(camera, model, fk, keypoints: Keypoints2D, joint_names,
                       sigma=DEFAULT_SIGMA, with_grad=True):
    """(loss, joint indices, loss gradient per joint origin in the camera frame).

    A joint origin is the rest joint carried by its own joint alone, so callers can
    fold these gradients into a larger vector-Jacobian product."""
    idx = np.array([model.joint_name_index[n] for n in joint_names], dtype=np.int64)
    uv_obs, conf = keypoints.lookup(joint_names)
    pc = camera.to_camera(fk.positions[idx])
    res = project(camera, pc) - uv_obs
    value = float(np.sum(conf[:, None] * geman_mcclure(res, sigma)))
    if not with_grad:
        return value, idx, None
    dres = conf[:, None] * geman_mcclure_grad(res, sigma)  # (N, 2)
    # chain through the projection to camera-frame points
    gc = (dres[:, None, :] @ projection_jacobian(camera, pc))[:, 0]
    return value, idx, gc


def loss_2d(camera, model, pose, keypoints, arm_joints=None, sigma=DEFAULT_SIGMA):
    names = arm_joints if arm_joints is not None else arm_joint_names()
    return reprojection_loss(camera, model, forward_kinematics(model, pose), keypoints, names, sigma)


@dataclass
class GlobalInitResult:
    pose: PoseParams
    converged: bool
    cost: float
    iterations: int


def global_init(camera, model, pose: PoseParams, keypoints: Keypoints2D, sigma=DEFAULT_SIGMA,
                max_iterations=200) -> GlobalInitResult:
    """Fit global orientation and translation to full-body keypoints; body pose is untouched."""
    names = [n for n in model.joint_names if n in set(keypoints.names)]
    idx = [model.joint_name_index[n] for n in names]
    uv_obs, conf = keypoints.lookup(names)
    w = np.sqrt(conf)
    body = pose.body_pose.copy()

    def make(x):
        return PoseParams(body, x[:3], x[3:])

    # residual e = r / sqrt(r^2 + s^2) so that sum(e^2) is the robust loss
    def residuals(x):
        fk = forward_kinematics(model, make(x))
        r = project(camera, camera.to_camera(fk.positions[idx])) - uv_obs
        return (w[:, None] * r / np.sqrt(r * r + sigma * sigma)).ravel()

    def jac(x):
        fk = forward_kinematics(model, make(x))
        pc = camera.to_camera(fk.positions[idx])
        r = project(camera, pc) - uv_obs
        de = w[:, None] * sigma * sigma / (r * r + sigma * sigma) ** 1.5
        Jw = joint_jacobian(model, fk, idx, include_global=True)[:, :, POSE_DIM:]
        Jp = np.einsum("nuc,ncp->nup", projection_jacobian(camera, pc),
                       np.einsum("ab,nbp->nap", camera.rotation, Jw))
        return (de[:, :, None] * Jp).reshape(-1, 6)

    x0 = np.concatenate([pose.global_orient, pose.translation])
    sol = least_squares(residuals, x0, jac=jac, method="trf", xtol=1e-14, ftol=1e-15,
                        gtol=1e-15, max_nfev=max_iterations)
    converged = sol.status > 0
    if not converged:
        log.warning("global initialisation hit the iteration limit; keeping best iterate")
    return GlobalInitResult(make(sol.x), bool(converged), float(2.0 * sol.cost), int(sol.nfev))
