"""Contact-aware arm refinement.

For a frame flagged as in contact, each hand is paired with its closest target
vertices (depth down-weighted), one or both arms are activated, and the arm
joint parameters follow masked gradient steps on

    L = L_2d + lambda_contact * (lambda_consistency * L_consistency
                                 + lambda_penetration * L_interpenetration
                                 + L_proximity)

until every selected pair touches within tolerance on all camera axes.
All geometry in this module is expressed in the camera frame.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, asdict

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .body import (BodyModel, PoseParams, SIDES, arm_mask, forward_kinematics, hand_vertices,
                   point_vjp, posed_normals, skin_points, skin_vertices, target_vertices)
from .camera import (Camera, Keypoints2D, arm_joint_names, global_init, reprojection_terms,
                     GlobalInitResult)
from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RefinementConfig:
    pair_z_weight: float = 0.25
    loss_weights: tuple = (1.0, 1.0, 4.0)
    lambda_contact: float = 0.5
    lambda_consistency: float = 1.0
    lambda_penetration: float = 300.0
    learning_rate: float = 3e-3
    max_iterations: int = 100
    contact_tolerance: float = 0.005  # m, per axis
    penetration_tolerance: float = 0.002  # m
    arm_activation_ratio: float = 0.5
    multi_region_margin: float = 0.02  # m
    sigma_2d: float = 10.0  # px
    camera_facing_targets: bool = True
    guard_radius: float = 0.02  # m, weighted distance for hand-over-surface association

    def __post_init__(self):
        object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))
        if len(self.loss_weights) != 3:
            raise ConfigError("loss_weights needs three entries (x, y, z)")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                continue
            vals = v if isinstance(v, tuple) else (v,)
            if not all(np.isfinite(x) and x > 0 for x in vals):
                raise ConfigError(f"{f.name} must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown refinement settings: {sorted(unknown)}")
        kw = dict(d)
        if "max_iterations" in kw:
            kw["max_iterations"] = int(kw["max_iterations"])
        return cls(**kw)

    def to_dict(self):
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d


@dataclass
class ContactPair:
    hand: str
    hand_vertex: int
    target_vertex: int
    region: str
    hand_init: np.ndarray
    target_init: np.ndarray
    target_normal: np.ndarray
    distance: float


@dataclass
class ContactPairSet:
    pairs: dict = field(default_factory=dict)  # hand -> list[ContactPair]
    distance: dict = field(default_factory=dict)  # hand -> weighted distance of closest pair

    def for_hands(self, hands):
        return [p for h in SIDES if h in hands for p in self.pairs.get(h, [])]

    def all(self):
        return self.for_hands(SIDES)


@dataclass
class FrameResult:
    pose: PoseParams
    converged: bool | None  # None: frame not optimised (no contact flagged)
    iterations: int
    active_arms: tuple
    gaps: np.ndarray  # (n_pairs, 3) absolute camera-axis gaps at the returned pose
    penetration: np.ndarray  # (n_pairs,)
    pairs: list = field(default_factory=list)
    status: str = "ok"
    loss: float = float("nan")
    surface_depth: float = 0.0  # deepest hand vertex below the head/torso surface (m)

    def diagnostics(self):
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "active_arms": list(self.active_arms),
            "gaps_m": np.round(self.gaps, 9).tolist(),
            "penetration_m": np.round(self.penetration, 9).tolist(),
            "surface_depth_m": round(self.surface_depth, 9),
            "pairs": [{"hand": p.hand, "hand_vertex": p.hand_vertex,
                       "target_vertex": p.target_vertex, "region": p.region} for p in self.pairs],
            "status": self.status,
        }


# -- pair selection -----------------------------------------------------------

def weighted_pair_distance(v, u, z_weight=0.25):
    d = np.asarray(v, dtype=np.float64) - np.asarray(u, dtype=np.float64)
    return float(np.sqrt(d[0] ** 2 + d[1] ** 2 + (z_weight * d[2]) ** 2))


def select_contact_pairs(model: BodyModel, vertices, hand: str, camera: Camera,
                         cfg: RefinementConfig, normals=None) -> list[ContactPair]:
    """Closest (hand, target) pair per target region; keep regions within the margin.

    ``vertices`` and ``normals`` are world-frame (normals default to the template's).
    """
    vc = camera.to_camera(vertices)
    if normals is None:
        normals = model.normals
    n_cam = np.asarray(normals) @ camera.rotation.T
    H = hand_vertices(model, hand)
    T = target_vertices(model, hand)
    if cfg.camera_facing_targets:
        # with depth down-weighted, front and back of a body part look alike; keep the
        # surface that faces the camera
        T = T[np.einsum("ia,ia->i", n_cam[T], -vc[T]) > 0.0]
    if H.size == 0 or T.size == 0:
        return []
    region_ids = model.region_label[T]
    present = np.unique(region_ids)
    remap = np.full(len(model.region_names), -1)
    remap[present] = np.arange(present.size)
    d2, bh, bt = kernels.closest_pairs_by_region(vc[H], vc[T], remap[region_ids], present.size,
                                                 cfg.pair_z_weight)
    d = np.sqrt(d2)
    best = float(d.min())
    order = np.argsort(d, kind="stable")
    pairs = []
    for r in order:
        if not np.isfinite(d[r]) or d[r] > best + cfg.multi_region_margin:
            continue
        hv, tv = int(H[bh[r]]), int(T[bt[r]])
        pairs.append(ContactPair(hand, hv, tv, model.region_names[present[r]], vc[hv].copy(),
                                 vc[tv].copy(), n_cam[tv].copy(), float(d[r])))
    return pairs


def select_active_arms(d_left, d_right, cfg: RefinementConfig | None = None):
    ratio = cfg.arm_activation_ratio if cfg else 0.5
    finite_l, finite_r = np.isfinite(d_left), np.isfinite(d_right)
    if not finite_l and not finite_r:
        return frozenset()
    if finite_l and finite_r and abs(d_left - d_right) <= ratio * min(d_left, d_right):
        return frozenset(("left", "right"))
    return frozenset(("left",)) if d_left <= d_right else frozenset(("right",))


# -- losses on camera-frame vertex arrays ---------------------------------------

def loss_proximity(pairs, vertices_cam, cfg: RefinementConfig):
    w = np.asarray(cfg.loss_weights)
    return float(sum(np.sum(w * np.abs(vertices_cam[p.hand_vertex] - vertices_cam[p.target_vertex]))
                     for p in pairs))


def loss_consistency(pairs, vertices_cam, cfg: RefinementConfig | None = None):
    # depth is the axis being corrected, so only the viewing-plane drift is penalised
    return float(sum(np.sum((vertices_cam[p.hand_vertex][:2] - p.hand_init[:2]) ** 2)
                     for p in pairs))


def penetration_depth(pair, v, u):
    return max(0.0, -float(np.dot(v - u, pair.target_normal)))


def loss_interpenetration(model, vertices_cam, pairs, cfg: RefinementConfig | None = None):
    return float(sum(penetration_depth(p, vertices_cam[p.hand_vertex],
                                       vertices_cam[p.target_vertex]) ** 2 for p in pairs))


@dataclass
class FrameProblem:
    model: BodyModel
    camera: Camera
    keypoints: Keypoints2D
    pairs: list
    active: tuple
    cfg: RefinementConfig
    guard: "SurfaceGuard | None" = None

    def __post_init__(self):
        if self.guard is None:
            self.guard = SurfaceGuard(np.zeros(0, np.int64), np.zeros(0, np.int64),
                                      np.zeros((0, 3)), np.zeros((0, 3)))
        ids = sorted({p.hand_vertex for p in self.pairs} | {p.target_vertex for p in self.pairs}
                     | set(self.guard.hand_vertices.tolist()))
        self.point_ids = np.array(ids, dtype=np.int64)
        slot = {v: i for i, v in enumerate(ids)}
        self.hv = np.array([slot[p.hand_vertex] for p in self.pairs], dtype=np.int64)
        self.tv = np.array([slot[p.target_vertex] for p in self.pairs], dtype=np.int64)
        self.gv = np.array([slot[v] for v in self.guard.hand_vertices], dtype=np.int64)
        self.hand_init = np.array([p.hand_init for p in self.pairs]).reshape(-1, 3)
        self.normals = np.array([p.target_normal for p in self.pairs]).reshape(-1, 3)
        self.joint_names = arm_joint_names(self.active)

    def evaluate(self, pose: PoseParams, with_grad=True):
        """(loss, gradient over the 63 body-pose components, pair geometry)."""
        cfg, cam, model = self.cfg, self.camera, self.model
        fk = forward_kinematics(model, pose)
        l2d, jidx, gj = reprojection_terms(cam, model, fk, self.keypoints, self.joint_names,
                                           cfg.sigma_2d, with_grad)
        rest = model.vertices[self.point_ids]
        W = model.weights[self.point_ids]
        pts = cam.to_camera(skin_points(model, fk, rest, W))
        v, u = pts[self.hv], pts[self.tv]
        diff = v - u
        w = np.asarray(cfg.loss_weights)
        prox = float(np.sum(w * np.abs(diff)))
        drift = v[:, :2] - self.hand_init[:, :2]
        cons = float(np.sum(drift ** 2))
        pen = np.maximum(0.0, -np.einsum("pa,pa->p", diff, self.normals))
        depth = self.guard.depths(pts[self.gv])
        # only the deepest guarded vertex counts: summing over a rigid hand would scale
        # the curvature with the vertex count and destabilise fixed-step descent
        deepest = int(np.argmax(depth)) if depth.size else -1
        dmax = depth[deepest] if depth.size else 0.0
        penl = float(np.sum(pen ** 2) + dmax ** 2)
        lc = cfg.lambda_contact
        value = l2d + lc * (cfg.lambda_consistency * cons + cfg.lambda_penetration * penl + prox)
        geom = (np.abs(diff), pen, depth)
        if not with_grad:
            return value, None, geom
        # gradient with respect to each camera-frame point, then one vector-Jacobian product
        G = np.zeros_like(pts)
        gp = lc * w * np.sign(diff)  # proximity: subgradient sign(0) = 0 at coincidence
        gp = gp + lc * cfg.lambda_penetration * (-2.0 * pen)[:, None] * self.normals
        np.add.at(G, self.hv, gp)
        np.add.at(G, self.tv, -gp)
        gc = np.zeros_like(diff)
        gc[:, :2] = lc * cfg.lambda_consistency * 2.0 * drift
        np.add.at(G, self.hv, gc)
        if dmax > 0.0:
            G[self.gv[deepest]] += (lc * cfg.lambda_penetration * -2.0 * dmax
                                    * self.guard.surface_normals[deepest])
        rows = np.flatnonzero(np.any(G != 0.0, axis=1))
        # keypoint joints and mesh points share one vector-Jacobian product
        onehot = np.zeros((jidx.size, model.n_joints))
        onehot[np.arange(jidx.size), jidx] = 1.0
        pts_rest = np.concatenate([model.rest_joints[jidx], rest[rows]])
        pts_w = np.concatenate([onehot, W[rows]])
        g = point_vjp(model, fk, pts_rest, pts_w, np.concatenate([gj, G[rows]]) @ cam.rotation)[:63]
        return value, g, geom


def total_loss(pose, problem: FrameProblem):
    return problem.evaluate(pose, with_grad=False)[0]


def total_loss_grad(pose, problem: FrameProblem):
    value, grad, _ = problem.evaluate(pose, with_grad=True)
    return value, grad


def _contact_reached(geom, cfg):
    gaps, pen, depth = geom
    return bool(np.all(gaps <= cfg.contact_tolerance) and np.all(pen <= cfg.penetration_tolerance)
                and np.all(depth <= cfg.penetration_tolerance))


@dataclass
class SurfaceGuard:
    """Hand vertices lying over the static head/torso surface, each tied to the
    surface vertex and normal beneath it along the (down-weighted) viewing direction.
    The association is frozen for the frame, like the pair normals."""

    hand_vertices: np.ndarray
    surface_vertices: np.ndarray
    surface_points: np.ndarray  # camera frame
    surface_normals: np.ndarray

    def depths(self, hand_points):
        return np.maximum(0.0, -np.einsum("pa,pa->p", hand_points - self.surface_points,
                                          self.surface_normals))


def surface_guard(model: BodyModel, verts_cam, normals_cam, hands, cfg) -> SurfaceGuard:
    S = np.concatenate([model.region("head"), model.region("torso")])
    S = S[np.einsum("ia,ia->i", normals_cam[S], -verts_cam[S]) > 0.0]
    H = np.concatenate([hand_vertices(model, h) for h in hands]) if hands else np.zeros(0, int)
    if S.size == 0 or H.size == 0:
        return SurfaceGuard(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, 3)),
                            np.zeros((0, 3)))
    # weighted nearest surface vertex per hand vertex: scale depth, then a plain kd-tree query
    scale = np.array([1.0, 1.0, cfg.pair_z_weight])
    nearest = cKDTree(verts_cam[S] * scale).query(verts_cam[H] * scale)[1]
    sv = S[nearest]
    # only vertices lying over the surface in the image, not beside it
    over = np.hypot(*(verts_cam[H][:, :2] - verts_cam[sv][:, :2]).T) <= cfg.guard_radius
    hv = H[over].astype(np.int64)
    sv = sv[over].astype(np.int64)
    return SurfaceGuard(hv, sv, verts_cam[sv].reshape(-1, 3), normals_cam[sv].reshape(-1, 3))


def prepare_frame(pose: PoseParams, keypoints, camera, model, cfg) -> FrameProblem | None:
    """Select pairs on the input mesh and activate arms; None when no hand can reach a target."""
    fk = forward_kinematics(model, pose)
    verts = skin_vertices(model, pose, fk)
    normals = np.zeros_like(verts)
    for hand in SIDES:
        T = target_vertices(model, hand)
        normals[T] = posed_normals(model, fk, T)
    vc = camera.to_camera(verts)
    nc = normals @ camera.rotation.T
    pairs_by_hand, dist, guards = {}, {}, {}
    for hand in SIDES:
        pairs = select_contact_pairs(model, verts, hand, camera, cfg, normals)
        guard = surface_guard(model, vc, nc, (hand,), cfg)
        depth = guard.depths(vc[guard.hand_vertices])
        if depth.size and depth.max() > cfg.penetration_tolerance:
            # a hand already inside the head or torso: the weighted-closest pair is just
            # where it crosses the surface, so pair its deepest vertex instead
            k = int(np.argmax(depth))
            hv = int(guard.hand_vertices[k])
            tv = int(guard.surface_vertices[k])
            region = model.region_names[model.region_label[tv]]
            deep = ContactPair(hand, hv, tv, region, vc[hv].copy(), vc[tv].copy(), nc[tv].copy(), 0.0)
            pairs = [deep] + [p for p in pairs if p.region != region]
        pairs_by_hand[hand] = pairs
        guards[hand] = guard
        dist[hand] = min((p.distance for p in pairs), default=np.inf)
    active = select_active_arms(dist["left"], dist["right"], cfg)
    if not active:
        return None
    pset = ContactPairSet(pairs_by_hand, dist)
    hands = tuple(s for s in SIDES if s in active)
    guard = SurfaceGuard(*(np.concatenate([getattr(guards[h], f.name) for h in hands])
                           for f in fields(SurfaceGuard)))
    return FrameProblem(model, camera, keypoints, pset.for_hands(active), hands, cfg, guard)


def refine_frame(pose_in: PoseParams, contact: bool, keypoints: Keypoints2D, camera: Camera,
                 model: BodyModel, cfg: RefinementConfig | None = None) -> FrameResult:
    cfg = cfg or RefinementConfig()
    if not contact:
        return FrameResult(pose_in.copy(), None, 0, (), np.zeros((0, 3)), np.zeros(0))
    problem = prepare_frame(pose_in, keypoints, camera, model, cfg)
    if problem is None:
        return FrameResult(pose_in.copy(), False, 0, (), np.zeros((0, 3)), np.zeros(0),
                           status="no reachable target")
    idx = arm_mask(model, problem.active).indices
    pose = pose_in.copy()
    best = (np.inf, pose_in.copy(), None)
    it = 0
    while True:
        value, grad, geom = problem.evaluate(pose, with_grad=True)
        if _contact_reached(geom, cfg):
            return _result(pose, True, it, problem, geom, value)
        if not (np.isfinite(value) and np.all(np.isfinite(grad[idx]))):
            log.warning("non-finite loss or gradient; keeping the best iterate")
            break
        if value < best[0]:
            best = (value, pose.copy(), geom)
        if it >= cfg.max_iterations:
            break
        pose.body_pose[idx] -= cfg.learning_rate * grad[idx]
        it += 1
    value, pose, geom = best
    if geom is None:
        value, _, geom = problem.evaluate(pose, with_grad=False)
    return _result(pose, False, it, problem, geom, value, status="iteration limit")


def _result(pose, converged, it, problem, geom, value, status="ok"):
    gaps, pen, depth = geom
    return FrameResult(pose, converged, it, problem.active, gaps, pen, problem.pairs, status,
                       float(value), float(depth.max(initial=0.0)))


@dataclass
class SequenceResult:
    frames: list
    init: GlobalInitResult

    @property
    def poses(self):
        return [f.pose for f in self.frames]


def apply_global(poses, orient, translation):
    out = []
    for p in poses:
        q = p.copy()
        q.global_orient = np.array(orient, dtype=np.float64)
        q.translation = np.array(translation, dtype=np.float64)
        out.append(q)
    return out


def refine_sequence(poses, flags, keypoints, camera, model, cfg=None, threads=1,
                    init_sigma=None) -> SequenceResult:
    """Global init on frame 0, shared by every frame, then per-frame refinement."""
    cfg = cfg or RefinementConfig()
    if not (len(poses) == len(flags) == len(keypoints)):
        raise ConfigError("poses, contact flags and keypoints must have equal length")
    if not poses:
        raise ConfigError("empty sequence")
    init = global_init(camera, model, poses[0], keypoints[0], init_sigma or cfg.sigma_2d)
    shared = apply_global(poses, init.pose.global_orient, init.pose.translation)

    def run(k):
        try:
            return refine_frame(shared[k], bool(flags[k]), keypoints[k], camera, model, cfg)
        except Exception as exc:  # keep going; the frame is reported as failed
            log.warning("frame %d failed: %s", k, exc)
            return FrameResult(shared[k].copy(), False, 0, (), np.zeros((0, 3)), np.zeros(0),
                               status=f"error: {exc}")

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            frames = list(pool.map(run, range(len(poses))))
    else:
        frames = [run(k) for k in range(len(poses))]
    return SequenceResult(frames, init)
