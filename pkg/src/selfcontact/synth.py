"""Deterministic synthetic data: impedance traces with planted contacts and scripted
contact motions with estimator-like arm perturbations.

Everything is driven by an explicit seed; identical scripts give identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial import cKDTree

from .body import (BodyModel, PoseParams, POSE_DIM, forward_kinematics, joint_jacobian,
                   skin_points, skin_vertices, target_vertices)
from .camera import Camera, Keypoints2D
from .detection import BioimpedanceTrace, ContactTimeline, align_to_frames, frame_times_for
from .errors import ScriptInfeasible

# -- impedance traces -------------------------------------------------------------------


@dataclass(frozen=True)
class SignalEvent:
    onset: float
    offset: float
    drop: float  # fraction of the baseline lost during contact
    fall_ms: float = 50.0
    rise_ms: float = 50.0
    contact: bool = True  # False: a near-contact proximity dip, not a touch


@dataclass(frozen=True)
class SignalScript:
    duration: float = 10.0
    baseline: float = 300.0
    drift_amplitude: float = 1.5
    drift_period: float = 8.0
    noise_sigma: float = 0.3
    events: tuple = ()
    seed: int = 0
    sample_rate: float = 1000.0
    frame_rate: float = 30.0

    def __post_init__(self):
        evs = tuple(e if isinstance(e, SignalEvent) else SignalEvent(**e) for e in self.events)
        object.__setattr__(self, "events", tuple(sorted(evs, key=lambda e: e.onset)))
        for a, b in zip(self.events, self.events[1:]):
            if a.offset + a.rise_ms * 1e-3 > b.onset:
                raise ScriptInfeasible("signal events overlap")
        for e in self.events:
            if not 0.0 < e.drop < 1.0 or e.offset <= e.onset:
                raise ScriptInfeasible("events need onset < offset and drop in (0, 1)")

    def to_dict(self):
        d = asdict(self)
        d["events"] = [asdict(e) for e in self.events]
        return d


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def event_profile(t, ev: SignalEvent):
    """0 before the touch, 1 while touching; smooth-step transitions at both ends."""
    down = smoothstep((t - ev.onset) / (ev.fall_ms * 1e-3))
    up = smoothstep((t - ev.offset) / (ev.rise_ms * 1e-3))
    return down * (1.0 - up)


def gen_signal(script: SignalScript):
    """Returns (trace, ground-truth timeline at ``script.frame_rate``)."""
    rng = np.random.default_rng(script.seed)
    n = int(round(script.duration * script.sample_rate)) + 1
    t = np.arange(n) / script.sample_rate
    phase = rng.uniform(0.0, 2.0 * np.pi)
    level = script.baseline + script.drift_amplitude * np.sin(2 * np.pi * t / script.drift_period + phase)
    factor = np.ones(n)
    for ev in script.events:
        factor -= ev.drop * event_profile(t, ev)
    noise = rng.normal(0.0, script.noise_sigma, n) if script.noise_sigma > 0 else np.zeros(n)
    mag = np.maximum(level * factor + noise, 1e-3)
    intervals = [(e.onset, e.offset) for e in script.events if e.contact]
    n_frames = int(math.floor(script.duration * script.frame_rate + 1e-9)) + 1
    flags = align_to_frames(intervals, frame_times_for(n_frames, script.frame_rate))
    return (BioimpedanceTrace(t, mag, script.sample_rate),
            ContactTimeline(intervals, flags, script.frame_rate))


def random_signal_script(rng, adversarial=False, duration=12.0, seed=None) -> SignalScript:
    """One trace of the detector corpus: 1-4 touches plus the odd near-contact dip,
    or (adversarial) only near-contact dips of at most 2 %."""
    baseline = rng.uniform(200.0, 600.0)
    events = []
    t = rng.uniform(0.8, 1.5)
    n_touch = 0 if adversarial else int(rng.integers(1, 5))
    n_dips = int(rng.integers(2, 5)) if adversarial else int(rng.integers(0, 3))
    kinds = [True] * n_touch + [False] * n_dips
    rng.shuffle(kinds)
    for contact in kinds:
        dur = rng.uniform(0.3, 2.0) if contact else rng.uniform(0.2, 0.8)
        if t + dur + 0.8 > duration:
            break
        drop = rng.uniform(0.12, 0.4) if contact else rng.uniform(0.005, 0.02)
        events.append(SignalEvent(float(t), float(t + dur), float(drop),
                                  float(rng.uniform(30.0, 80.0)), float(rng.uniform(30.0, 80.0)),
                                  contact))
        t += dur + rng.uniform(0.6, 2.0)
    return SignalScript(duration, float(baseline), float(0.005 * baseline),
                        float(rng.uniform(6.0, 12.0)), float(0.001 * baseline), tuple(events),
                        int(seed if seed is not None else rng.integers(2 ** 31)))


def detector_corpus(n_traces=200, n_adversarial=30, seed=0):
    """Fixed-seed list of (script, trace, truth) for detector evaluation."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_traces):
        script = random_signal_script(rng, adversarial=k >= n_traces - n_adversarial, seed=seed * 100003 + k)
        trace, truth = gen_signal(script)
        out.append((script, trace, truth))
    return out


# -- motion --------------------------------------------------------------------------

def default_camera() -> Camera:
    # 2.8 m in front of the body, looking back along -z; camera y points down
    return Camera(1000.0, 1000.0, 500.0, 500.0, np.diag([1.0, -1.0, -1.0]),
                  np.array([0.0, 1.2, 2.8]), 1000, 1000)


def rest_pose(model: BodyModel) -> PoseParams:
    """Relaxed standing pose: arms hanging, elbows slightly forward."""
    bp = np.zeros(POSE_DIM)

    def put(name, aa):
        j = model.joint_name_index[name]
        bp[3 * (j - 1):3 * j] = aa

    put("left_shoulder", (0.0, 0.0, -1.25))
    put("right_shoulder", (0.0, 0.0, 1.25))
    put("left_elbow", (0.0, -0.9, 0.0))
    put("right_elbow", (0.0, 0.9, 0.0))
    return PoseParams(bp)


TARGETS = ("face", "chest", "shoulder", "belly")


def target_candidates(model: BodyModel, hand: str, target: str, pose: PoseParams) -> np.ndarray:
    """Vertices of the requested spot that face the camera (the depth-ambiguous case)."""
    fk = forward_kinematics(model, pose)
    verts = skin_vertices(model, pose, fk)
    side = 1.0 if hand == "left" else -1.0
    n = model.normals
    if target == "face":
        idx = model.region("head")
        head_c = verts[idx].mean(axis=0)
        sel = (n[idx, 2] > 0.75) & (verts[idx, 1] < head_c[1] + 0.01) & (verts[idx, 1] > head_c[1] - 0.08)
    elif target == "chest":
        idx = model.region("torso")
        sel = ((n[idx, 2] > 0.85) & (verts[idx, 1] > 1.22) & (verts[idx, 1] < 1.36)
               & (-side * verts[idx, 0] > -0.03))
    elif target == "shoulder":
        idx = model.region("torso")
        sel = (n[idx, 2] > 0.5) & (verts[idx, 1] > 1.33) & (-side * verts[idx, 0] > 0.07)
    elif target == "belly":
        idx = model.region("torso")
        sel = (n[idx, 2] > 0.85) & (verts[idx, 1] > 1.0) & (verts[idx, 1] < 1.15)
    else:
        raise ScriptInfeasible(f"unknown contact target {target!r}")
    out = idx[sel]
    if out.size == 0:
        raise ScriptInfeasible(f"no candidate vertices for target {target!r}")
    return out


def palm_vertices(model: BodyModel, hand: str) -> np.ndarray:
    H = model.region(f"{hand}_hand")
    return H[model.normals[H, 1] < -0.9]


def _arm_slice(model, hand):
    idx = []
    for j in model.arm_joint_indices(hand):
        idx.extend(range(3 * (j - 1), 3 * j))
    return np.array(idx)


def solve_contact_pose(model: BodyModel, base: PoseParams, hand: str, target_vertex: int,
                       hand_vertex: int, gap=0.001) -> PoseParams:
    """Arm IK putting ``hand_vertex`` at ``gap`` outside ``target_vertex``, palm facing it."""
    fk0 = forward_kinematics(model, base)
    verts0 = skin_vertices(model, base, fk0)
    u = verts0[target_vertex]
    # target normal at the base pose (targets do not move with this arm)
    Wn = model.weights[target_vertex]
    nu = np.einsum("j,jab,b->a", Wn, fk0.rotations, model.normals[target_vertex])
    nu /= np.linalg.norm(nu)
    goal = u + gap * nu
    sl = _arm_slice(model, hand)
    wrist = model.joint(hand, "wrist")
    n_hand = model.normals[hand_vertex]
    T = target_vertices(model, hand)
    H = model.region(f"{hand}_hand")
    nT = model.normals[T]
    tree = cKDTree(verts0[T])
    pts = np.concatenate([[hand_vertex], H])

    def pose_of(x):
        p = base.copy()
        p.body_pose[sl] = x
        return p

    def residuals(x):
        p = pose_of(x)
        fk = forward_kinematics(model, p)
        v = skin_points(model, fk, model.vertices[pts], model.weights[pts])
        r_pos = (v[0] - goal) * 10.0
        r_dir = 0.05 * (fk.rotations[wrist] @ n_hand + nu)
        r_reg = 0.01 * (x - base.body_pose[sl])
        # keep the rest of the hand out of the touched surface
        vh = v[1:]
        near = tree.query(vh)[1]
        sd = np.einsum("ha,ha->h", vh - verts0[T][near], nT[near])
        r_pen = 5.0 * np.minimum(sd + 0.0005, 0.0)
        return np.concatenate([r_pos, r_dir, r_reg, r_pen])

    x0 = base.body_pose[sl].copy()
    sol = least_squares(residuals, x0, method="trf", xtol=1e-12, ftol=1e-12, max_nfev=400)
    return pose_of(sol.x)


@dataclass(frozen=True)
class ContactEvent:
    start: int  # first contact frame
    end: int  # one past the last contact frame
    hand: str = "left"
    target: str = "face"
    approach: int = 12  # frames spent moving in and out


@dataclass(frozen=True)
class MotionScript:
    n_frames: int = 90
    frame_rate: float = 30.0
    events: tuple = ()
    sigma_z: float = 0.06
    sigma_xy: float = 0.015
    keypoint_noise_px: float = 1.0
    seed: int = 0

    def __post_init__(self):
        evs = tuple(e if isinstance(e, ContactEvent) else ContactEvent(**e) for e in self.events)
        object.__setattr__(self, "events", evs)
        if self.sigma_z < 0 or self.sigma_xy < 0 or self.keypoint_noise_px < 0:
            raise ScriptInfeasible("perturbation scales must be nonnegative")
        for e in evs:
            if not (0 <= e.start - e.approach and e.end + e.approach <= self.n_frames
                    and e.start < e.end):
                raise ScriptInfeasible("contact event does not fit in the sequence")

    def to_dict(self):
        d = asdict(self)
        d["events"] = [asdict(e) for e in self.events]
        return d


@dataclass
class MotionSample:
    gt: list
    perturbed: list
    keypoints: list
    camera: Camera
    contact_flags: list
    contact_meta: list = field(default_factory=list)

    @property
    def frame_times(self):
        return None


def _interp(a: PoseParams, b: PoseParams, s: float) -> PoseParams:
    s = float(smoothstep(s))
    return PoseParams((1 - s) * a.body_pose + s * b.body_pose,
                      (1 - s) * a.global_orient + s * b.global_orient,
                      (1 - s) * a.translation + s * b.translation)


def wrist_jacobian_cam(model, camera, pose, hand):
    """(3, 6) camera-frame wrist Jacobian over the shoulder and elbow components."""
    fk = forward_kinematics(model, pose)
    J = joint_jacobian(model, fk, [model.joint(hand, "wrist")])[0]
    cols = _arm_slice(model, hand)[:6]
    return camera.rotation @ J[:, cols], cols


def displace_wrist(model, camera, pose: PoseParams, hand, offset, max_steps=30):
    """Move one wrist by a camera-frame ``offset`` through its shoulder/elbow angles.

    Damped Gauss-Newton steps (clipped to 0.2 rad) so the displacement matches the
    request rather than its linearisation.
    """
    out = pose.copy()
    offset = np.asarray(offset, dtype=np.float64)
    if not np.any(offset):
        return out
    w_idx = model.joint(hand, "wrist")
    w0 = camera.to_camera(forward_kinematics(model, pose).positions[w_idx])
    for _ in range(max_steps):
        J, cols = wrist_jacobian_cam(model, camera, out, hand)
        err = offset - (camera.to_camera(forward_kinematics(model, out).positions[w_idx]) - w0)
        if np.max(np.abs(err)) < 1e-7:
            break
        step = J.T @ np.linalg.solve(J @ J.T + 1e-4 * np.eye(3), err)
        norm = np.linalg.norm(step)
        if norm > 0.2:
            step *= 0.2 / norm
        out.body_pose[cols] += step
    return out


def perturb_pose(model, camera, pose: PoseParams, rng, sigma_xy, sigma_z, max_steps=30):
    """Shift each wrist by a Gaussian camera-frame offset (std sigma_xy in-plane, sigma_z in depth)."""
    out = pose.copy()
    offsets = {}
    for hand in ("left", "right"):
        target = rng.normal(0.0, 1.0, 3) * np.array([sigma_xy, sigma_xy, sigma_z])
        offsets[hand] = target
        out = displace_wrist(model, camera, out, hand, target, max_steps)
    return out, offsets


def project_keypoints(model, camera, pose, rng, noise_px) -> Keypoints2D:
    fk = forward_kinematics(model, pose)
    uv = camera.project(fk.positions)
    if noise_px > 0:
        uv = uv + rng.normal(0.0, noise_px, uv.shape)
    return Keypoints2D(list(model.joint_names), uv, np.ones(len(model.joint_names)))


def min_region_gap(model, verts, hand, region):
    H = model.region(f"{hand}_hand")
    R = model.region(region)
    d = np.linalg.norm(verts[H][:, None, :] - verts[R][None], axis=-1)
    return float(d.min())


TARGET_REGION = {"face": "head", "chest": "torso", "shoulder": "torso", "belly": "torso"}


def gen_motion(script: MotionScript, model: BodyModel, camera: Camera | None = None) -> MotionSample:
    camera = camera or default_camera()
    rng = np.random.default_rng(script.seed)
    base = rest_pose(model)
    gt = [base.copy() for _ in range(script.n_frames)]
    flags = [False] * script.n_frames
    meta = []
    for ev in script.events:
        cands = target_candidates(model, ev.hand, ev.target, base)
        palms = palm_vertices(model, ev.hand)
        # the arm IK has local minima; resample the touch point a few times
        for _attempt in range(8):
            tv = int(cands[rng.integers(cands.size)])
            hv = int(palms[rng.integers(palms.size)])
            contact = solve_contact_pose(model, base, ev.hand, tv, hv)
            verts = skin_vertices(model, contact)
            gap = min_region_gap(model, verts, ev.hand, TARGET_REGION[ev.target])
            if gap <= 0.002:
                break
        else:
            raise ScriptInfeasible(f"contact pose misses the {ev.target} by {gap * 1e3:.1f} mm")
        meta.append({"hand": ev.hand, "target": ev.target, "hand_vertex": hv,
                     "target_vertex": tv, "gap_m": gap})
        for k in range(ev.start - ev.approach, ev.start):
            gt[k] = _interp(base, contact, (k - (ev.start - ev.approach)) / ev.approach)
        for k in range(ev.start, ev.end):
            gt[k] = contact.copy()
            flags[k] = True
        for k in range(ev.end, ev.end + ev.approach):
            gt[k] = _interp(contact, base, (k - ev.end + 1) / ev.approach)
    perturbed, keypoints = [], []
    for k in range(script.n_frames):
        p, _ = perturb_pose(model, camera, gt[k], rng, script.sigma_xy, script.sigma_z)
        perturbed.append(p)
        keypoints.append(project_keypoints(model, camera, gt[k], rng, script.keypoint_noise_px))
    return MotionSample(gt, perturbed, keypoints, camera, flags, meta)


def random_motion_script(seed, n_frames=90, sigma_z=0.06, sigma_xy=0.015) -> MotionScript:
    rng = np.random.default_rng(seed)
    hand = ("left", "right")[int(rng.integers(2))]
    target = TARGETS[int(rng.integers(len(TARGETS)))]
    length = int(rng.integers(25, 40))
    start = int(rng.integers(15, n_frames - length - 14))
    return MotionScript(n_frames, 30.0, (ContactEvent(start, start + length, hand, target),),
                        sigma_z, sigma_xy, 1.0, seed)


def signal_for_motion(script: MotionScript, seed=None, baseline=350.0) -> SignalScript:
    """An impedance script whose touches coincide with the motion's contact frames."""
    rng = np.random.default_rng(script.seed if seed is None else seed)
    events = []
    for ev in script.events:
        events.append(SignalEvent(ev.start / script.frame_rate - 0.01,
                                  ev.end / script.frame_rate - 0.01,
                                  float(rng.uniform(0.2, 0.35))))
    duration = script.n_frames / script.frame_rate
    return SignalScript(duration, baseline, 0.005 * baseline, 8.0, 0.001 * baseline,
                        tuple(events), int(rng.integers(2 ** 31)), 1000.0, script.frame_rate)


def refinement_corpus(n_sequences=20, seed=0, model=None, n_frames=90, sigma_z=0.06,
                      sigma_xy=0.015):
    """Fixed-seed list of (script, sample); infeasible scripts are skipped in seed order."""
    if model is None:
        from .template import default_model
        model = default_model()
    out = []
    k = 0
    while len(out) < n_sequences:
        script = random_motion_script(seed * 100003 + k, n_frames, sigma_z, sigma_xy)
        k += 1
        try:
            out.append((script, gen_motion(script, model)))
        except ScriptInfeasible:
            continue
    return out
