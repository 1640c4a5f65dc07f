"""Pose and contact error metrics: Procrustes-aligned arm error, joint errors,
contact detection rate and vertex-pair distance."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.spatial import cKDTree

from .body import BodyModel, SIDES, ARM_JOINTS, forward_kinematics, skin_vertices, target_vertices
from .errors import DegenerateAlignment

GT_PAIR_THRESHOLD = 0.010  # m
DETECTION_THRESHOLD = 0.005  # m


def procrustes_align(source, target):
    """Similarity (s, R, t) minimising sum ||s R x + t - y||^2 with det R = +1."""
    X = np.asarray(source, dtype=np.float64)
    Y = np.asarray(target, dtype=np.float64)
    if X.shape != Y.shape or X.ndim != 2 or X.shape[1] != 3 or X.shape[0] < 3:
        raise DegenerateAlignment("need two matching clouds of at least 3 points")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    var_x = np.sum(Xc ** 2) / X.shape[0]
    sv = np.linalg.svd(Xc, compute_uv=False)
    if var_x <= 0 or sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateAlignment("source points are coincident or collinear")
    S = Yc.T @ Xc / X.shape[0]
    U, D, Vt = np.linalg.svd(S)
    E = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        E[2, 2] = -1.0
    R = U @ E @ Vt
    s = float(np.trace(np.diag(D) @ E) / var_x)
    t = my - s * R @ mx
    return s, R, t


def apply_similarity(points, s, R, t):
    return s * np.asarray(points) @ R.T + t


def arm_region_indices(model: BodyModel, sides=SIDES):
    return np.concatenate([model.region(f"{s}_{part}") for s in sides for part in ("arm", "hand")])


def pa_v2v(est_vertices, gt_vertices, region):
    """Mean per-vertex error in mm after aligning the region of est onto gt."""
    idx = np.asarray(region)
    e, g = np.asarray(est_vertices)[idx], np.asarray(gt_vertices)[idx]
    s, R, t = procrustes_align(e, g)
    return float(np.mean(np.linalg.norm(apply_similarity(e, s, R, t) - g, axis=1)) * 1e3)


def joint_errors(est_joints, gt_joints):
    """Per-joint Euclidean distance in mm (inputs already in a common frame)."""
    return np.linalg.norm(np.asarray(est_joints) - np.asarray(gt_joints), axis=-1) * 1e3


def gt_contact_pairs(gt_vertices, model: BodyModel, threshold=GT_PAIR_THRESHOLD):
    """All (hand vertex, target vertex) pairs within ``threshold`` metres on the GT mesh."""
    v = np.asarray(gt_vertices)
    out = []
    for hand in SIDES:
        H = model.region(f"{hand}_hand")
        T = target_vertices(model, hand)
        hits = cKDTree(v[T]).query_ball_point(v[H], threshold)
        out.extend((int(H[a]), int(T[b])) for a, lst in enumerate(hits) for b in sorted(lst))
    return out


def pair_distances(vertices, pairs):
    if not pairs:
        return np.zeros(0)
    p = np.asarray(pairs)
    v = np.asarray(vertices)
    return np.linalg.norm(v[p[:, 0]] - v[p[:, 1]], axis=1)


def contact_metrics(est_vertices_seq, gt_vertices_seq, model, threshold=DETECTION_THRESHOLD,
                    pair_threshold=GT_PAIR_THRESHOLD):
    """(detection rate %, V-distance mm, per-frame rows); rate and distance are None
    when no GT frame has a contact pair."""
    hits, dists, rows = [], [], []
    for k, (ev, gv) in enumerate(zip(est_vertices_seq, gt_vertices_seq)):
        pairs = gt_contact_pairs(gv, model, pair_threshold)
        if not pairs:
            rows.append({"frame": k, "gt_contact": False, "min_pair_mm": None, "mean_pair_mm": None})
            continue
        d = pair_distances(ev, pairs)
        hits.append(bool(d.min() <= threshold))
        dists.append(float(d.mean()))
        rows.append({"frame": k, "gt_contact": True, "min_pair_mm": float(d.min() * 1e3),
                     "mean_pair_mm": float(d.mean() * 1e3)})
    if not hits:
        return None, None, rows
    return 100.0 * float(np.mean(hits)), 1e3 * float(np.mean(dists)), rows


@dataclass
class MetricsReport:
    pa_v2v_mm: float | None
    joint_errors_mm: dict
    detection_rate_percent: float | None
    v_distance_mm: float | None
    n_frames: int
    n_contact_frames: int
    per_frame: list = field(default_factory=list)

    def to_dict(self, include_frames=False):
        d = asdict(self)
        if not include_frames:
            d.pop("per_frame")
        return d


def evaluate_sequence(est_poses, gt_poses, model: BodyModel, threshold=DETECTION_THRESHOLD,
                      pair_threshold=GT_PAIR_THRESHOLD) -> MetricsReport:
    """Per-frame metrics averaged over GT-contact frames."""
    if len(est_poses) != len(gt_poses):
        raise ValueError("estimate and ground truth differ in length")
    region = arm_region_indices(model)
    jnames = [f"{s}_{j}" for s in SIDES for j in ARM_JOINTS]
    jidx = [model.joint_name_index[n] for n in jnames]
    ev_seq, gv_seq, v2v, jerr = [], [], [], []
    for ep, gp in zip(est_poses, gt_poses):
        efk, gfk = forward_kinematics(model, ep), forward_kinematics(model, gp)
        ev, gv = skin_vertices(model, ep, efk), skin_vertices(model, gp, gfk)
        ev_seq.append(ev)
        gv_seq.append(gv)
    rate, vdist, rows = contact_metrics(ev_seq, gv_seq, model, threshold, pair_threshold)
    for k, row in enumerate(rows):
        if not row["gt_contact"]:
            continue
        ev, gv = ev_seq[k], gv_seq[k]
        s, R, t = procrustes_align(ev[region], gv[region])
        row["pa_v2v_mm"] = float(np.mean(np.linalg.norm(apply_similarity(ev[region], s, R, t)
                                                         - gv[region], axis=1)) * 1e3)
        ej = apply_similarity(forward_kinematics(model, est_poses[k]).positions[jidx], s, R, t)
        gj = forward_kinematics(model, gt_poses[k]).positions[jidx]
        je = joint_errors(ej, gj)
        v2v.append(row["pa_v2v_mm"])
        jerr.append(je)
    joint_report = {}
    if jerr:
        mean = np.mean(jerr, axis=0)
        joint_report = {n: float(e) for n, e in zip(jnames, mean)}
    return MetricsReport(float(np.mean(v2v)) if v2v else None, joint_report, rate, vdist,
                         len(gt_poses), len(jerr), rows)
