"""Procedural capsule-person template in the 22-joint body layout.

World frame: y up, body faces +z, the body's left is +x; rest pose is a T-pose.
"""

from __future__ import annotations

import functools

import numpy as np

from .body import BodyModel

JOINTS = [
    # name, parent, offset from parent (root: absolute rest position)
    ("pelvis", -1, (0.0, 0.95, 0.0)),
    ("left_hip", 0, (0.09, -0.08, 0.0)),
    ("right_hip", 0, (-0.09, -0.08, 0.0)),
    ("spine1", 0, (0.0, 0.11, -0.01)),
    ("left_knee", 1, (0.01, -0.40, 0.0)),
    ("right_knee", 2, (-0.01, -0.40, 0.0)),
    ("spine2", 3, (0.0, 0.13, 0.0)),
    ("left_ankle", 4, (0.0, -0.40, -0.02)),
    ("right_ankle", 5, (0.0, -0.40, -0.02)),
    ("spine3", 6, (0.0, 0.06, 0.02)),
    ("left_foot", 7, (0.0, -0.05, 0.12)),
    ("right_foot", 8, (0.0, -0.05, 0.12)),
    ("neck", 9, (0.0, 0.22, -0.02)),
    ("left_collar", 9, (0.07, 0.12, -0.01)),
    ("right_collar", 9, (-0.07, 0.12, -0.01)),
    ("head", 12, (0.0, 0.08, 0.03)),
    ("left_shoulder", 13, (0.11, 0.03, 0.0)),
    ("right_shoulder", 14, (-0.11, 0.03, 0.0)),
    ("left_elbow", 16, (0.26, 0.0, 0.0)),
    ("right_elbow", 17, (-0.26, 0.0, 0.0)),
    ("left_wrist", 18, (0.25, 0.0, 0.0)),
    ("right_wrist", 19, (-0.25, 0.0, 0.0)),
]

HEAD_CENTER = np.array([0.0, 1.64, 0.02])
HEAD_RADII = np.array([0.08, 0.11, 0.095])
TORSO_RADII = (0.15, 0.10)  # x, z
TORSO_SPAN = (0.92, 1.42)
HAND_HALF = np.array([0.09, 0.02, 0.045])  # along arm, palm normal, width
HAND_CENTER_OFFSET = 0.085


def _smooth(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _fibonacci(n):
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    golden = np.pi * (1.0 + 5 ** 0.5)
    th = golden * i
    return np.stack([np.cos(th) * np.sin(phi), np.cos(phi), np.sin(th) * np.sin(phi)], axis=1)


def _ellipsoid(center, radii, n):
    u = _fibonacci(n)
    pts = center + u * radii
    nrm = u / radii
    return pts, nrm / np.linalg.norm(nrm, axis=1, keepdims=True)


def _ellipsoid_area(r):
    # Knud Thomsen's approximation
    p = 1.6075
    a, b, c = r ** p
    return 4 * np.pi * ((a * b + a * c + b * c) / 3) ** (1 / p)


def _tube_x(x0, x1, y, z, radius, n_rings, n_around, sign):
    """Cylinder along the x axis (both arms lie along x in the rest pose)."""
    pts, nrm, ts = [], [], []
    for r in range(n_rings):
        t = (r + 0.5) / n_rings
        x = x0 + t * (x1 - x0)
        phase = (r % 2) * np.pi / n_around
        for a in range(n_around):
            ang = 2 * np.pi * a / n_around + phase
            d = np.array([0.0, np.cos(ang), np.sin(ang)])
            pts.append(np.array([x, y, z]) + radius * d)
            nrm.append(d)
            ts.append(t)
    return np.array(pts), np.array(nrm), np.array(ts)


def _count(length, spacing, minimum):
    return max(minimum, int(round(length / spacing)))


def build_capsule_person(spacing=None) -> BodyModel:
    """Capsule person; ``spacing`` (metres) sets the surface sampling of the upper body.

    ``None`` gives the coarse ~840-vertex layout.
    """
    names = [j[0] for j in JOINTS]
    idx = {n: i for i, n in enumerate(names)}
    parents = [j[1] for j in JOINTS]
    offsets = np.array([j[2] for j in JOINTS])
    n_j = len(JOINTS)

    # rest joint positions
    rest = np.zeros((n_j, 3))
    for j in range(n_j):
        rest[j] = offsets[j] if parents[j] < 0 else rest[parents[j]] + offsets[j]

    verts, norms, rows, labels = [], [], [], []

    def add(points, normals, weight_rows, region):
        verts.extend(points)
        norms.extend(normals)
        rows.extend(weight_rows)
        labels.extend([region] * len(points))

    def onehot(j, n):
        w = np.zeros((n, n_j))
        w[:, j] = 1.0
        return w

    # torso: elliptic cylinder blended along the spine by height
    spine = ["pelvis", "spine1", "spine2", "spine3", "neck"]
    spine_y = np.array([rest[idx[s], 1] for s in spine])
    if spacing is None:
        n_rings, n_around = 11, 18
    else:
        n_rings = _count(TORSO_SPAN[1] - TORSO_SPAN[0], spacing, 11)
        n_around = _count(np.pi * (3 * sum(TORSO_RADII) - np.sqrt((3 * TORSO_RADII[0] + TORSO_RADII[1])
                                                                  * (TORSO_RADII[0] + 3 * TORSO_RADII[1]))),
                          spacing, 18)
    pts, nrm = [], []
    for r in range(n_rings):
        y = TORSO_SPAN[0] + (TORSO_SPAN[1] - TORSO_SPAN[0]) * r / (n_rings - 1)
        phase = (r % 2) * np.pi / n_around
        for a in range(n_around):
            ang = 2 * np.pi * a / n_around + phase
            c, s = np.cos(ang), np.sin(ang)
            pts.append([TORSO_RADII[0] * c, y, TORSO_RADII[1] * s])
            n = np.array([c / TORSO_RADII[0], 0.0, s / TORSO_RADII[1]])
            nrm.append(n / np.linalg.norm(n))
    # neck ring stack
    for r in range(2):
        y = 1.46 + 0.04 * r
        for a in range(10):
            ang = 2 * np.pi * a / 10 + r * np.pi / 10
            pts.append([0.05 * np.cos(ang), y, -0.01 + 0.05 * np.sin(ang)])
            nrm.append([np.cos(ang), 0.0, np.sin(ang)])
    pts, nrm = np.array(pts), np.array(nrm)
    W = np.zeros((len(pts), n_j))
    for i, y in enumerate(pts[:, 1]):
        k = int(np.clip(np.searchsorted(spine_y, y) - 1, 0, len(spine) - 2))
        t = float(np.clip((y - spine_y[k]) / (spine_y[k + 1] - spine_y[k]), 0.0, 1.0))
        W[i, idx[spine[k]]] += 1.0 - t
        W[i, idx[spine[k + 1]]] += t
    add(pts, nrm, W, "torso")

    # head
    n_head = 140 if spacing is None else _count(_ellipsoid_area(HEAD_RADII), spacing ** 2, 140)
    pts, nrm = _ellipsoid(HEAD_CENTER, HEAD_RADII, n_head)
    add(pts, nrm, onehot(idx["head"], len(pts)), "head")

    for side, sign in (("left", 1.0), ("right", -1.0)):
        sh, el, wr = (idx[f"{side}_{n}"] for n in ("shoulder", "elbow", "wrist"))
        y, z = rest[sh, 1], rest[sh, 2]
        # upper arm
        if spacing is None:
            ur, ua, fr, fa = 7, 8, 7, 8
        else:
            ur, ua = _count(abs(rest[el, 0] - rest[sh, 0]), spacing, 7), _count(2 * np.pi * 0.045, spacing, 8)
            fr, fa = _count(abs(rest[wr, 0] - rest[el, 0]), spacing, 7), _count(2 * np.pi * 0.037, spacing, 8)
        pts, nrm, t = _tube_x(rest[sh, 0], rest[el, 0], y, z, 0.045, ur, ua, sign)
        W = np.zeros((len(pts), n_j))
        b = 0.5 * _smooth((t - 0.7) / 0.3)
        W[:, sh] = 1.0 - b
        W[:, el] = b
        arm_pts, arm_nrm, arm_W = [pts], [nrm], [W]
        # forearm
        pts, nrm, t = _tube_x(rest[el, 0], rest[wr, 0], y, z, 0.037, fr, fa, sign)
        W = np.zeros((len(pts), n_j))
        a = 0.5 * (1.0 - _smooth(t / 0.3))
        c = 0.5 * _smooth((t - 0.7) / 0.3)
        W[:, sh] = a
        W[:, wr] = c
        W[:, el] = 1.0 - a - c
        arm_pts.append(pts)
        arm_nrm.append(nrm)
        arm_W.append(W)
        add(np.concatenate(arm_pts), np.concatenate(arm_nrm), np.concatenate(arm_W), f"{side}_arm")
        # hand: flattened ellipsoid beyond the wrist, palm facing -y in the rest pose
        center = rest[wr] + np.array([sign * HAND_CENTER_OFFSET, 0.0, 0.0])
        n_hand = 70 if spacing is None else _count(_ellipsoid_area(HAND_HALF), spacing ** 2, 70)
        pts, nrm = _ellipsoid(center, HAND_HALF, n_hand)
        add(pts, nrm, onehot(wr, len(pts)), f"{side}_hand")

    # legs
    for side in ("left", "right"):
        hip, knee, ankle = (idx[f"{side}_{n}"] for n in ("hip", "knee", "ankle"))
        pts, nrm, W = [], [], []
        for seg, (j0, j1, r0, r1) in enumerate(((hip, knee, 0.075, 0.055), (knee, ankle, 0.05, 0.04))):
            p0, p1 = rest[j0], rest[j1]
            for r in range(5):
                t = (r + 0.5) / 5
                c = p0 + t * (p1 - p0)
                rad = r0 + t * (r1 - r0)
                for a in range(6):
                    ang = 2 * np.pi * a / 6 + (r % 2) * np.pi / 6
                    d = np.array([np.cos(ang), 0.0, np.sin(ang)])
                    pts.append(c + rad * d)
                    nrm.append(d)
                    w = np.zeros(n_j)
                    bl = 0.5 * _smooth((t - 0.7) / 0.3)
                    w[j0] = 1.0 - bl
                    w[j1] = bl
                    W.append(w)
        add(np.array(pts), np.array(nrm), np.array(W), "lower_body")

    labels = np.array(labels)
    regions = {name: np.flatnonzero(labels == name).tolist()
               for name in ("left_hand", "right_hand", "left_arm", "right_arm", "head", "torso",
                            "lower_body")}
    return BodyModel(names, parents, offsets, np.array(verts), np.array(rows), regions,
                     {n: i for i, n in enumerate(names)}, np.array(norms))


DEFAULT_SPACING = 0.012  # m; dense enough that a touch covers dozens of vertex pairs


@functools.lru_cache(maxsize=4)
def default_model(spacing=DEFAULT_SPACING) -> BodyModel:
    """Shared capsule person used by the CLI and the synthetic corpora."""
    return build_capsule_person(spacing)
