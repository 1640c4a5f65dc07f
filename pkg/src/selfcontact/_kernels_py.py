"""Pure numpy versions of the compiled kernels, used when the extension is unavailable."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def sliding_median(values, half):
    values = np.ascontiguousarray(values, dtype=np.float64)
    n = values.shape[0]
    out = np.empty(n)
    if n == 0:
        return out
    width = 2 * half + 1
    if n >= width:
        windows = np.sort(sliding_window_view(values, width), axis=1)
        out[half:n - half] = windows[:, half]
        edges = list(range(min(half, n))) + list(range(max(n - half, half), n))
    else:
        edges = range(n)
    for i in edges:
        w = np.sort(values[max(0, i - half):min(n, i + half + 1)])
        out[i] = w[(w.size - 1) // 2]
    return out


def closest_pairs_by_region(hand, targets, labels, n_regions, z_weight):
    hand = np.asarray(hand, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    labels = np.asarray(labels)
    best_d = np.full(n_regions, np.inf)
    best_h = np.full(n_regions, -1, dtype=np.int64)
    best_t = np.full(n_regions, -1, dtype=np.int64)
    if hand.shape[0] == 0:
        return best_d, best_h, best_t
    for r in range(n_regions):
        cols = np.flatnonzero(labels == r)
        if cols.size == 0:
            continue
        diff = hand[:, None, :] - targets[None, cols, :]
        dz = z_weight * diff[..., 2]
        # same operation order as the compiled loop
        d2 = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1] + dz * dz
        # argmin on the row-major flattening keeps the lowest (hand, target) on ties
        k = int(np.argmin(d2))
        a, b = divmod(k, cols.size)
        best_d[r] = d2[a, b]
        best_h[r] = a
        best_t[r] = cols[b]
    return best_d, best_h, best_t


def _skew_batch(v):
    K = np.zeros(v.shape[:-1] + (3, 3))
    K[..., 0, 1], K[..., 0, 2] = -v[..., 2], v[..., 1]
    K[..., 1, 0], K[..., 1, 2] = v[..., 2], -v[..., 0]
    K[..., 2, 0], K[..., 2, 1] = -v[..., 1], v[..., 0]
    return K


def fk_chain(local, parents, offsets, root_shift):
    local = np.asarray(local, dtype=np.float64)
    J = local.shape[0]
    t2 = np.einsum("ka,ka->k", local, local)
    th = np.sqrt(t2)
    K = _skew_batch(local)
    K2 = K @ K
    safe = np.where(th < 1e-8, 1.0, th)
    a = np.where(th < 1e-8, 1.0, np.sin(safe) / safe)
    b = np.where(th < 1e-8, 0.5, (1.0 - np.cos(safe)) / (safe * safe))
    safe = np.where(th < 1e-5, 1.0, th)
    c1 = np.where(th < 1e-5, 0.5, (1.0 - np.cos(safe)) / (safe * safe))
    c2 = np.where(th < 1e-5, 1.0 / 6.0, (safe - np.sin(safe)) / (safe ** 3))
    eye = np.eye(3)
    Rl = eye + a[:, None, None] * K + b[:, None, None] * K2
    Jl = eye + c1[:, None, None] * K + c2[:, None, None] * K2
    R = np.empty((J, 3, 3))
    o = np.empty((J, 3))
    ax = np.empty((J, 3, 3))
    for k in range(J):
        p = parents[k]
        if p < 0:
            P = eye
            o[k] = offsets[k] + root_shift
        else:
            P = R[p]
            o[k] = o[p] + P @ offsets[k]
        R[k] = P @ Rl[k]
        ax[k] = (P @ Jl[k]).T
    return R, o, ax
