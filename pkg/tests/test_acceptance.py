"""End-to-end acceptance checks. Each prints one PASS/FAIL line with its measured numbers."""

import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from selfcontact import kernels, synth
from selfcontact.body import SIDES, arm_mask, hand_vertices, skin_vertices, target_vertices
from selfcontact.cli import main
from selfcontact.detection import detect_contacts
from selfcontact.metrics import evaluate_sequence, procrustes_align
from selfcontact.optimizer import (RefinementConfig, apply_global, penetration_depth, prepare_frame,
                                   refine_sequence, select_active_arms, select_contact_pairs,
                                   total_loss, total_loss_grad)
from selfcontact.template import default_model

from test_metrics import umeyama_oracle

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(n, name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n} {name}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def model():
    return default_model()


@pytest.fixture(scope="module")
def corpus(model):
    return synth.refinement_corpus(20, 0, model)


@pytest.fixture(scope="module")
def refined(corpus, model):
    t0 = time.perf_counter()
    out = [refine_sequence(s.perturbed, s.contact_flags, s.keypoints, s.camera, model) for _, s in corpus]
    return out, time.perf_counter() - t0


# -- 1, 2: detector --------------------------------------------------------------------------

def test_detector_accuracy(report):
    t0 = time.perf_counter()
    corpus = synth.detector_corpus(200, 30, seed=0)
    tp = fn = tn = fp = 0
    adversarial_hits = 0
    for k, (script, trace, truth) in enumerate(corpus):
        est = np.array(detect_contacts(trace, n_frames=len(truth.frame_flags)).frame_flags)
        gt = np.array(truth.frame_flags)
        tp += np.sum(est & gt)
        fn += np.sum(~est & gt)
        tn += np.sum(~est & ~gt)
        fp += np.sum(est & ~gt)
        if k >= 170 and est.any():
            adversarial_hits += 1
    elapsed = time.perf_counter() - t0
    sens, spec = tp / (tp + fn), tn / (tn + fp)
    ok = sens >= 0.85 and spec >= 0.99 and adversarial_hits == 0 and elapsed < 10.0
    report(1, "detector accuracy", ok,
           f"sensitivity {sens:.3f} (>=0.85), specificity {spec:.4f} (>=0.99), "
           f"adversarial detections {adversarial_hits} (0), {elapsed:.1f} s (<10)")


def test_detector_tolerance(report):
    onset_err, offset_err = [], []
    for script, trace, truth in synth.detector_corpus(200, 30, seed=0)[:170]:
        tl = detect_contacts(trace)
        for ev in script.events:
            if not ev.contact or ev.drop < 0.10 or ev.offset - ev.onset < 0.3:
                continue
            hits = [(a, b) for a, b in tl.intervals if a < ev.offset and b > ev.onset]
            if hits:
                onset_err.append(abs(hits[0][0] - ev.onset))
                offset_err.append(abs(hits[-1][1] - ev.offset))
    on, off = np.median(onset_err) * 1e3, np.median(offset_err) * 1e3
    report(2, "detector tolerance", on <= 50 and off <= 100,
           f"median onset error {on:.1f} ms (<=50), offset {off:.1f} ms (<=100) over {len(onset_err)} events")


# -- 3, 4, 6: refinement on the sequence corpus ------------------------------------------------

def _contact_stats(poses_seq, corpus, model):
    det, vd, pa = [], [], []
    for poses, (_, s) in zip(poses_seq, corpus):
        rep = evaluate_sequence(poses, s.gt, model)
        for row in rep.per_frame:
            if row["gt_contact"]:
                det.append(row["min_pair_mm"] <= 5.0)
                vd.append(row["mean_pair_mm"])
                pa.append(row["pa_v2v_mm"])
    return 100 * np.mean(det), np.mean(vd), np.mean(pa)


def test_refinement_efficacy(report, corpus, refined, model):
    results, elapsed = refined
    d0, v0, p0 = _contact_stats([s.perturbed for _, s in corpus], corpus, model)
    d1, v1, p1 = _contact_stats([r.poses for r in results], corpus, model)
    vfall, pfall = 1 - v1 / v0, 1 - p1 / p0
    ok = d0 < 50 and d1 >= 75 and vfall >= 0.15 and pfall >= 0.10 and elapsed < 60
    report(3, "refinement efficacy", ok,
           f"detection rate {d0:.1f}% -> {d1:.1f}% (<50 -> >=75), V-distance {v0:.1f} -> {v1:.1f} mm "
           f"(-{100 * vfall:.0f}%, >=15%), arm PA-V2V {p0:.1f} -> {p1:.1f} mm (-{100 * pfall:.0f}%, >=10%), "
           f"refine {elapsed:.1f} s (<60)")


def test_mask_invariance(report, corpus, refined, model):
    results, _ = refined
    bad = 0
    frames = 0
    for r, (_, s) in zip(results, corpus):
        shared = apply_global(s.perturbed, r.init.pose.global_orient, r.init.pose.translation)
        for f, p in zip(r.frames, shared):
            frames += 1
            arms = set(f.active_arms)
            free = ~arm_mask(model, arms).bits if arms else np.ones(63, bool)
            if not (np.array_equal(f.pose.body_pose[free], p.body_pose[free])
                    and np.array_equal(f.pose.global_orient, p.global_orient)
                    and np.array_equal(f.pose.translation, p.translation)):
                bad += 1
    report(4, "mask invariance", bad == 0, f"{bad} of {frames} frames changed outside the arm mask (0)")


def test_convergence_soundness(report, corpus, refined, model):
    results, _ = refined
    cfg = RefinementConfig()
    n_conv, worst_gap, worst_pen = 0, 0.0, 0.0
    for r, (_, s) in zip(results, corpus):
        for f in r.frames:
            if not f.converged:
                continue
            n_conv += 1
            vc = s.camera.to_camera(skin_vertices(model, f.pose))
            for p in f.pairs:
                worst_gap = max(worst_gap, float(np.max(np.abs(vc[p.hand_vertex] - vc[p.target_vertex]))))
                worst_pen = max(worst_pen, penetration_depth(p, vc[p.hand_vertex], vc[p.target_vertex]))
    ok = worst_gap <= cfg.contact_tolerance and worst_pen <= cfg.penetration_tolerance
    report(6, "convergence soundness", ok,
           f"{n_conv} converged frames, max recomputed gap {worst_gap * 1e3:.2f} mm (<=5), "
           f"max penetration {worst_pen * 1e3:.2f} mm (<=2)")


# -- 5: gradient ---------------------------------------------------------------------------------

def test_gradient_fidelity(report, corpus, model):
    rng = np.random.default_rng(5)
    cfg = RefinementConfig()
    worst, tested = 0.0, 0
    frames = [(s, k) for _, s in corpus for k, f in enumerate(s.contact_flags) if f]
    while tested < 100:
        s, k = frames[int(rng.integers(len(frames)))]
        pose = s.perturbed[k].copy()
        pose.body_pose += rng.normal(0, 0.05, 63)
        problem = prepare_frame(pose, s.keypoints[k], s.camera, model, cfg)
        if problem is None:
            continue
        _, g = total_loss_grad(pose, problem)
        h = 1e-5
        num = np.empty(63)
        for i in range(63):
            a, b = pose.copy(), pose.copy()
            a.body_pose[i] += h
            b.body_pose[i] -= h
            num[i] = (total_loss(a, problem) - total_loss(b, problem)) / (2 * h)
        worst = max(worst, float(np.abs(g - num).max() / np.abs(num).max()))
        tested += 1
    report(5, "gradient fidelity", worst <= 1e-4, f"max relative error {worst:.2e} over {tested} poses (<=1e-4)")


# -- 7: oracle equivalence -----------------------------------------------------------------------

def _brute_pair(model, camera, verts, hand, cfg):
    vc = camera.to_camera(verts)
    nc = model.normals @ camera.rotation.T
    H = hand_vertices(model, hand)
    T = target_vertices(model, hand)
    T = T[np.einsum("ia,ia->i", nc[T], -vc[T]) > 0]
    d = vc[H][:, None, :] - vc[T][None]
    d2 = d[..., 0] ** 2 + d[..., 1] ** 2 + (cfg.pair_z_weight * d[..., 2]) ** 2
    a, b = np.unravel_index(np.argmin(d2), d2.shape)
    return int(H[a]), int(T[b]), float(np.sqrt(d2[a, b]))


def _brute_median(values, half):
    n = len(values)
    return np.array([np.sort(values[max(0, i - half):i + half + 1])[
        (min(n, i + half + 1) - max(0, i - half) - 1) // 2] for i in range(n)])


def test_oracle_equivalence(report, corpus, model):
    cfg = RefinementConfig()
    rng = np.random.default_rng(7)
    pair_bad = 0
    for j in range(50):
        _, s = corpus[j % len(corpus)]
        k = int(rng.integers(len(s.perturbed)))
        verts = skin_vertices(model, s.perturbed[k])
        for hand in SIDES:
            got = select_contact_pairs(model, verts, hand, s.camera, cfg)[0]
            hv, tv, d = _brute_pair(model, s.camera, verts, hand, cfg)
            if (got.hand_vertex, got.target_vertex) != (hv, tv) or abs(got.distance - d) > 1e-12:
                pair_bad += 1
    pa_err = 0.0
    for seed in range(50):
        r = np.random.default_rng(seed)
        X = r.normal(size=(60, 3))
        Y = r.uniform(0.5, 2) * X @ Rotation.random(random_state=seed).as_matrix().T + r.normal(size=3)
        Y += r.normal(0, 0.02, Y.shape)
        (s1, R1, t1), (s2, R2, t2) = procrustes_align(X, Y), umeyama_oracle(X, Y)
        pa_err = max(pa_err, abs(s1 - s2), np.abs(R1 - R2).max(), np.abs(t1 - t2).max())
    med_bad = 0
    for _ in range(1000):
        x = rng.normal(size=int(rng.integers(1, 400)))
        half = int(rng.integers(0, 60))
        if not np.array_equal(kernels.sliding_median(x, half), _brute_median(x, half)):
            med_bad += 1
    ok = pair_bad == 0 and pa_err <= 1e-10 and med_bad == 0
    report(7, "oracle equivalence", ok,
           f"pair mismatches {pair_bad}/100, Procrustes max deviation {pa_err:.1e} (<=1e-10), "
           f"median mismatches {med_bad}/1000")


# -- 8: determinism --------------------------------------------------------------------------------

def test_determinism(report, tmp_path):
    def pipeline(root):
        s, d, r, e = (root / n for n in ("synth", "detect", "refine", "eval"))
        codes = [
            main(["synth", "--out", str(s), "--seed", "11"]),
            main(["detect", "--out", str(d), "--signal", str(s / "trace.csv"), "--n-frames", "90"]),
            main(["refine", "--out", str(r), "--poses", str(s / "poses.json"), "--keypoints",
                  str(s / "keypoints.json"), "--camera", str(s / "camera.json"), "--model",
                  str(s / "model.json"), "--timeline", str(d / "timeline.json"), "--threads", "4"]),
            main(["eval", "--out", str(e), "--est", str(r / "refined_poses.json"), "--gt",
                  str(s / "gt_poses.json"), "--model", str(s / "model.json")]),
        ]
        return codes, sorted(p for p in root.rglob("*") if p.is_file())

    ca, fa = pipeline(tmp_path / "a")
    cb, fb = pipeline(tmp_path / "b")
    diff = [p.name for p, q in zip(fa, fb) if p.read_bytes() != q.read_bytes()]
    ok = ca == cb == [0, 0, 0, 0] and len(fa) == len(fb) == 14 and not diff
    report(8, "determinism", ok, f"{len(fa)} output files, {len(diff)} differ, exit codes {ca}")


# -- 9: activation rule -------------------------------------------------------------------------

def test_activation_rule(report):
    grid = np.unique(np.concatenate([np.arange(1, 101) * 1e-3, [0.010, 0.015, 0.020, 0.030]]))
    bad = 0
    for dl in grid:
        for dr in grid:
            both = abs(dl - dr) <= 0.5 * min(dl, dr)
            expected = {"left", "right"} if both else ({"left"} if dl <= dr else {"right"})
            bad += select_active_arms(dl, dr) != expected
    boundary = select_active_arms(0.010, 0.015) == {"left", "right"}
    examples = (select_active_arms(0.010, 0.014) == {"left", "right"}
                and select_active_arms(0.010, 0.016) == {"left"})
    ok = bad == 0 and boundary and examples
    report(9, "arm activation rule", ok,
           f"{bad} mismatches over {grid.size ** 2} grid pairs, equality boundary -> both: {boundary}")
