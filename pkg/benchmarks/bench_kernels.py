"""Compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Times each kernel in-process for both implementations, then runs the detector and a
single-frame refinement end to end in subprocesses with and without
SELFCONTACT_PURE_PYTHON=1.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from selfcontact import _kernels_py
from selfcontact.template import build_capsule_person

try:
    from selfcontact import _kernels
except ImportError:
    _kernels = None


def kernel_cases():
    rng = np.random.default_rng(0)
    signal = rng.normal(size=20_000)
    hand = rng.normal(size=(300, 3))
    targets = rng.normal(size=(3000, 3))
    labels = rng.integers(0, 3, targets.shape[0]).astype(np.int64)
    coarse = build_capsule_person()
    local = rng.normal(0, 0.3, (coarse.n_joints, 3))
    parents = coarse.parents.astype(np.int64)
    return {
        "sliding_median (20k samples, width 101)": lambda k: k.sliding_median(signal, 50),
        "closest_pairs_by_region (300 x 3000)": lambda k: k.closest_pairs_by_region(hand, targets, labels, 3, 0.25),
        f"fk_chain ({coarse.n_joints} joints)": lambda k: k.fk_chain(local, parents, coarse.offsets, np.zeros(3)),
    }


E2E = """
import time, numpy as np
from selfcontact import kernels, synth
from selfcontact.detection import detect_contacts
from selfcontact.optimizer import refine_frame
from selfcontact.template import default_model
m = default_model()
_, trace, _ = synth.detector_corpus(1, 0, seed=0)[0]
t = time.perf_counter()
for _ in range(5):
    detect_contacts(trace)
det = (time.perf_counter() - t) / 5
s = synth.gen_motion(synth.MotionScript(30, 30.0, (synth.ContactEvent(12, 18, "left", "chest"),), seed=1), m)
t = time.perf_counter()
for k in range(12, 18):
    refine_frame(s.perturbed[k], True, s.keypoints[k], s.camera, m)
ref = (time.perf_counter() - t) / 6
print(kernels.COMPILED, det, ref)
"""


def end_to_end(pure):
    env = dict(os.environ)
    env.pop("SELFCONTACT_PURE_PYTHON", None)
    if pure:
        env["SELFCONTACT_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
    compiled, det, ref = out.stdout.split()
    return compiled == "True", float(det), float(ref)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    cases = kernel_cases()
    print(f"{'kernel':45s} {'numpy ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    for name, call in cases.items():
        py = min(timeit.repeat(lambda: call(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if _kernels is None:
            print(f"{name:45s} {py:10.3f} {'n/a':>12s}")
            continue
        c = min(timeit.repeat(lambda: call(_kernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:45s} {py:10.3f} {c:12.3f} {py / c:7.1f}x")
    print()
    print(f"{'end to end':45s} {'numpy ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    _, dp, rp = end_to_end(pure=True)
    compiled, dc, rc = end_to_end(pure=False)
    if not compiled:
        print("extension not built; compiled column repeats the fallback")
    for name, a, b in (("detect_contacts (12 s trace)", dp, dc), ("refine_frame (dense mesh)", rp, rc)):
        print(f"{name:45s} {a * 1e3:10.1f} {b * 1e3:12.1f} {a / b:7.1f}x")


if __name__ == "__main__":
    main()
