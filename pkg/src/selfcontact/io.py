"""File formats: CSV traces and tables, JSON sequences and reports, TOML/JSON config,
SVG plots, and an output directory that only appears once a run succeeds."""

from __future__ import annotations

import contextlib
import csv
import json
import math
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from .body import BodyModel, PoseParams
from .camera import Camera, Keypoints2D
from .detection import BioimpedanceTrace, ContactTimeline
from .errors import ConfigError, InputError, InsufficientData
from .template import build_capsule_person, default_model

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


def _require(path):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"missing input file: {p}")
    return p


def read_json(path):
    p = _require(path)
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: line {exc.lineno}: {exc.msg}") from exc


def dump_json(obj):
    """Stable text form: sorted keys, fixed indent, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


# -- traces ------------------------------------------------------------------------

def read_trace_csv(path) -> BioimpedanceTrace:
    """Two numeric columns (time in seconds, magnitude in ohms); an optional header row."""
    p = _require(path)
    times, mags = [], []
    with p.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and not _is_number(row[0]):
                continue
            if len(row) < 2:
                raise InputError(f"{p}: line {lineno}: expected time and magnitude columns")
            try:
                t, m = float(row[0]), float(row[1])
            except ValueError:
                raise InputError(f"{p}: line {lineno}: non-numeric value {row[:2]}") from None
            if not (math.isfinite(t) and math.isfinite(m)):
                raise InputError(f"{p}: line {lineno}: non-finite value")
            times.append(t)
            mags.append(m)
    if len(times) < 2:
        raise InsufficientData(f"{p}: fewer than 2 samples")
    return BioimpedanceTrace(np.array(times), np.array(mags))


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def trace_csv_text(trace: BioimpedanceTrace):
    lines = ["time_s,impedance_ohm"]
    lines += [f"{t:.6f},{m:.6f}" for t, m in zip(trace.times, trace.magnitudes)]
    return "\n".join(lines) + "\n"


def read_frame_times(path):
    """One time (seconds) per line, optional header."""
    p = _require(path)
    out = []
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        cell = line.split(",")[0].strip()
        if not cell:
            continue
        if lineno == 1 and not _is_number(cell):
            continue
        try:
            out.append(float(cell))
        except ValueError:
            raise InputError(f"{p}: line {lineno}: non-numeric frame time {cell!r}") from None
    if not out:
        raise InsufficientData(f"{p}: no frame times")
    return np.array(out)


# -- sequences -------------------------------------------------------------------------

def poses_to_json(poses):
    return {"frames": [p.to_dict() for p in poses]}


def read_poses(path):
    data = read_json(path)
    try:
        return [PoseParams.from_dict(f) for f in data["frames"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad pose sequence: {exc}") from exc


def keypoints_to_json(keypoints):
    return {"frames": [k.to_dict() for k in keypoints]}


def read_keypoints(path, joint_map=None):
    data = read_json(path)
    try:
        return [Keypoints2D.from_dict(f, joint_map) for f in data["frames"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad keypoint sequence: {exc}") from exc


def read_camera(path) -> Camera:
    return Camera.from_dict(read_json(path))


def read_timeline(path) -> ContactTimeline:
    data = read_json(path)
    try:
        return ContactTimeline.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad timeline: {exc}") from exc


def model_reference(spacing):
    return {"template": "capsule_person", "spacing": spacing}


def read_model(path=None) -> BodyModel:
    """Either a template reference or an explicit joint/vertex/weight table."""
    if path is None:
        return default_model()
    data = read_json(path)
    if "template" in data:
        if data["template"] != "capsule_person":
            raise InputError(f"{path}: unknown template {data['template']!r}")
        spacing = data.get("spacing")
        return default_model(float(spacing)) if spacing else build_capsule_person(None)
    try:
        return BodyModel.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad model description: {exc}") from exc


# -- configuration ---------------------------------------------------------------------

CONFIG_SECTIONS = ("detector", "refinement", "smoothing", "run")


def read_config(path):
    """TOML or JSON with optional [detector], [refinement], [smoothing] and [run] tables."""
    if path is None:
        return {}
    p = _require(path)
    try:
        if p.suffix.lower() == ".toml":
            data = tomllib.loads(p.read_text())
        else:
            data = json.loads(p.read_text())
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a table")
    unknown = set(data) - set(CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"{p}: unknown sections {sorted(unknown)}")
    for k, v in data.items():
        if not isinstance(v, dict):
            raise ConfigError(f"{p}: section {k!r} must be a table")
    return data


# -- per-frame tables --------------------------------------------------------------------

def table_csv_text(rows, columns):
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(_cell(r.get(c)) for c in columns))
    return "\n".join(lines) + "\n"


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


# -- SVG ---------------------------------------------------------------------------------

def _polyline(xs, ys, x_map, y_map, color, width=1.0):
    pts = " ".join(f"{x_map(x):.2f},{y_map(y):.2f}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{pts}"/>'


def _frame(width, height, title, x_label, y_label, lo, hi, x0, x1):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{width / 2:.0f}" y="{height - 6}" text-anchor="middle" font-size="11">{x_label}</text>',
        f'<text x="12" y="{height / 2:.0f}" font-size="11" transform="rotate(-90 12 {height / 2:.0f})" '
        f'text-anchor="middle">{y_label}</text>',
        f'<text x="52" y="34" font-size="10">{hi:.4g}</text>',
        f'<text x="52" y="{height - 34}" font-size="10">{lo:.4g}</text>',
        f'<text x="60" y="{height - 22}" font-size="10">{x0:.3g}</text>',
        f'<text x="{width - 20}" y="{height - 22}" font-size="10" text-anchor="end">{x1:.3g}</text>',
    ]


def _maps(x0, x1, lo, hi, width, height, pad=(60, 20, 40, 40)):
    left, right, top, bottom = pad
    sx = (width - left - right) / max(x1 - x0, 1e-12)
    sy = (height - top - bottom) / max(hi - lo, 1e-12)
    return (lambda x: left + (x - x0) * sx), (lambda y: height - bottom - (y - lo) * sy)


def signal_svg(trace: BioimpedanceTrace, timeline: ContactTimeline, width=900, height=300,
               max_points=3000):
    """Impedance magnitude with contact spans drawn thick red and onset/offset markers."""
    t, m = trace.times, trace.magnitudes
    step = max(1, t.size // max_points)
    ts, ms = t[::step], m[::step]
    lo, hi = float(m.min()), float(m.max())
    pad = 0.05 * (hi - lo or 1.0)
    lo, hi = lo - pad, hi + pad
    x_map, y_map = _maps(float(t[0]), float(t[-1]), lo, hi, width, height)
    out = _frame(width, height, "impedance magnitude", "time (s)", "|Z| (ohm)", lo, hi,
                 float(t[0]), float(t[-1]))
    out.append(_polyline(ts, ms, x_map, y_map, "#333333"))
    for a, b in timeline.intervals:
        sel = (t >= a) & (t <= b)
        if np.any(sel):
            out.append(_polyline(t[sel][::step], m[sel][::step], x_map, y_map, "#d62728", 3.0))
        for x, color in ((a, "#2ca02c"), (b, "#1f77b4")):
            out.append(f'<line x1="{x_map(x):.2f}" x2="{x_map(x):.2f}" y1="{y_map(hi):.2f}" '
                       f'y2="{y_map(lo):.2f}" stroke="{color}" stroke-dasharray="4 3"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def error_curve_svg(rows, width=900, height=300):
    """Per-frame closest ground-truth pair distance and arm PA error over frames."""
    frames = [r["frame"] for r in rows]
    series = {"min pair distance (mm)": ("min_pair_mm", "#d62728"),
              "arm PA error (mm)": ("pa_v2v_mm", "#1f77b4")}
    vals = [r.get(k) for r in rows for k, _ in series.values() if r.get(k) is not None]
    lo, hi = 0.0, max(vals) if vals else 1.0
    x0, x1 = (frames[0], frames[-1]) if frames else (0, 1)
    x_map, y_map = _maps(x0, max(x1, x0 + 1), lo, hi * 1.05 or 1.0, width, height)
    out = _frame(width, height, "per-frame error", "frame", "mm", lo, hi * 1.05, x0, x1)
    for i, (label, (key, color)) in enumerate(series.items()):
        pts = [(r["frame"], r[key]) for r in rows if r.get(key) is not None]
        if pts:
            xs, ys = zip(*pts)
            out.append(_polyline(xs, ys, x_map, y_map, color, 1.5))
        out.append(f'<text x="{width - 220}" y="{40 + 14 * i}" font-size="11" fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# -- atomic output ---------------------------------------------------------------------

class OutputDir:
    """Collects files in a scratch directory next to ``path`` and moves them into place
    only when the block exits cleanly; on error nothing is left behind."""

    def __init__(self, path):
        self.path = Path(path)
        self.names = []

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.path.name}.", dir=self.path.parent))
        return self

    def write(self, name, text):
        (self.tmp / name).write_text(text)
        self.names.append(name)

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                self.path.mkdir(parents=True, exist_ok=True)
                for name in self.names:
                    os.replace(self.tmp / name, self.path / name)
        finally:
            with contextlib.suppress(OSError):
                shutil.rmtree(self.tmp)
        return False
