"""Plot-ready exports of sampled futures: CSV, JSON and SVG stick figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .skeleton import Skeleton

FORMATS = ("csv", "json", "svg")
VIEW_AXES = {"x": (1, 2), "y": (0, 2), "z": (0, 1)}  # dropped axis -> kept (horizontal, vertical)


def _samples(futures) -> np.ndarray:
    f = np.asarray(futures, dtype=np.float64)
    if f.ndim == 2:
        f = f[None]
    if f.ndim != 3:
        raise ValueError(f"expected (S, T, 3J) futures, got shape {f.shape}")
    return f


def export_csv(path, futures, skeleton: Skeleton) -> int:
    """One row per (sample, frame) with x/y/z columns per joint; returns the row count."""
    f = _samples(futures)
    cols = ["sample", "frame"] + [f"{n}_{a}" for n in skeleton.joint_names for a in "xyz"]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for s, seq in enumerate(f):
            for t, pose in enumerate(seq):
                w.writerow([s, t] + [repr(float(v)) for v in pose])
    return f.shape[0] * f.shape[1]


def export_json(path, futures, skeleton: Skeleton) -> None:
    f = _samples(futures)
    doc = {"joints": list(skeleton.joint_names), "parents": list(skeleton.parents),
           "samples": f.reshape(f.shape[0], f.shape[1], skeleton.J, 3).tolist()}
    Path(path).write_text(json.dumps(doc))


def load_json(path) -> np.ndarray:
    doc = json.loads(Path(path).read_text())
    arr = np.asarray(doc["samples"], dtype=np.float64)
    return arr.reshape(arr.shape[0], arr.shape[1], -1)


def svg_frame(pose, skeleton: Skeleton, view: str = "z", size: int = 240, extent: float = 1.2) -> str:
    """Orthographic stick figure of one pose; one <line> per limb.

    ``view`` is the axis looked along (it is dropped); ``extent`` is the
    half-width in meters mapped onto the canvas.
    """
    if view not in VIEW_AXES:
        raise ValueError(f"view must be one of {sorted(VIEW_AXES)}, got {view!r}")
    h, v = VIEW_AXES[view]
    j = np.asarray(pose, dtype=np.float64).reshape(skeleton.J, 3)
    scale = size / (2 * extent)

    def xy(p):
        return size / 2 + p[h] * scale, size / 2 - p[v] * scale

    lines = []
    for a, b in skeleton.limbs:
        (x1, y1), (x2, y2) = xy(j[a]), xy(j[b])
        lines.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                     'stroke="black" stroke-width="2" stroke-linecap="round"/>')
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
            f'viewBox="0 0 {size} {size}">\n' + "\n".join(lines) + "\n</svg>\n")


def export_svg(out_dir, futures, skeleton: Skeleton, view: str = "z", every: int = 10) -> list:
    """Write every ``every``-th frame of each sample as an SVG file; returns the paths."""
    f = _samples(futures)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for s, seq in enumerate(f):
        for t in range(0, seq.shape[0], max(1, every)):
            p = out / f"sample{s:03d}_frame{t:04d}.svg"
            p.write_text(svg_frame(seq[t], skeleton, view))
            paths.append(p)
    return paths
