"""Skeletons, motion files, windowing and pseudo ground-truth mining."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "ParseError", "Skeleton", "MotionSequence", "SampleWindow", "PseudoGtSet",
    "root_center", "load_motion_file", "save_motion_file", "window", "mine_pseudo_gt",
    "limb_lengths",
]

UNIT_SCALE = {"m": 1.0, "mm": 1e-3}


class ParseError(ValueError):
    def __init__(self, msg: str, line: int | None = None, path=None):
        where = f"{path}:" if path else ""
        where += f"line {line}: " if line is not None else ""
        super().__init__(where + msg)
        self.line = line


@dataclass(frozen=True)
class Skeleton:
    joint_names: tuple
    parents: tuple

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        _validate_tree(self.parents)

    @property
    def J(self) -> int:
        return len(self.parents)

    @property
    def root(self) -> int:
        return self.parents.index(-1)

    @property
    def limbs(self) -> list:
        """(parent, child) pairs in child order, one per non-root joint."""
        return [(p, c) for c, p in enumerate(self.parents) if p >= 0]

    def index(self, name: str) -> int:
        return self.joint_names.index(name)

    def fingerprint(self) -> str:
        text = ",".join(self.joint_names) + "|" + ",".join(map(str, self.parents))
        return hashlib.sha1(text.encode()).hexdigest()[:12]

    def reindexed(self):
        """Return (skeleton, order) with every parent listed before its children."""
        order, placed = [], set()
        children = {i: [c for c, p in enumerate(self.parents) if p == i] for i in range(self.J)}
        queue = [self.root]
        while queue:
            j = queue.pop(0)
            order.append(j)
            placed.add(j)
            queue.extend(children[j])
        new_of = {old: new for new, old in enumerate(order)}
        names = [self.joint_names[o] for o in order]
        parents = [-1 if self.parents[o] < 0 else new_of[self.parents[o]] for o in order]
        return Skeleton(names, parents), order


def _validate_tree(parents) -> None:
    J = len(parents)
    roots = [i for i, p in enumerate(parents) if p == -1]
    if len(roots) != 1:
        raise ValueError(f"skeleton must have exactly one root, found {len(roots)}")
    for i, p in enumerate(parents):
        if p != -1 and not 0 <= p < J:
            raise ValueError(f"joint {i} has out-of-range parent {p}")
        if p == i:
            raise ValueError(f"joint {i} is its own parent")
    for i in range(J):
        seen, j = set(), i
        while j != -1:
            if j in seen:
                raise ValueError(f"parent cycle through joint {j}")
            seen.add(j)
            j = parents[j]


@dataclass
class MotionSequence:
    frames: np.ndarray  # (F, 3J), meters
    fps: float = 50.0
    name: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1 or self.frames.shape[1] % 3:
            raise ValueError(f"frames must be (F>=1, 3J), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frames contain non-finite values")

    @property
    def F(self) -> int:
        return self.frames.shape[0]

    def joints(self) -> np.ndarray:
        return self.frames.reshape(self.F, -1, 3)


@dataclass(frozen=True)
class SampleWindow:
    past: np.ndarray    # (H, 3J)
    future: np.ndarray  # (T, 3J)
    source: str
    start: int

    @property
    def last_pose(self) -> np.ndarray:
        return self.past[-1]


@dataclass
class PseudoGtSet:
    threshold: float
    neighbours: list = field(default_factory=list)  # per anchor: sorted int array incl. anchor

    def __len__(self):
        return len(self.neighbours)

    def __getitem__(self, i):
        return self.neighbours[i]


def root_center(frames: np.ndarray, root: int = 0) -> np.ndarray:
    """Subtract the root joint's position from every joint in each frame."""
    f = np.asarray(frames, dtype=np.float64)
    j = f.reshape(f.shape[0], -1, 3)
    out = j - j[:, root:root + 1, :]
    return out.reshape(f.shape)


# ---------------------------------------------------------------- file format

def load_motion_file(path) -> tuple:
    """Read ``MOTION v1`` text; returns a validated skeleton and a root-centered sequence."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if len(lines) < 3:
        raise ParseError("file too short for header", len(lines) + 1, path)
    head = lines[0].split()
    if len(head) < 2 or head[0] != "MOTION" or head[1] != "v1":
        raise ParseError("expected 'MOTION v1 ...' header", 1, path)
    meta = {}
    for tok in head[2:]:
        if "=" not in tok:
            raise ParseError(f"bad header token {tok!r}", 1, path)
        k, v = tok.split("=", 1)
        meta[k] = v
    try:
        J = int(meta["joints"])
        fps = float(meta["fps"])
        unit = meta["unit"]
    except (KeyError, ValueError) as e:
        raise ParseError(f"header missing or malformed field: {e}", 1, path) from None
    if unit not in UNIT_SCALE:
        raise ParseError(f"unknown unit {unit!r}", 1, path)
    names = lines[1].split()
    if len(names) != J:
        raise ParseError(f"expected {J} joint names, got {len(names)}", 2, path)
    try:
        parents = [int(p) for p in lines[2].split()]
    except ValueError:
        raise ParseError("parent indices must be integers", 3, path) from None
    if len(parents) != J:
        raise ParseError(f"expected {J} parent indices, got {len(parents)}", 3, path)
    try:
        skel = Skeleton(names, parents)
    except ValueError as e:
        raise ParseError(str(e), 3, path) from None
    rows = []
    for ln, text in enumerate(lines[3:], start=4):
        if not text.strip():
            continue
        try:
            vals = [float(v) for v in text.split()]
        except ValueError:
            raise ParseError("non-numeric coordinate", ln, path) from None
        if len(vals) != 3 * J:
            raise ParseError(f"expected {3 * J} coordinates, got {len(vals)}", ln, path)
        rows.append(vals)
    if not rows:
        raise ParseError("no frames", len(lines) + 1, path)
    frames = np.array(rows) * UNIT_SCALE[unit]
    if any(p >= c for c, p in enumerate(skel.parents)):
        skel, order = skel.reindexed()
        frames = frames.reshape(len(rows), J, 3)[:, order, :].reshape(len(rows), -1)
    frames = root_center(frames, skel.root)
    return skel, MotionSequence(frames, fps, path.stem)


def save_motion_file(path, skeleton: Skeleton, seq: MotionSequence, unit: str = "m") -> None:
    scale = 1.0 / UNIT_SCALE[unit]
    lines = [
        f"MOTION v1 joints={skeleton.J} fps={seq.fps:g} unit={unit}",
        " ".join(skeleton.joint_names),
        " ".join(str(p) for p in skeleton.parents),
    ]
    for row in seq.frames * scale:
        lines.append(" ".join(f"{v:.9g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- windows

def window(seq: MotionSequence, H: int, T: int, stride: int) -> list:
    if min(H, T, stride) < 1:
        raise ValueError("H, T and stride must be >= 1")
    out = []
    for s in range(0, seq.F - (H + T) + 1, stride):
        out.append(SampleWindow(seq.frames[s:s + H], seq.frames[s + H:s + H + T], seq.name, s))
    return out


def mine_pseudo_gt(windows, threshold: float) -> PseudoGtSet:
    """For each window, every window whose last past pose lies within ``threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if not windows:
        return PseudoGtSet(threshold, [])
    last = np.stack([w.last_pose for w in windows])
    neighbours = []
    for lo in range(0, len(last), 512):
        d = cdist(last[lo:lo + 512], last)
        for k, row in enumerate(d):
            hit = row <= threshold
            hit[lo + k] = True
            neighbours.append(np.flatnonzero(hit))
    return PseudoGtSet(threshold, neighbours)


def limb_lengths(pose: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Length of each parent-to-child segment, in the skeleton's limb order."""
    j = np.asarray(pose, dtype=np.float64).reshape(-1, skeleton.J, 3)
    par = np.array([p for p, _ in skeleton.limbs])
    chi = np.array([c for _, c in skeleton.limbs])
    out = np.linalg.norm(j[:, chi] - j[:, par], axis=-1)
    return out[0] if np.ndim(pose) == 1 else out
