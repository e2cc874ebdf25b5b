"""Inter-part angles, data-mined angle ranges and the joint-angle penalty."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .skeleton import Skeleton

log = logging.getLogger(__name__)

ACOS_EPS = 1e-7
VEC_EPS = 1e-8


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class AngleSpec:
    """Angle between two unit vectors, each a plane normal or a limb direction.

    ``vec_a`` / ``vec_b`` are ``("plane", (j1, j2, j3))`` or ``("limb", (j_from, j_to))``
    with joint names. ``bounds`` is ``(lower, upper)`` in radians once mined.
    """
    name: str
    vec_a: tuple
    vec_b: tuple
    bounds: tuple | None = None

    def __post_init__(self):
        for kind, joints in (self.vec_a, self.vec_b):
            want = {"plane": 3, "limb": 2}.get(kind)
            if want is None or len(joints) != want or len(set(joints)) != want:
                raise ValueError(f"{self.name}: bad vector definition {(kind, joints)}")
        if self.bounds is not None:
            lo, hi = self.bounds
            if not 0.0 <= lo <= hi <= math.pi:
                raise ValueError(f"{self.name}: bounds {self.bounds} outside 0 <= l <= u <= pi")

    def joints(self) -> set:
        return set(self.vec_a[1]) | set(self.vec_b[1])


@dataclass
class AngleTable:
    specs: list = field(default_factory=list)
    fingerprint: str = ""

    @property
    def lower(self) -> np.ndarray:
        return np.array([s.bounds[0] for s in self.specs])

    @property
    def upper(self) -> np.ndarray:
        return np.array([s.bounds[1] for s in self.specs])

    def check(self, skeleton: Skeleton) -> None:
        if self.fingerprint and self.fingerprint != skeleton.fingerprint():
            raise ValueError("angle table was mined for a different skeleton")


def default_angle_specs(skeleton: Skeleton) -> list:
    """Named angles for the built-in 17-joint rig; those referencing missing joints are dropped."""
    torso = ("plane", ("Hip", "LShoulder", "RShoulder"))
    specs = [
        AngleSpec("Neck2Spine", ("limb", ("Thorax", "Neck")), ("limb", ("Hip", "Spine"))),
        AngleSpec("HeadPlane2TorsoPlane", ("plane", ("Thorax", "Neck", "Head")), torso),
        AngleSpec("Leg2ThighPlane.R", ("limb", ("RKnee", "RFoot")), ("plane", ("Hip", "RHip", "RKnee"))),
        AngleSpec("Leg2ThighPlane.L", ("limb", ("LKnee", "LFoot")), ("plane", ("Hip", "LHip", "LKnee"))),
        AngleSpec("Thigh2TorsoPlane.R", ("limb", ("RHip", "RKnee")), torso),
        AngleSpec("Thigh2TorsoPlane.L", ("limb", ("LHip", "LKnee")), torso),
        AngleSpec("UpperSpine2LowerSpine", ("limb", ("Spine", "Thorax")), ("limb", ("Spine", "Hip"))),
        AngleSpec("Shoulder2Hip", ("limb", ("RShoulder", "LShoulder")), ("limb", ("RHip", "LHip"))),
        AngleSpec("Shoulder2Neck.R", ("limb", ("Thorax", "RShoulder")), ("limb", ("Thorax", "Neck"))),
        AngleSpec("Shoulder2Neck.L", ("limb", ("Thorax", "LShoulder")), ("limb", ("Thorax", "Neck"))),
        AngleSpec("Shoulder2Shoulder", ("limb", ("Thorax", "LShoulder")), ("limb", ("Thorax", "RShoulder"))),
        AngleSpec("Spine2Hip", ("limb", ("Hip", "Spine")), ("limb", ("RHip", "LHip"))),
        AngleSpec("Arm2ShoulderPlane.R", ("limb", ("RShoulder", "RElbow")), ("plane", ("Thorax", "RShoulder", "Neck"))),
        AngleSpec("Arm2ShoulderPlane.L", ("limb", ("LShoulder", "LElbow")), ("plane", ("Thorax", "LShoulder", "Neck"))),
    ]
    names = set(skeleton.joint_names)
    return [s for s in specs if s.joints() <= names]


# ---------------------------------------------------------------- evaluation

def _unit(v: ad.Tensor, strict: bool) -> ad.Tensor:
    n = ad.l2_norm(v, axis=-1, keepdims=True)
    if strict and np.any(n.data <= VEC_EPS):
        raise DataError("degenerate vector (collinear plane joints or zero-length limb)")
    return v / ad.clamp(n, lo=VEC_EPS)


def _vector_table(specs, skeleton: Skeleton):
    """Distinct vector definitions with index arrays for the vectorised evaluation."""
    limbs, planes = [], []
    for s in specs:
        for kind, names in (s.vec_a, s.vec_b):
            idx = tuple(skeleton.index(n) for n in names)
            bucket = limbs if kind == "limb" else planes
            if idx not in bucket:
                bucket.append(idx)
    slot = {("limb", v): i for i, v in enumerate(limbs)}
    slot.update({("plane", v): len(limbs) + i for i, v in enumerate(planes)})

    def pick(vec):
        return slot[(vec[0], tuple(skeleton.index(n) for n in vec[1]))]

    a = np.array([pick(s.vec_a) for s in specs], dtype=int)
    b = np.array([pick(s.vec_b) for s in specs], dtype=int)
    return np.array(limbs, dtype=int).reshape(-1, 2), np.array(planes, dtype=int).reshape(-1, 3), a, b


def angles(poses, specs, skeleton: Skeleton, strict: bool = False) -> ad.Tensor:
    """Angles (..., L) in radians for poses (..., 3J); differentiable when poses are tensors."""
    p = ad.as_tensor(poses)
    j = ad.reshape(p, p.shape[:-1] + (skeleton.J, 3))
    limbs, planes, ia, ib = _vector_table(specs, skeleton)
    vecs = []
    if len(limbs):
        vecs.append(ad.take(j, limbs[:, 1], axis=-2) - ad.take(j, limbs[:, 0], axis=-2))
    if len(planes):
        p0 = ad.take(j, planes[:, 0], axis=-2)
        vecs.append(ad.cross(ad.take(j, planes[:, 1], axis=-2) - p0, ad.take(j, planes[:, 2], axis=-2) - p0))
    units = _unit(ad.concat(vecs, axis=-2) if len(vecs) > 1 else vecs[0], strict)
    dot = ad.sum_(ad.take(units, ia, axis=-2) * ad.take(units, ib, axis=-2), axis=-1)
    return ad.acos(ad.clamp(dot, -1.0 + ACOS_EPS, 1.0 - ACOS_EPS))


def compute_angle(pose, spec: AngleSpec, skeleton: Skeleton) -> float | np.ndarray:
    """Angle of one spec for a pose (3J,) or batch (..., 3J); raises on degenerate geometry."""
    out = angles(np.asarray(pose, dtype=np.float64), [spec], skeleton, strict=True).data[..., 0]
    return float(out) if out.ndim == 0 else out


def mine_ranges(poses: np.ndarray, specs, skeleton: Skeleton, margin: float = 0.0) -> AngleTable:
    """Exact min / max of every angle over the dataset, optionally widened by ``margin``."""
    poses = np.asarray(poses, dtype=np.float64).reshape(-1, 3 * skeleton.J)
    if len(poses) == 0:
        raise ValueError("mine_ranges needs a non-empty dataset")
    out = []
    for s in specs:
        vals = angles(poses, [s], skeleton).data[:, 0]
        ok = _valid_frames(poses, s, skeleton)
        if not ok.any():
            raise DataError(f"{s.name}: every frame is degenerate")
        if not ok.all():
            log.warning("%s: skipped %d degenerate frames", s.name, int((~ok).sum()))
        lo = max(0.0, float(vals[ok].min()) - margin)
        hi = min(math.pi, float(vals[ok].max()) + margin)
        out.append(replace(s, bounds=(lo, hi)))
    return AngleTable(out, skeleton.fingerprint())


def _valid_frames(poses, spec, skeleton) -> np.ndarray:
    j = poses.reshape(len(poses), skeleton.J, 3)
    ok = np.ones(len(poses), dtype=bool)
    for kind, names in (spec.vec_a, spec.vec_b):
        pts = [j[:, skeleton.index(n)] for n in names]
        v = np.cross(pts[1] - pts[0], pts[2] - pts[0]) if kind == "plane" else pts[1] - pts[0]
        ok &= np.linalg.norm(v, axis=-1) > VEC_EPS
    return ok


def angle_loss(poses, table: AngleTable, skeleton: Skeleton) -> ad.Tensor:
    """Squared range violation summed over angles, averaged over poses (radians squared)."""
    a = angles(poses, table.specs, skeleton)
    below = ad.clamp(ad.Tensor(table.lower) - a, lo=0.0)
    above = ad.clamp(a - ad.Tensor(table.upper), lo=0.0)
    per_pose = ad.sum_(ad.square(below) + ad.square(above), axis=-1)
    return per_pose if per_pose.ndim == 0 else ad.mean(per_pose)


# ---------------------------------------------------------------- file

def save_angle_table(path, table: AngleTable) -> None:
    rows = []
    for s in table.specs:
        rows.append({
            "name": s.name,
            s.vec_a[0] + "_a": list(s.vec_a[1]),
            s.vec_b[0] + "_b": list(s.vec_b[1]),
            "bounds_deg": [math.degrees(b) for b in s.bounds],
            "bounds_rad": list(s.bounds),
        })
    Path(path).write_text(json.dumps({"version": 1, "skeleton": table.fingerprint, "angles": rows}, indent=2))


def load_angle_table(path, skeleton: Skeleton | None = None) -> AngleTable:
    doc = json.loads(Path(path).read_text())
    specs = []
    for row in doc["angles"]:
        vecs = {}
        for key, joints in row.items():
            if key.endswith(("_a", "_b")) and key.split("_")[0] in ("plane", "limb"):
                vecs[key[-1]] = (key.split("_")[0], tuple(joints))
        if "bounds_rad" in row:
            bounds = tuple(float(b) for b in row["bounds_rad"])
        else:
            bounds = tuple(math.radians(b) for b in row["bounds_deg"])
        specs.append(AngleSpec(row["name"], vecs["a"], vecs["b"], bounds))
    table = AngleTable(specs, doc.get("skeleton", ""))
    if skeleton is not None:
        table.check(skeleton)
        missing = [s.name for s in specs if not s.joints() <= set(skeleton.joint_names)]
        if missing:
            raise ValueError(f"angle table references joints absent from skeleton: {missing}")
    return table
