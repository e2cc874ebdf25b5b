"""Procedural multi-modal motion for desk-scale experiments.

Poses come from forward kinematics over a fixed 17-joint rig, so limb
lengths are constant by construction. Each local joint angle is a sum of
2-4 sinusoids whose base frequency and amplitudes come from one of a few
discrete action regimes; every sequence switches regime once with a smooth
cross-fade, which gives similar pasts several plausible futures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .skeleton import MotionSequence, Skeleton

JOINTS = (
    "Hip", "RHip", "RKnee", "RFoot", "LHip", "LKnee", "LFoot", "Spine", "Thorax",
    "Neck", "Head", "LShoulder", "LElbow", "LWrist", "RShoulder", "RElbow", "RWrist",
)
PARENTS = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)

# rest offsets from parent, meters; x lateral (left +), y forward, z up
OFFSETS = np.array([
    [0.0, 0.0, 0.0],
    [-0.13, 0.0, 0.0], [0.0, 0.0, -0.45], [0.0, 0.0, -0.44],
    [0.13, 0.0, 0.0], [0.0, 0.0, -0.45], [0.0, 0.0, -0.44],
    [0.0, 0.0, 0.23], [0.0, 0.0, 0.25],
    [0.0, 0.06, 0.10], [0.0, -0.04, 0.10],
    [0.16, 0.0, 0.0], [0.0, 0.0, -0.28], [0.0, 0.0, -0.25],
    [-0.16, 0.0, 0.0], [0.0, 0.0, -0.28], [0.0, 0.0, -0.25],
])

# static bends keep knees/elbows off the straight line (planes stay defined)
REST_ANGLES = {
    ("RKnee", 0): 0.35, ("LKnee", 0): 0.35,
    ("RElbow", 0): -0.5, ("LElbow", 0): -0.5,
    ("RShoulder", 1): -0.25, ("LShoulder", 1): 0.25,
}

# regime -> list of (joint, axis, amplitude rad, phase offset in turns), base freqs (Hz)
REGIMES = {
    "walk": ([
        ("RHip", 0, 0.32, 0.0), ("LHip", 0, 0.32, 0.5),
        ("RKnee", 0, 0.25, 0.25), ("LKnee", 0, 0.25, 0.75),
        ("RShoulder", 0, 0.30, 0.5), ("LShoulder", 0, 0.30, 0.0),
        ("Hip", 2, 0.08, 0.0), ("Spine", 2, 0.06, 0.5),
    ], (0.7, 0.9, 1.1)),
    "wave": ([
        ("RShoulder", 1, 0.55, 0.0), ("RElbow", 0, 0.35, 0.25),
        ("Neck", 2, 0.15, 0.0), ("Spine", 1, 0.05, 0.0),
        ("LShoulder", 0, 0.08, 0.1),
    ], (0.6, 0.8, 1.0)),
    "squat": ([
        ("RHip", 0, 0.35, 0.0), ("LHip", 0, 0.35, 0.0),
        ("RKnee", 0, 0.30, 0.0), ("LKnee", 0, 0.30, 0.0),
        ("Spine", 0, 0.20, 0.0), ("LShoulder", 0, 0.25, 0.0), ("RShoulder", 0, 0.25, 0.0),
    ], (0.4, 0.5, 0.6)),
    "look": ([
        ("Neck", 2, 0.45, 0.0), ("Neck", 0, 0.15, 0.3),
        ("Spine", 2, 0.25, 0.0), ("Hip", 2, 0.12, 0.2),
        ("LElbow", 0, 0.20, 0.4),
    ], (0.3, 0.45, 0.6)),
}


def default_skeleton() -> Skeleton:
    return Skeleton(JOINTS, PARENTS)


@dataclass(frozen=True)
class SkeletonSpec:
    """Rig used by the generator: joint names, parents and rest offsets."""
    joint_names: tuple = JOINTS
    parents: tuple = PARENTS
    offsets: tuple = tuple(map(tuple, OFFSETS))

    def skeleton(self) -> Skeleton:
        return Skeleton(self.joint_names, self.parents)


def _rot(axis: int, ang: np.ndarray) -> np.ndarray:
    c, s = np.cos(ang), np.sin(ang)
    R = np.zeros(ang.shape + (3, 3))
    i, j = [(1, 2), (0, 2), (0, 1)][axis]
    k = 3 - i - j
    R[..., k, k] = 1.0
    R[..., i, i] = c
    R[..., j, j] = c
    sign = -1.0 if axis == 1 else 1.0
    R[..., i, j] = -s * sign
    R[..., j, i] = s * sign
    return R


def _regime_angles(rng, names, regime, t, J) -> np.ndarray:
    dofs, freqs = REGIMES[regime]
    f0 = rng.choice(freqs)
    amp_scale = rng.uniform(0.85, 1.15)
    phase0 = rng.uniform(0.0, 1.0)
    ang = np.zeros((len(t), J, 3))
    for joint, axis, amp, off in dofs:
        n_terms = int(rng.integers(2, 5))
        j = names.index(joint)
        for k in range(1, n_terms + 1):
            a = amp * amp_scale / k ** 2
            ph = 2 * np.pi * (phase0 + off) * k + (rng.uniform(-0.3, 0.3) if k > 1 else 0.0)
            ang[:, j, axis] += a * np.sin(2 * np.pi * f0 * k * t + ph)
    return ang


def forward_kinematics(angles: np.ndarray, spec: SkeletonSpec = SkeletonSpec()) -> np.ndarray:
    """(F, J, 3) local xyz Euler angles -> (F, J, 3) joint positions, root at the origin."""
    F, J, _ = angles.shape
    offsets = np.asarray(spec.offsets)
    local = _rot(2, angles[..., 2]) @ _rot(1, angles[..., 1]) @ _rot(0, angles[..., 0])
    glob = np.zeros((F, J, 3, 3))
    pos = np.zeros((F, J, 3))
    for j in range(J):
        p = spec.parents[j]
        if p < 0:
            glob[:, j] = local[:, j]
            continue
        pos[:, j] = pos[:, p] + glob[:, p] @ offsets[j]
        glob[:, j] = glob[:, p] @ local[:, j]
    return pos


def synth_generate(seed: int, n_sequences: int, length: int, spec: SkeletonSpec = SkeletonSpec(),
                   fps: float = 50.0) -> list:
    """Deterministic list of root-centered synthetic sequences."""
    rng = np.random.default_rng(seed)
    names = list(spec.joint_names)
    J = len(names)
    regimes = sorted(REGIMES)
    t = np.arange(length) / fps
    out = []
    for n in range(n_sequences):
        r1, r2 = rng.choice(len(regimes), size=2, replace=False)
        a1 = _regime_angles(rng, names, regimes[r1], t, J)
        a2 = _regime_angles(rng, names, regimes[r2], t, J)
        switch = rng.uniform(0.3, 0.7) * length
        width = 0.5 * fps
        w = 0.5 * (1 + np.tanh((np.arange(length) - switch) / width))
        ang = (1 - w)[:, None, None] * a1 + w[:, None, None] * a2
        for (joint, axis), val in REST_ANGLES.items():
            if joint in names:
                ang[:, names.index(joint), axis] += val
        pos = forward_kinematics(ang, spec)
        frames = pos.reshape(length, -1)
        out.append(MotionSequence(frames, fps, f"seq{n:04d}_{regimes[r1]}-{regimes[r2]}"))
    return out
