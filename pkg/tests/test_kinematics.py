import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from divmotion import autodiff as ad
from divmotion.kinematics import (AngleSpec, AngleTable, DataError, angle_loss, angles, compute_angle,
                                  default_angle_specs, load_angle_table, mine_ranges, save_angle_table)
from divmotion.skeleton import Skeleton

CHAIN = Skeleton(("r", "a", "b", "c"), (-1, 0, 0, 0))


def _pose(*joints):
    return np.concatenate([np.asarray(j, dtype=float) for j in joints])


def set_angle_to_plane(pose, skeleton, joint, parent, plane, target):
    """Move ``joint`` about ``parent`` so its limb makes angle ``target`` with the plane normal."""
    j = pose.reshape(-1, 3).copy()
    p0, p1, p2 = (j[skeleton.index(n)] for n in plane)
    n = np.cross(p1 - p0, p2 - p0)
    n /= np.linalg.norm(n)
    v = j[skeleton.index(joint)] - j[skeleton.index(parent)]
    u = v - (v @ n) * n
    u /= np.linalg.norm(u)
    j[skeleton.index(joint)] = j[skeleton.index(parent)] + np.linalg.norm(v) * (
        math.cos(target) * n + math.sin(target) * u)
    return j.ravel()


def test_identical_limbs_zero_angle():
    spec = AngleSpec("s", ("limb", ("r", "a")), ("limb", ("r", "b")))
    pose = _pose([0, 0, 0], [1, 2, 3], [2, 4, 6], [0, 0, 1])
    assert compute_angle(pose, spec, CHAIN) == pytest.approx(0.0, abs=1e-3)


def test_orthogonal_limbs_right_angle():
    spec = AngleSpec("s", ("limb", ("r", "a")), ("limb", ("r", "b")))
    pose = _pose([0, 0, 0], [1, 0, 0], [0, 3, 0], [0, 0, 1])
    assert abs(compute_angle(pose, spec, CHAIN) - math.pi / 2) < 1e-12


def test_head_vs_torso_plane_matches_vector_algebra(skeleton, walkers):
    spec = next(s for s in default_angle_specs(skeleton) if s.name == "HeadPlane2TorsoPlane")
    pose = walkers[0].frames[0]
    j = {n: pose.reshape(-1, 3)[i] for i, n in enumerate(skeleton.joint_names)}
    nh = np.cross(j["Neck"] - j["Thorax"], j["Head"] - j["Thorax"])
    nt = np.cross(j["LShoulder"] - j["Hip"], j["RShoulder"] - j["Hip"])
    want = math.acos(nh @ nt / (np.linalg.norm(nh) * np.linalg.norm(nt)))
    assert abs(compute_angle(pose, spec, skeleton) - want) < 1e-9


def test_default_specs_cover_named_angles(skeleton):
    names = {s.name for s in default_angle_specs(skeleton)}
    assert len(names) == 14
    assert {"Shoulder2Shoulder", "Leg2ThighPlane.R", "Arm2ShoulderPlane.L"} <= names


def test_default_specs_drop_missing_joints():
    sk = Skeleton(("Hip", "Spine", "Thorax", "Neck"), (-1, 0, 1, 2))
    assert [s.name for s in default_angle_specs(sk)] == ["Neck2Spine", "UpperSpine2LowerSpine"]


def test_collinear_plane_is_data_error():
    spec = AngleSpec("s", ("plane", ("r", "a", "b")), ("limb", ("r", "c")))
    pose = _pose([0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 0, 1])
    with pytest.raises(DataError):
        compute_angle(pose, spec, CHAIN)


def test_spec_validation():
    with pytest.raises(ValueError):
        AngleSpec("s", ("plane", ("r", "a", "a")), ("limb", ("r", "c")))
    with pytest.raises(ValueError):
        AngleSpec("s", ("limb", ("r", "a")), ("limb", ("r", "c")), bounds=(1.0, 0.5))


def test_mined_bounds_equal_brute_force_scan(skeleton, walkers):
    poses = np.concatenate([w.frames for w in walkers])[::7][:100]
    specs = default_angle_specs(skeleton)
    table = mine_ranges(poses, specs, skeleton)
    for s, mined in zip(specs, table.specs):
        vals = [compute_angle(p, s, skeleton) for p in poses]
        assert mined.bounds == (min(vals), max(vals))


def test_constant_angle_gives_equal_bounds(rng):
    spec = AngleSpec("s", ("limb", ("r", "a")), ("limb", ("r", "b")))
    poses = []
    for _ in range(10):
        R = Rotation.random(random_state=int(rng.integers(1 << 30))).as_matrix()
        a = R @ np.array([1.0, 0, 0])
        b = R @ np.array([math.cos(1.0), math.sin(1.0), 0])
        poses.append(_pose([0, 0, 0], a, 2 * b, [0, 0, 1]))
    lo, hi = mine_ranges(np.array(poses), [spec], CHAIN).specs[0].bounds
    assert abs(lo - 1.0) < 1e-9 and abs(hi - 1.0) < 1e-9


def test_mining_skips_degenerate_frames():
    spec = AngleSpec("s", ("limb", ("r", "a")), ("limb", ("r", "b")))
    good = _pose([0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1])
    bad = _pose([0, 0, 0], [0, 0, 0], [0, 1, 0], [0, 0, 1])
    lo, hi = mine_ranges(np.stack([good, bad]), [spec], CHAIN).specs[0].bounds
    assert abs(lo - math.pi / 2) < 1e-12 and abs(hi - math.pi / 2) < 1e-12
    with pytest.raises(DataError):
        mine_ranges(bad[None], [spec], CHAIN)


def test_loss_zero_on_mining_set(skeleton, walkers):
    poses = np.concatenate([w.frames for w in walkers])
    table = mine_ranges(poses, default_angle_specs(skeleton), skeleton)
    per_frame = [angle_loss(p, table, skeleton).data for p in poses[::5]]
    assert max(per_frame) == 0.0
    assert angle_loss(poses, table, skeleton).data == 0.0


def test_single_violation_by_tenth_radian(skeleton, walkers):
    poses = np.concatenate([w.frames for w in walkers])
    table = mine_ranges(poses, default_angle_specs(skeleton), skeleton)
    spec = next(s for s in table.specs if s.name == "Leg2ThighPlane.R")
    pose = set_angle_to_plane(poses[0], skeleton, "RFoot", "RKnee", ("Hip", "RHip", "RKnee"),
                              spec.bounds[0] - 0.1)
    assert abs(angle_loss(pose, table, skeleton).data - 0.01) < 1e-9


def test_above_upper_bound():
    spec = AngleSpec("s", ("limb", ("r", "a")), ("limb", ("r", "b")), bounds=(0.0, 1.0))
    pose = _pose([0, 0, 0], [1, 0, 0], [math.cos(1.3), math.sin(1.3), 0], [0, 0, 1])
    assert abs(angle_loss(pose, AngleTable([spec]), CHAIN).data - 0.09) < 1e-12


def test_loss_gradient_on_violating_pose(skeleton, walkers):
    poses = np.concatenate([w.frames for w in walkers])
    table = mine_ranges(poses, default_angle_specs(skeleton), skeleton)
    spec = next(s for s in table.specs if s.name == "Leg2ThighPlane.R")
    pose = set_angle_to_plane(poses[0], skeleton, "RFoot", "RKnee", ("Hip", "RHip", "RKnee"),
                              spec.bounds[0] - 0.1)
    x = ad.Parameter(pose[None])
    assert ad.grad_check(lambda: angle_loss(x, table, skeleton), [x]) < 1e-4


def test_zero_gradient_strictly_inside():
    spec = AngleSpec("s", ("limb", ("r", "a")), ("limb", ("r", "b")), bounds=(0.5, 2.0))
    x = ad.Parameter(_pose([0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1])[None])
    ad.backward(angle_loss(x, AngleTable([spec]), CHAIN))
    assert np.all(x.grad == 0.0)


def test_loss_rotation_invariant(skeleton, walkers, rng):
    poses = np.concatenate([w.frames for w in walkers])
    table = mine_ranges(poses[::2], default_angle_specs(skeleton), skeleton)
    pose = set_angle_to_plane(poses[1], skeleton, "RFoot", "RKnee", ("Hip", "RHip", "RKnee"), 0.05)
    base = angle_loss(pose, table, skeleton).data
    assert base > 0
    for _ in range(20):
        R = Rotation.random(random_state=int(rng.integers(1 << 30))).as_matrix()
        rotated = (pose.reshape(-1, 3) @ R.T).ravel()
        assert abs(angle_loss(rotated, table, skeleton).data - base) < 1e-9


def test_batched_angles_match_single(skeleton, walkers):
    poses = walkers[2].frames[:6]
    specs = default_angle_specs(skeleton)
    batch = angles(poses, specs, skeleton).data
    for i, s in enumerate(specs):
        np.testing.assert_allclose(batch[:, i], compute_angle(poses, s, skeleton), atol=1e-15)


def test_table_file_round_trip(tmp_path, skeleton, walkers):
    table = mine_ranges(walkers[0].frames, default_angle_specs(skeleton), skeleton)
    save_angle_table(tmp_path / "t.json", table)
    back = load_angle_table(tmp_path / "t.json", skeleton)
    assert back.specs == table.specs
    save_angle_table(tmp_path / "u.json", back)
    assert (tmp_path / "t.json").read_bytes() == (tmp_path / "u.json").read_bytes()
    with pytest.raises(ValueError):
        load_angle_table(tmp_path / "t.json", CHAIN)
