import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from divmotion import autodiff as ad
from divmotion.losses import (limb_lengths_tensor, loss_d, loss_limb, loss_mm, loss_past, loss_r,
                              weighted_total)
from divmotion.skeleton import Skeleton, limb_lengths

CHAIN = Skeleton(("a", "b", "c"), (-1, 0, 1))


def _offset_set(gt, sq_dists):
    """Predictions whose squared distance to ``gt`` is exactly each of ``sq_dists``."""
    out = []
    for d2 in sq_dists:
        p = gt.copy()
        p[0, 0] += math.sqrt(d2)
        out.append(p)
    return np.stack(out)


def test_loss_r_exact_match_is_zero(rng):
    gt = rng.normal(size=(4, 6))
    assert loss_r(np.stack([gt + 1, gt, gt - 2]), gt).data == 0.0


def test_loss_r_brute_force_min(rng):
    gt = rng.normal(size=(3, 2))
    preds = _offset_set(gt, [4.0, 1.0, 9.0])
    assert abs(loss_r(preds, gt).data - 1.0) < 1e-12
    assert abs(loss_r(preds[::-1], gt).data - 1.0) < 1e-12


def test_loss_r_gradient_only_to_argmin(rng):
    gt = rng.normal(size=(3, 2))
    p = ad.Parameter(_offset_set(gt, [4.0, 1.0, 9.0]))
    ad.backward(loss_r(p, gt))
    assert np.all(p.grad[[0, 2]] == 0.0) and np.abs(p.grad[1]).sum() > 0


def test_loss_r_batch_mean(rng):
    gts = rng.normal(size=(2, 3, 4))
    preds = rng.normal(size=(2, 5, 3, 4))
    want = np.mean([loss_r(preds[b], gts[b]).data for b in range(2)])
    assert abs(loss_r(preds, gts).data - want) < 1e-12


def brute_mm(preds, pgts):
    total = 0.0
    for y in pgts:
        best = math.inf
        for p in preds:
            d = 0.0
            for a, b in zip(p.ravel(), y.ravel()):
                d += (a - b) ** 2
            best = min(best, d)
        total += best
    return total / len(pgts)


def test_loss_mm_matches_double_loop(rng):
    for _ in range(5):
        preds = rng.normal(size=(6, 3, 4))
        pgts = rng.normal(size=(4, 3, 4))
        assert abs(loss_mm(preds, pgts).data - brute_mm(preds, pgts)) < 1e-10


def test_loss_mm_single_pgt_equals_loss_r(rng):
    preds, gt = rng.normal(size=(5, 3, 4)), rng.normal(size=(3, 4))
    assert abs(loss_mm(preds, gt[None]).data - loss_r(preds, gt).data) < 1e-12


def test_loss_mm_all_matched_is_zero(rng):
    preds = rng.normal(size=(5, 3, 4))
    assert loss_mm(preds, preds[[4, 1, 1]]).data == 0.0


def test_loss_mm_empty_contributes_zero(rng, caplog):
    out = loss_mm(rng.normal(size=(5, 3, 4)), np.zeros((0, 3, 4)))
    assert out.data == 0.0
    assert "pseudo ground truth" in caplog.text


def test_loss_mm_gradient(rng):
    p = ad.Parameter(rng.normal(size=(4, 2, 3)))
    pgts = rng.normal(size=(3, 2, 3))
    assert ad.grad_check(lambda: loss_mm(p, pgts), [p]) < 1e-6


def test_loss_d_identical_siblings_is_one(rng):
    x = np.repeat(rng.normal(size=(1, 7)), 4, axis=0)
    assert loss_d(x, 10.0).data == 1.0


def test_loss_d_l1_equals_alpha():
    x = np.array([[0.0, 0.0, 0.0], [1.0, -2.0, 0.5]])
    assert abs(loss_d(x, 3.5).data - math.exp(-1)) < 1e-15


def test_loss_d_brute_force_and_branches(rng):
    x = rng.normal(size=(2, 3, 4, 5))
    want = []
    for b in range(2):
        for p in range(3):
            s = x[b, p]
            vals = [math.exp(-np.abs(s[j] - s[k]).sum() / 2.0) for j in range(4) for k in range(j + 1, 4)]
            want.append(np.mean(vals))
    assert abs(loss_d(x, 2.0).data - np.mean(want)) < 1e-12


def test_loss_d_decreases_as_pair_separates(rng):
    x = rng.normal(size=(4, 6))
    base = loss_d(x, 5.0).data
    y = x.copy()
    y[2] += np.sign(y[2] - y[0]) * 0.3
    assert loss_d(y, 5.0).data < base


def test_loss_d_contracts():
    with pytest.raises(ad.ContractError):
        loss_d(np.zeros((1, 3)), 1.0)
    with pytest.raises(ad.ContractError):
        loss_d(np.zeros((3, 3)), 0.0)


def test_loss_d_gradient(rng):
    p = ad.Parameter(rng.normal(size=(2, 3, 4)))
    assert ad.grad_check(lambda: loss_d(p, 3.0), [p]) < 1e-6


def test_loss_past_perfect_and_offset(rng):
    H, T, D = 5, 4, 6
    x = rng.normal(size=(H + T, D))
    assert loss_past(x, x, H).data == 0.0
    eps = 0.03
    assert abs(loss_past(x + eps, x, H).data - eps ** 2 * H * D) < 1e-14
    y = x.copy()
    y[H:] += 10.0
    assert loss_past(y, x, H).data == 0.0


def test_loss_past_gradient(rng):
    p = ad.Parameter(rng.normal(size=(2, 7, 3)))
    x = rng.normal(size=(7, 3))
    assert ad.grad_check(lambda: loss_past(p, x, 4), [p]) < 1e-6


def test_limb_lengths_tensor_matches_numpy(skeleton, walkers):
    poses = walkers[0].frames[:5]
    np.testing.assert_allclose(limb_lengths_tensor(poses, skeleton).data, limb_lengths(poses, skeleton),
                               atol=1e-15)


def test_loss_limb_exact_and_one_longer():
    pose = np.array([0, 0, 0, 1, 0, 0, 1, 2, 0], dtype=float)
    fut = np.stack([pose, pose, pose])
    gt = limb_lengths(pose, CHAIN)
    assert loss_limb(fut, gt, CHAIN).data == 0.0
    longer = fut.copy()
    longer[1, 6:] = [1, 2.1, 0]
    assert abs(loss_limb(longer, gt, CHAIN).data - 0.01) < 1e-12


def test_loss_limb_rotation_invariant(rng, skeleton, walkers):
    fut = walkers[1].frames[:4] * 1.05
    gt = limb_lengths(walkers[1].frames[0], skeleton)
    base = loss_limb(fut, gt, skeleton).data
    rotated = np.stack([(f.reshape(-1, 3) @ Rotation.random(random_state=i).as_matrix().T).ravel()
                        for i, f in enumerate(fut)])
    assert abs(loss_limb(rotated, gt, skeleton).data - base) < 1e-12


def test_loss_limb_gradient(rng):
    p = ad.Parameter(rng.normal(size=(2, 3, 9)))
    assert ad.grad_check(lambda: loss_limb(p, np.array([0.5, 1.5]), CHAIN), [p]) < 1e-4


def test_weighted_total():
    terms = {"x": ad.Tensor(2.0), "y": ad.Tensor(3.0)}
    assert weighted_total(terms, {}).data == 0.0
    assert weighted_total(terms, {"y": 1.0}).data == 3.0
    assert weighted_total(terms, {"x": 0.5, "y": 2.0}).data == 7.0
    with pytest.raises(FloatingPointError, match="'y'"):
        weighted_total({"x": ad.Tensor(1.0), "y": ad.Tensor(float("nan"))}, {"x": 1.0})
