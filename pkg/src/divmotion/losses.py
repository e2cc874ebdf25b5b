"""Training objectives on sampled futures.

Shapes: a set of S sampled futures is (S, T, D); a batch adds a leading B.
All functions accept autodiff tensors and return scalar tensors.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from . import autodiff as ad
from .skeleton import Skeleton

log = logging.getLogger(__name__)


def _sq_dist(pred: ad.Tensor, target) -> ad.Tensor:
    """Squared Frobenius distance over the last two axes."""
    d = pred - ad.as_tensor(target)
    return ad.sum_(ad.square(d), axis=(-2, -1))


def loss_r(predictions, gt) -> ad.Tensor:
    """Best-of-many reconstruction: min_j ||Y_j - Y||^2, averaged over a leading batch axis.

    predictions (S, T, D) or (B, S, T, D); gt (T, D) or (B, T, D).
    """
    p = ad.as_tensor(predictions)
    gt = np.asarray(gt, dtype=np.float64)
    if p.shape[-3] < 1:
        raise ad.ContractError("loss_r needs at least one prediction")
    d = _sq_dist(p, gt[..., None, :, :])
    m = ad.min_(d, axis=-1)
    return m if m.ndim == 0 else ad.mean(m)


def loss_mm(predictions, pseudo_gts) -> ad.Tensor:
    """Multi-modal reconstruction (1/P) sum_p min_j ||Y_j - Y_p||^2 for one window.

    predictions (S, T, D); pseudo_gts (P, T, D). P = 0 contributes 0. The
    argmin is found on plain arrays and only the selected pairs enter the
    graph, which gives the same value and gradient as a differentiable min.
    """
    p = ad.as_tensor(predictions)
    pg = np.asarray(pseudo_gts, dtype=np.float64)
    if len(pg) == 0:
        log.warning("loss_mm: no pseudo ground truth, term contributes 0")
        return ad.Tensor(0.0)
    S = p.shape[0]
    flat = p.data.reshape(S, -1)
    d = np.stack([((flat - y.reshape(1, -1)) ** 2).sum(-1) for y in pg])  # (P, S)
    best = np.argmin(d, axis=1)
    return ad.mean(_sq_dist(ad.take(p, best, axis=0), pg))


def loss_d(part_predictions, alpha: float) -> ad.Tensor:
    """Sibling diversity: mean over pairs j<k of exp(-||Y_j - Y_k||_1 / alpha).

    part_predictions (..., K, F): siblings share every leading index (parent
    branch, batch item); the value is averaged over those leading indices.
    """
    p = ad.as_tensor(part_predictions)
    K = p.shape[-2]
    if K < 2:
        raise ad.ContractError(f"loss_d needs K >= 2 siblings, got {K}")
    if alpha <= 0:
        raise ad.ContractError("loss_d needs alpha > 0")
    iu, ju = np.triu_indices(K, 1)
    diff = ad.take(p, iu, axis=-2) - ad.take(p, ju, axis=-2)
    dist = ad.sum_(ad.abs_(diff), axis=-1)
    return ad.mean(ad.exp(ad.scale(dist, -1.0 / alpha)))


def loss_past(decoded, padded_past, H: int) -> ad.Tensor:
    """||Y[:H] - X[:H]||^2 on the reconstructed past; averaged over leading axes.

    decoded (..., H+T, D); padded_past broadcastable to it.
    """
    d = ad.as_tensor(decoded)
    x = np.asarray(padded_past, dtype=np.float64)
    err = ad.sum_(ad.square(d[..., :H, :] - x[..., :H, :]), axis=(-2, -1))
    return err if err.ndim == 0 else ad.mean(err)


def limb_lengths_tensor(poses, skeleton: Skeleton) -> ad.Tensor:
    p = ad.as_tensor(poses)
    j = ad.reshape(p, p.shape[:-1] + (skeleton.J, 3))
    par = np.array([a for a, _ in skeleton.limbs])
    chi = np.array([b for _, b in skeleton.limbs])
    return ad.l2_norm(ad.take(j, chi, axis=-2) - ad.take(j, par, axis=-2), axis=-1)


def loss_limb(future, gt_lengths, skeleton: Skeleton) -> ad.Tensor:
    """sum_t sum_i (l_ti - l_i)^2 over future frames; averaged over leading axes.

    future (..., T, 3J); gt_lengths broadcastable to (..., 1, J-1).
    """
    lengths = limb_lengths_tensor(future, skeleton)
    err = ad.sum_(ad.square(lengths - np.asarray(gt_lengths, dtype=np.float64)), axis=(-2, -1))
    return err if err.ndim == 0 else ad.mean(err)


def weighted_total(terms: dict, weights: dict) -> ad.Tensor:
    """sum_k w_k * term_k; raises naming the first non-finite term."""
    total = None
    for name, value in terms.items():
        v = float(value.data)
        if math.isnan(v) or math.isinf(v):
            raise FloatingPointError(f"loss term {name!r} is {v}")
        piece = ad.scale(value, weights.get(name, 0.0))
        total = piece if total is None else total + piece
    return total if total is not None else ad.Tensor(0.0)
