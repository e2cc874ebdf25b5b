"""Normalizing-flow pose prior over limb directions.

Each of the three layers computes ``prelu(f @ Q @ R + b)`` with ``Q`` a
product of Householder reflections and ``R`` upper triangular with a positive
(exp-parameterised) diagonal, so the log-Jacobian is a sum of log-diagonal
terms plus the log-slopes of the negative pre-activations.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from . import autodiff as ad
from .skeleton import Skeleton

log = logging.getLogger(__name__)

N_LAYERS = 3
CHECKPOINT_VERSION = 1
LIMB_EPS = 1e-6


class DataError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class FlowLayerParams:
    householder: ad.Parameter  # (n, n); row i is the i-th reflection vector
    r_upper: ad.Parameter      # (n, n); only the strictly upper part is used
    r_diag_raw: ad.Parameter   # (n,)
    bias: ad.Parameter         # (n,)
    slope_raw: ad.Parameter    # ()

    @property
    def dim(self) -> int:
        return self.bias.shape[0]

    def parameters(self) -> list:
        return [self.householder, self.r_upper, self.r_diag_raw, self.bias, self.slope_raw]

    @property
    def slope(self) -> float:
        return float(np.exp(self.slope_raw.data))

    def q_matrix(self) -> np.ndarray:
        n = self.dim
        Q = np.eye(n)
        for v in self.householder.data:
            nv = np.linalg.norm(v)
            if nv == 0.0:
                continue
            u = v / nv
            Q = Q - 2.0 * np.outer(Q @ u, u)
        return Q

    def r_matrix(self) -> np.ndarray:
        return np.triu(self.r_upper.data, 1) + np.diag(np.exp(self.r_diag_raw.data))


@dataclass
class FlowParams:
    layers: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.layers[0].dim

    def parameters(self) -> list:
        return [p for layer in self.layers for p in layer.parameters()]


def init_flow(dim: int, seed: int = 0, n_layers: int = N_LAYERS) -> FlowParams:
    rng = np.random.default_rng(seed)
    layers = []
    for k in range(n_layers):
        V = rng.standard_normal((dim, dim))
        V /= np.linalg.norm(V, axis=1, keepdims=True)
        layers.append(FlowLayerParams(
            ad.Parameter(V, f"flow{k}.householder"),
            ad.Parameter(np.zeros((dim, dim)), f"flow{k}.r_upper"),
            ad.Parameter(np.zeros(dim), f"flow{k}.r_diag_raw"),
            ad.Parameter(np.zeros(dim), f"flow{k}.bias"),
            ad.Parameter(np.zeros(()), f"flow{k}.slope_raw"),
        ))
    return FlowParams(layers)


def identity_flow(dim: int, n_layers: int = N_LAYERS) -> FlowParams:
    """Flow that maps every input to itself (zero reflection vectors)."""
    p = init_flow(dim, 0, n_layers)
    for layer in p.layers:
        layer.householder.data[:] = 0.0
    return p


# ---------------------------------------------------------------- limb directions

def to_limb_directions(pose: np.ndarray, skeleton: Skeleton) -> np.ndarray:
    """Unit parent-to-child vectors of every limb, concatenated: (..., 3(J-1))."""
    pose = np.asarray(pose, dtype=np.float64)
    j = pose.reshape(pose.shape[:-1] + (skeleton.J, 3))
    par = [p for p, _ in skeleton.limbs]
    chi = [c for _, c in skeleton.limbs]
    vec = j[..., chi, :] - j[..., par, :]
    n = np.linalg.norm(vec, axis=-1, keepdims=True)
    bad = np.argwhere(n[..., 0] <= 1e-8)
    if bad.size:
        raise DataError(f"degenerate limb ending at joint {skeleton.joint_names[chi[bad[0][-1]]]!r}")
    return (vec / n).reshape(pose.shape[:-1] + (3 * len(chi),))


def limb_directions_tensor(pose: ad.Tensor, skeleton: Skeleton) -> ad.Tensor:
    """Differentiable limb directions with limb length clamped at 1e-6."""
    lead = pose.shape[:-1]
    j = ad.reshape(pose, lead + (skeleton.J, 3))
    axis = len(lead)
    par = [p for p, _ in skeleton.limbs]
    chi = [c for _, c in skeleton.limbs]
    vec = ad.take(j, chi, axis=axis) - ad.take(j, par, axis=axis)
    n = ad.clamp(ad.l2_norm(vec, axis=-1, keepdims=True), lo=LIMB_EPS)
    return ad.reshape(vec / n, lead + (3 * len(chi),))


# ---------------------------------------------------------------- flow

def _q_tensor(layer: FlowLayerParams) -> ad.Tensor:
    n = layer.dim
    Q = ad.Tensor(np.eye(n))
    for i in range(n):
        v = layer.householder[i]
        nv = ad.l2_norm(v)
        if nv.data == 0.0:
            continue
        u = v / nv
        Q = Q - ad.scale(ad.matmul(ad.matmul(Q, ad.reshape(u, (n, 1))), ad.reshape(u, (1, n))), 2.0)
    return Q


def _layer_terms(layer: FlowLayerParams, differentiable: bool):
    n = layer.dim
    if differentiable:
        Q = _q_tensor(layer)
        mask = np.triu(np.ones((n, n)), 1)
        R = ad.mul(layer.r_upper, mask) + ad.mul(ad.reshape(ad.exp(layer.r_diag_raw), (1, n)), np.eye(n))
        return ad.matmul(Q, R), ad.sum_(layer.r_diag_raw), layer.bias, layer.slope_raw
    W = layer.q_matrix() @ layer.r_matrix()
    return (ad.Tensor(W), ad.Tensor(layer.r_diag_raw.data.sum()), ad.Tensor(layer.bias.data),
            ad.Tensor(layer.slope_raw.data))


def flow_forward(d, params: FlowParams, differentiable: bool = False):
    """Map directions (N, n) to latents; returns (h, log_det) as tensors of shape (N, n), (N,)."""
    h = ad.as_tensor(d)
    if h.shape[-1] != params.dim:
        raise ad.DimensionError(f"flow_forward: input dim {h.shape[-1]} != flow dim {params.dim}")
    log_det = None
    for layer in params.layers:
        W, logdiag, b, slope_raw = _layer_terms(layer, differentiable)
        pre = ad.matmul(h, W) + b
        neg = (pre.data <= 0).astype(np.float64)
        h = ad.prelu(pre, ad.exp(slope_raw))
        term = logdiag + ad.mul(ad.sum_(ad.Tensor(neg), axis=-1), slope_raw)
        log_det = term if log_det is None else log_det + term
    return h, log_det


def flow_inverse(h: np.ndarray, params: FlowParams) -> np.ndarray:
    y = np.atleast_2d(np.asarray(h, dtype=np.float64))
    for layer in reversed(params.layers):
        a = layer.slope
        u = np.where(y > 0, y, y / a) - layer.bias.data
        w = solve_triangular(layer.r_matrix().T, u.T, lower=True).T
        y = w @ layer.q_matrix().T
    return y.reshape(np.shape(h))


def log_likelihood(d, params: FlowParams, differentiable: bool = False):
    """Per-row log density of directions under the flow (tensor of shape (N,))."""
    h, log_det = flow_forward(d, params, differentiable)
    n = params.dim
    return ad.scale(ad.sum_(ad.square(h), axis=-1), -0.5) + log_det - 0.5 * n * math.log(2 * math.pi)


def gaussian_nll(d: np.ndarray) -> np.ndarray:
    """Standard-normal negative log density of each row, for comparison."""
    d = np.atleast_2d(d)
    return 0.5 * d.shape[-1] * math.log(2 * math.pi) + 0.5 * (d * d).sum(-1)


def nf_loss(poses: ad.Tensor, params: FlowParams, skeleton: Skeleton) -> ad.Tensor:
    """Mean negative log-likelihood over every pose in ``poses`` (..., 3J); flow frozen."""
    d = limb_directions_tensor(ad.as_tensor(poses), skeleton)
    flat = ad.reshape(d, (-1, d.shape[-1]))
    return ad.scale(ad.mean(log_likelihood(flat, params)), -1.0)


# ---------------------------------------------------------------- training

@dataclass
class PriorTrainConfig:
    epochs: int = 30
    batch_size: int = 512
    lr: float = 1e-3
    holdout: float = 0.1
    seed: int = 0
    max_samples: int | None = 20000


def train_prior(data: np.ndarray, config: PriorTrainConfig = PriorTrainConfig(), params: FlowParams | None = None):
    """Maximum-likelihood fit of the flow; returns (params, curve).

    ``curve`` holds one dict per epoch (epoch 0 = before training) with the
    mean train and held-out NLL.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or len(data) == 0:
        raise ValueError("train_prior needs a non-empty (N, n) array")
    rng = np.random.default_rng(config.seed)
    idx = rng.permutation(len(data))
    if config.max_samples is not None:
        idx = idx[:config.max_samples]
    n_hold = max(1, int(round(config.holdout * len(idx)))) if len(idx) > 1 else 0
    hold, train = data[idx[:n_hold]], data[idx[n_hold:]]
    if params is None:
        params = init_flow(data.shape[1], config.seed)
    opt = ad.Adam(params.parameters(), lr=config.lr)

    def mean_nll(x):
        if len(x) == 0:
            return float("nan")
        return -float(log_likelihood(x, params).data.mean())

    curve = [{"epoch": 0, "train_nll": mean_nll(train), "heldout_nll": mean_nll(hold)}]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        for s in range(0, len(order), config.batch_size):
            batch = train[order[s:s + config.batch_size]]
            opt.zero_grad()
            loss = ad.scale(ad.mean(log_likelihood(batch, params, differentiable=True)), -1.0)
            if not np.isfinite(loss.data):
                raise TrainingError(f"prior NLL became non-finite at epoch {epoch}")
            ad.backward(loss)
            opt.step()
        row = {"epoch": epoch, "train_nll": mean_nll(train), "heldout_nll": mean_nll(hold)}
        if not np.isfinite(row["train_nll"]):
            raise TrainingError(f"prior NLL became non-finite at epoch {epoch}")
        log.info("prior epoch %d train %.4f heldout %.4f", epoch, row["train_nll"], row["heldout_nll"])
        curve.append(row)
    return params, curve


# ---------------------------------------------------------------- checkpoint

def save_prior(path, params: FlowParams, skeleton: Skeleton | None = None) -> None:
    meta = {"version": CHECKPOINT_VERSION, "dim": params.dim, "layers": len(params.layers)}
    if skeleton is not None:
        meta.update(joints=list(skeleton.joint_names), parents=list(skeleton.parents),
                    fingerprint=skeleton.fingerprint())
    arrays = {"meta": np.array(json.dumps(meta))}
    for k, layer in enumerate(params.layers):
        for p in layer.parameters():
            arrays[p.name] = p.data
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_prior(path, skeleton: Skeleton | None = None) -> FlowParams:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported prior checkpoint version {meta.get('version')}")
        dim = meta["dim"]
        if skeleton is not None and dim != 3 * len(skeleton.limbs):
            raise ValueError(f"prior dimension {dim} does not match skeleton with {len(skeleton.limbs)} limbs")
        params = init_flow(dim, 0, meta["layers"])
        for layer in params.layers:
            for p in layer.parameters():
                p.data = np.array(z[p.name], dtype=np.float64)
                p.zero_grad()
    return params
