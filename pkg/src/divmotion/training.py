"""Generator training: batch losses, the optimisation schedule and checkpoints."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import ConfigError, TrainConfig
from .dct import decode
from .generator import MotionGenerator, PartitionSpec, sample_paths, save_generator
from .kinematics import AngleTable, angle_loss
from .losses import loss_d, loss_limb, loss_mm, loss_past, loss_r, weighted_total
from .metrics import ade, apd
from .prior import FlowParams, TrainingError, nf_loss
from .skeleton import Skeleton, limb_lengths, mine_pseudo_gt

log = logging.getLogger(__name__)


@dataclass
class LossContext:
    """Frozen ingredients shared by every batch."""
    skeleton: Skeleton
    prior: FlowParams | None
    table: AngleTable | None
    config: TrainConfig

    def weights(self, n_parts: int) -> dict:
        c = self.config
        w = {"nf": c.lambda_nf, "a": c.lambda_a, "r": c.lambda_r, "mm": c.lambda_mm,
             "past": c.lambda_past, "limb": c.lambda_limb}
        for i in range(n_parts):
            w[f"d{i + 1}"] = c.lambda_d[i]
        return w


def term_names(n_parts: int) -> list:
    return ["nf", "a"] + [f"d{i + 1}" for i in range(n_parts)] + ["r", "mm", "past", "limb"]


def batch_terms(gen: MotionGenerator, pasts, gts, pseudo_gts, zs, ctx: LossContext) -> dict:
    """Every loss term for one batch of windows sampled as a full K-ary tree.

    pasts (B, H, 3J); gts (B, T, 3J); pseudo_gts[b] (P_b, T, 3J); zs[i] (B, K**(i+1), latent).
    """
    K = ctx.config.K
    H = gen.H
    parents = [np.arange(K ** (i + 1)) // K for i in range(gen.N)]
    coeffs, anc = gen.run(pasts, zs, parents)
    full = gen.assemble(coeffs, anc)
    fut = full[:, :, H:, :]
    terms = {}
    terms["nf"] = nf_loss(fut, ctx.prior, ctx.skeleton) if ctx.prior is not None else ad.Tensor(0.0)
    terms["a"] = angle_loss(fut, ctx.table, ctx.skeleton) if ctx.table is not None else ad.Tensor(0.0)
    for i, c in enumerate(coeffs):
        traj = decode(c, gen.basis)[..., H:]  # (B, S_i, n_i, T)
        B, S = traj.shape[:2]
        if K >= 2:
            terms[f"d{i + 1}"] = loss_d(ad.reshape(traj, (B, S // K, K, -1)), ctx.config.alpha[i])
        else:
            terms[f"d{i + 1}"] = ad.Tensor(0.0)
    terms["r"] = loss_r(fut, gts)
    mm = [loss_mm(fut[b], pseudo_gts[b]) for b in range(len(pasts))]
    terms["mm"] = ad.scale(ad.concat([ad.reshape(m, (1,)) for m in mm]).sum(), 1.0 / len(mm))
    terms["past"] = loss_past(full, gen.padded_past(pasts)[:, None], H)
    gt_len = limb_lengths(pasts[:, -1], ctx.skeleton)  # (B, J-1)
    terms["limb"] = loss_limb(fut, gt_len[:, None, None, :], ctx.skeleton)
    return {k: terms[k] for k in term_names(gen.N)}


def total_loss(terms: dict, ctx: LossContext, n_parts: int) -> ad.Tensor:
    try:
        return weighted_total(terms, ctx.weights(n_parts))
    except FloatingPointError as e:
        raise TrainingError(str(e)) from None


# ---------------------------------------------------------------- data

def pseudo_gt_index(windows, threshold: float, max_count: int | None = None) -> list:
    """Per window, indices of windows whose last past pose is within ``threshold``.

    Nearest first (the window itself leads); at most ``max_count`` are kept.
    """
    pg = mine_pseudo_gt(windows, threshold)
    if not windows:
        return []
    last = np.stack([w.last_pose for w in windows])
    out = []
    for a, nb in enumerate(pg.neighbours):
        d = np.linalg.norm(last[nb] - last[a], axis=1)
        nb = nb[np.argsort(d, kind="stable")]
        out.append(nb[:max_count] if max_count is not None else nb)
    return out


def validate_model(gen: MotionGenerator, windows, n_samples: int, seed: int = 0, chunk: int = 16) -> dict:
    """Mean APD and ADE of ``n_samples`` independent paths per window."""
    apds, ades = [], []
    for lo in range(0, len(windows), chunk):
        ws = windows[lo:lo + chunk]
        ps = sample_paths(gen, np.stack([w.past for w in ws]), n_samples, seed, batch_offset=lo)
        for b, w in enumerate(ws):
            f = ps.futures[b]
            apds.append(apd(f) if len(f) > 1 else 0.0)
            ades.append(ade(f, w.future))
    return {"APD": float(np.mean(apds)), "ADE": float(np.mean(ades))}


def _spread(items: list, n: int) -> list:
    if n >= len(items):
        return list(items)
    return [items[i] for i in np.linspace(0, len(items) - 1, n).round().astype(int)]


# ---------------------------------------------------------------- loop

@dataclass
class TrainResult:
    generator: MotionGenerator
    history: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def train(config: TrainConfig, skeleton: Skeleton, train_windows: list, prior: FlowParams | None,
          table: AngleTable | None, val_windows: list | None = None, out_dir=None) -> TrainResult:
    """Adam on the weighted loss with per-epoch linear lr decay.

    Writes ``metrics.csv`` and checkpoints under ``out_dir`` when given.
    Raises TrainingError on a non-finite term or a loss above
    ``config.divergence_limit``; checkpoints written before that are kept.
    """
    cfg = config
    partition = PartitionSpec.named(cfg.parts, skeleton)
    if len(cfg.lambda_d) != partition.N:
        raise ConfigError(f"{partition.N} body parts but {len(cfg.lambda_d)} diversity weights")
    if len(train_windows) < 1:
        raise ConfigError("no training windows; sequences shorter than H+T?")
    gen = MotionGenerator(skeleton, partition, cfg.H, cfg.T, cfg.M, cfg.hidden, cfg.latent_dim,
                          cfg.n_blocks, seed=cfg.seed)
    ctx = LossContext(skeleton, prior, table, cfg)
    pgt_index = pseudo_gt_index(train_windows, cfg.pgt_threshold, cfg.max_pseudo_gt)
    futures = np.stack([w.future for w in train_windows])
    val = _spread(val_windows or [], cfg.val_windows)
    rng = np.random.default_rng([cfg.seed, 1])
    opt = ad.Adam(gen.parameters(), lr=cfg.lr)
    names = term_names(gen.N)
    steps = max(1, cfg.samples_per_epoch // cfg.batch_size)
    B = min(cfg.batch_size, len(train_windows))

    out = Path(out_dir) if out_dir is not None else None
    writer = fh = None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        fh = open(out / "metrics.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr"] + [f"L_{n}" for n in names] + ["total", "APD", "ADE", "seconds"])
    result = TrainResult(gen)
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            opt.lr = cfg.lr * cfg.lr_factor(epoch)
            sums = dict.fromkeys(names + ["total"], 0.0)
            for step in range(steps):
                idx = rng.choice(len(train_windows), size=B, replace=False)
                pasts = np.stack([train_windows[i].past for i in idx])
                gts = futures[idx]
                zs = [rng.standard_normal((B, cfg.K ** (i + 1), cfg.latent_dim)) for i in range(gen.N)]
                terms = batch_terms(gen, pasts, gts, [futures[pgt_index[i]] for i in idx], zs, ctx)
                total = total_loss(terms, ctx, gen.N)
                value = float(total.data)
                if not np.isfinite(value) or value > cfg.divergence_limit:
                    raise TrainingError(f"loss diverged ({value:.4g}) at epoch {epoch} step {step}")
                log.debug("epoch %d step %d %s", epoch, step,
                          " ".join(f"{k}={float(v.data):.4g}" for k, v in terms.items()))
                opt.zero_grad()
                ad.backward(total)
                opt.step()
                for k, v in terms.items():
                    sums[k] += float(v.data)
                sums["total"] += value
            row = {"epoch": epoch, "lr": opt.lr}
            row.update({k: v / steps for k, v in sums.items()})
            row.update(validate_model(gen, val, cfg.val_samples, seed=cfg.seed) if val
                       else {"APD": float("nan"), "ADE": float("nan")})
            row["seconds"] = time.perf_counter() - t0
            result.history.append(row)
            log.info("epoch %d total %.4f r %.4f APD %.4f ADE %.4f (%.1fs)", epoch, row["total"],
                     row["r"], row["APD"], row["ADE"], row["seconds"])
            if writer is not None:
                writer.writerow([epoch, repr(opt.lr)] + [repr(row[n]) for n in names]
                                + [repr(row["total"]), repr(row["APD"]), repr(row["ADE"]),
                                   f"{row['seconds']:.3f}"])
                fh.flush()
                if (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs:
                    path = out / "checkpoints" / f"generator_epoch{epoch + 1:04d}.npz"
                    save_generator(path, gen, {"epoch": epoch + 1})
                    result.checkpoints.append(path)
    finally:
        if fh is not None:
            fh.close()
    return result
