"""Diversity and accuracy metrics for sets of sampled futures."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .autodiff import ContractError

log = logging.getLogger(__name__)


def _flat(samples) -> np.ndarray:
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim < 2:
        raise ContractError(f"samples must be (K, ...), got shape {s.shape}")
    return s.reshape(len(s), -1)


def apd(samples) -> float:
    """Average pairwise L2 distance between K flattened futures (K >= 2)."""
    s = _flat(samples)
    if len(s) < 2:
        raise ContractError(f"apd needs at least 2 samples, got {len(s)}")
    return float(pdist(s).mean())


def ade(samples, gt) -> float:
    """Best-of-K L2 error over the whole future divided by the number of frames T."""
    s = np.asarray(samples, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if len(s) < 1:
        raise ContractError("ade needs at least one sample")
    err = np.linalg.norm((s - gt[None]).reshape(len(s), -1), axis=1)
    return float(err.min() / gt.shape[0])


def fde(samples, gt) -> float:
    """Best-of-K L2 error of the final frame."""
    s = np.asarray(samples, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if len(s) < 1:
        raise ContractError("fde needs at least one sample")
    return float(np.linalg.norm((s[:, -1] - gt[-1]).reshape(len(s), -1), axis=1).min())


def mmade(samples, pseudo_gts) -> float:
    if len(pseudo_gts) == 0:
        raise ContractError("mmade needs at least one pseudo ground truth")
    return float(np.mean([ade(samples, y) for y in pseudo_gts]))


def mmfde(samples, pseudo_gts) -> float:
    if len(pseudo_gts) == 0:
        raise ContractError("mmfde needs at least one pseudo ground truth")
    return float(np.mean([fde(samples, y) for y in pseudo_gts]))


def zero_velocity_baseline(past, T: int) -> np.ndarray:
    """Repeat the last observed pose for T frames."""
    past = np.asarray(past, dtype=np.float64)
    if past.ndim != 2 or len(past) == 0:
        raise ContractError("zero_velocity_baseline needs a non-empty (H, D) past")
    return np.repeat(past[-1:], T, axis=0)


def part_apd(samples, coords) -> float:
    """APD restricted to a subset of coordinates (last axis)."""
    s = np.asarray(samples, dtype=np.float64)
    return apd(s[..., np.asarray(coords, dtype=int)])


@dataclass
class EvalReport:
    APD: float
    ADE: float
    FDE: float
    MMADE: float
    MMFDE: float
    part_apd: dict = field(default_factory=dict)
    n_samples: int = 0
    n_sequences: int = 0
    n_mm_skipped: int = 0
    model: str = ""

    def row(self) -> dict:
        out = {"model": self.model, "APD": self.APD, "ADE": self.ADE, "FDE": self.FDE,
               "MMADE": self.MMADE, "MMFDE": self.MMFDE}
        out.update({f"APD_{k}": v for k, v in self.part_apd.items()})
        out.update(n_samples=self.n_samples, n_sequences=self.n_sequences, n_mm_skipped=self.n_mm_skipped)
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        row = self.row()
        w = max(len(k) for k in row)
        lines = []
        for k, v in row.items():
            lines.append(f"{k:<{w}}  {v:.4f}" if isinstance(v, float) else f"{k:<{w}}  {v}")
        return "\n".join(lines)


def write_reports_csv(path, reports) -> None:
    rows = [r.row() for r in reports]
    keys = list(dict.fromkeys(k for r in rows for k in r))
    with open(Path(path), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def evaluate(predictions, gts, pseudo_gts=None, parts: dict | None = None, model: str = "") -> EvalReport:
    """Aggregate metrics over test sequences (mean over sequences).

    predictions[s] is (K, T, D) for sequence s, gts[s] is (T, D) and
    pseudo_gts[s] a (P, T, D) array; sequences with P = 0 are skipped for the
    multi-modal metrics and counted. ``parts`` maps names to coordinate lists.
    """
    if len(predictions) != len(gts) or len(predictions) == 0:
        raise ContractError("need one non-empty prediction set per ground-truth sequence")
    K = len(predictions[0])
    a, e, f, mma, mmf, skipped = [], [], [], [], [], 0
    per_part = {name: [] for name in (parts or {})}
    for s, (pred, gt) in enumerate(zip(predictions, gts)):
        pred = np.asarray(pred, dtype=np.float64)
        a.append(apd(pred) if len(pred) > 1 else 0.0)
        e.append(ade(pred, gt))
        f.append(fde(pred, gt))
        for name, coords in (parts or {}).items():
            per_part[name].append(part_apd(pred, coords) if len(pred) > 1 else 0.0)
        pg = None if pseudo_gts is None else pseudo_gts[s]
        if pg is None or len(pg) == 0:
            skipped += 1
            continue
        mma.append(mmade(pred, pg))
        mmf.append(mmfde(pred, pg))
    if skipped:
        log.warning("%d sequences had no pseudo ground truth and were skipped for MMADE/MMFDE", skipped)
    nan = float("nan")
    return EvalReport(
        APD=float(np.mean(a)), ADE=float(np.mean(e)), FDE=float(np.mean(f)),
        MMADE=float(np.mean(mma)) if mma else nan, MMFDE=float(np.mean(mmf)) if mmf else nan,
        part_apd={k: float(np.mean(v)) for k, v in per_part.items()},
        n_samples=K, n_sequences=len(predictions), n_mm_skipped=skipped, model=model,
    )
