"""Truncated orthonormal DCT-II trajectory codec."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import ConfigError


@dataclass(frozen=True)
class DctBasis:
    matrix: np.ndarray  # (H+T, M)
    H: int
    T: int

    @property
    def M(self) -> int:
        return self.matrix.shape[1]

    @property
    def length(self) -> int:
        return self.H + self.T


def build_basis(H: int, T: int, M: int) -> DctBasis:
    n = H + T
    if not 1 <= M <= n:
        raise ConfigError(f"need 1 <= M <= H+T = {n}, got M={M}")
    t = np.arange(n)[:, None]
    k = np.arange(M)[None, :]
    mat = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * t + 1) * k / (2 * n))
    mat[:, 0] /= np.sqrt(2.0)
    return DctBasis(mat, H, T)


def replicate_pad(past: np.ndarray, T: int, H: int | None = None) -> np.ndarray:
    """Append T copies of the last frame; ``past`` is (H, D)."""
    past = np.asarray(past)
    if H is not None and past.shape[0] != H:
        raise ad.ContractError(f"replicate_pad: expected {H} frames, got {past.shape[0]}")
    if past.shape[0] < 1:
        raise ad.ContractError("replicate_pad: empty past")
    return np.concatenate([past, np.repeat(past[-1:], T, axis=0)], axis=0)


def encode(traj, basis: DctBasis):
    """Trajectories (..., D, H+T) -> coefficients (..., D, M).

    Accepts numpy arrays or autodiff tensors and returns the same kind.
    """
    if traj.shape[-1] != basis.length:
        raise ad.DimensionError(f"encode: trajectory length {traj.shape[-1]} != basis length {basis.length}")
    if isinstance(traj, ad.Tensor):
        return ad.matmul(traj, basis.matrix)
    return np.asarray(traj) @ basis.matrix


def decode(coeffs, basis: DctBasis):
    """Coefficients (..., D, M) -> trajectories (..., D, H+T)."""
    if coeffs.shape[-1] != basis.M:
        raise ad.DimensionError(f"decode: {coeffs.shape[-1]} coefficients but basis has M={basis.M}")
    if isinstance(coeffs, ad.Tensor):
        return ad.matmul(coeffs, basis.matrix.T)
    return np.asarray(coeffs) @ basis.matrix.T
