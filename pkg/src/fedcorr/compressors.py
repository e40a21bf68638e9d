"""Compression and decompression primitives.

Each codec is a pair of pure functions. The only stateful piece is
:class:`PredictorMemory`, the sliding window of past reconstructions used by
the linear predictor; it is written by a single owner (one per client stream
on each side of the link).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedcorr.errors import InvalidInput, ShapeMismatch
from fedcorr.metrics import PcaBasis
from fedcorr.numerics import ceil_fraction, lstsq_minnorm
from fedcorr.updates import UpdateMatrix


def _check_basis(rows: int, basis: np.ndarray, what: str):
    if basis.ndim != 2 or basis.shape[0] != rows:
        raise ShapeMismatch(f"{what}: basis {basis.shape} does not match length {rows}")


# -- SVD low-rank ----------------------------------------------------------


def svd_project_left(gm: UpdateMatrix, u_r) -> np.ndarray:
    """Left projection ``u_r.T @ G``; costs ``r * n`` uplink elements."""
    u_r = np.asarray(u_r, dtype=np.float64)
    _check_basis(gm.g_mat.shape[0], u_r, "svd_project_left")
    return u_r.T @ gm.g_mat


def svd_reconstruct_left(coeffs, u_r) -> np.ndarray:
    return np.asarray(u_r) @ np.asarray(coeffs)


def svd_diag_encode(gm: UpdateMatrix, u_r, v_r) -> np.ndarray:
    """Diagonal of ``u_r.T @ G @ v_r``; the off-diagonal part is dropped."""
    u_r = np.asarray(u_r, dtype=np.float64)
    v_r = np.asarray(v_r, dtype=np.float64)
    _check_basis(gm.g_mat.shape[0], u_r, "svd_diag_encode (u)")
    _check_basis(gm.g_mat.shape[1], v_r, "svd_diag_encode (v)")
    if u_r.shape[1] != v_r.shape[1]:
        raise ShapeMismatch("u_r and v_r must have the same rank")
    return np.einsum("ir,ij,jr->r", u_r, gm.g_mat, v_r)


def svd_diag_decode(diag, u_r, v_r) -> np.ndarray:
    return (np.asarray(u_r) * np.asarray(diag)) @ np.asarray(v_r).T


# -- PCA slice codec -------------------------------------------------------


def pca_compress(slice_, basis: PcaBasis) -> np.ndarray:
    """Coefficients ``Q_r.T (g - mu)`` of one update slice."""
    slice_ = np.asarray(slice_, dtype=np.float64)
    if slice_.shape != basis.mu.shape:
        raise ShapeMismatch(f"slice of length {slice_.size}, basis for {basis.p}")
    return basis.q_r.T @ (slice_ - basis.mu)


def pca_decompress(coeffs, basis: PcaBasis) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (basis.r,):
        raise ShapeMismatch(f"expected {basis.r} coefficients, got {coeffs.shape}")
    return basis.q_r @ coeffs + basis.mu


# -- fixed subspace projection ---------------------------------------------


def subspace_project(g, u_r) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    u_r = np.asarray(u_r, dtype=np.float64)
    _check_basis(g.size, u_r, "subspace_project")
    return u_r.T @ g


def subspace_reconstruct(coeffs, u_r) -> np.ndarray:
    u_r = np.asarray(u_r, dtype=np.float64)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if u_r.ndim != 2 or coeffs.shape != (u_r.shape[1],):
        raise ShapeMismatch(f"{coeffs.shape} coefficients for basis {u_r.shape}")
    return u_r @ coeffs


# -- top-k sparsification --------------------------------------------------


@dataclass(frozen=True)
class SparseResidual:
    """Top-k survivors of a length-``dim`` vector. Indices are 0-based, ascending."""

    dim: int
    indices: np.ndarray
    values: np.ndarray

    @property
    def k(self) -> int:
        return int(self.indices.size)


def topk_count(d: int, fraction: float) -> int:
    return max(1, ceil_fraction(fraction, d))


def topk_sparsify(v, fraction: float) -> SparseResidual:
    """Keep the ``ceil(fraction * d)`` largest-magnitude entries.

    Ties are broken in favour of the lower index.
    """
    if not 0.0 < fraction <= 1.0:
        raise InvalidInput(f"fraction {fraction} outside (0, 1]")
    v = np.asarray(v, dtype=np.float64)
    k = min(topk_count(v.size, fraction), v.size)
    order = np.argsort(-np.abs(v), kind="stable")[:k]
    idx = np.sort(order)
    return SparseResidual(dim=v.size, indices=idx, values=v[idx].copy())


def expand(sparse: SparseResidual) -> np.ndarray:
    out = np.zeros(sparse.dim)
    out[sparse.indices] = sparse.values
    return out


# -- linear predictive coding ----------------------------------------------


class PredictorMemory:
    """Window of the last ``h`` reconstructions, newest in column 0.

    Unfilled columns stay zero.
    """

    def __init__(self, d: int, h: int):
        if d < 1 or h < 1:
            raise InvalidInput("memory needs d >= 1 and h >= 1")
        self.columns = np.zeros((d, h))
        self.filled = 0

    @property
    def d(self) -> int:
        return self.columns.shape[0]

    @property
    def h(self) -> int:
        return self.columns.shape[1]

    def shift_in(self, g_hat) -> None:
        g_hat = np.asarray(g_hat, dtype=np.float64)
        if g_hat.shape != (self.d,):
            raise ShapeMismatch(f"memory holds length {self.d}, got {g_hat.shape}")
        self.columns[:, 1:] = self.columns[:, :-1]
        self.columns[:, 0] = g_hat
        self.filled = min(self.filled + 1, self.h)

    def copy(self) -> "PredictorMemory":
        other = PredictorMemory(self.d, self.h)
        other.columns = self.columns.copy()
        other.filled = self.filled
        return other


def predictor_fit(memory: PredictorMemory, g) -> np.ndarray:
    """Least-squares prediction coefficients over the filled columns.

    Coefficients of unfilled columns are fixed at zero.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (memory.d,):
        raise ShapeMismatch(f"memory holds length {memory.d}, got {g.shape}")
    coeffs = np.zeros(memory.h)
    if memory.filled:
        coeffs[: memory.filled] = lstsq_minnorm(memory.columns[:, : memory.filled], g)
    return coeffs


def predict(memory: PredictorMemory, coeffs) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (memory.h,):
        raise ShapeMismatch(f"expected {memory.h} coefficients, got {coeffs.shape}")
    return memory.columns @ coeffs


def predictor_roundtrip(memory: PredictorMemory, coeffs, residual: SparseResidual) -> np.ndarray:
    """Reconstruction ``M a + expand(residual)``.

    Client and server run this on identical memories, so both obtain the same
    vector bit for bit.
    """
    if residual.dim != memory.d:
        raise ShapeMismatch(f"residual of length {residual.dim}, memory holds {memory.d}")
    return predict(memory, coeffs) + expand(residual)


def predictive_encode(memory: PredictorMemory, g, fraction: float):
    """Client side of one predictive-coding step: coefficients and sparse residual."""
    coeffs = predictor_fit(memory, g)
    residual = np.asarray(g, dtype=np.float64) - predict(memory, coeffs)
    return coeffs, topk_sparsify(residual, fraction)
