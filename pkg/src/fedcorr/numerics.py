"""Dense linear-algebra kernels with pinned ordering and sign conventions.

All routines take and return plain ``numpy`` arrays. Singular and eigen
vectors are sign-normalised so that the first nonzero entry of every column
is non-negative, which makes factorizations reproducible across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fedcorr.errors import InvalidInput, ShapeMismatch

# relative cutoff used by the pseudoinverse in lstsq_minnorm
PINV_RTOL = 1e-12
# entries below this magnitude are skipped when locating a column's sign anchor
_SIGN_EPS = 1e-12


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``a = u @ diag(sigma) @ v.T`` with ``k = min(p, q)``."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class EigResult:
    """Eigendecomposition ``c = q @ diag(lam) @ q.T`` of a symmetric matrix."""

    q: np.ndarray
    lam: np.ndarray


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidInput(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("matrix contains non-finite entries")
    return a


def ceil_fraction(fraction: float, count: int) -> int:
    """``ceil(fraction * count)`` robust to float noise such as ``0.6 * 5``."""
    return int(math.ceil(round(fraction * count, 9)))


def _sign_flips(cols: np.ndarray) -> np.ndarray:
    """+1/-1 per column so that its first non-negligible entry becomes >= 0."""
    signs = np.ones(cols.shape[1])
    for j in range(cols.shape[1]):
        col = cols[:, j]
        nz = np.flatnonzero(np.abs(col) > _SIGN_EPS)
        if nz.size and col[nz[0]] < 0:
            signs[j] = -1.0
    return signs


def thin_svd(a) -> SvdResult:
    """Thin SVD with singular values sorted non-increasing.

    Parameters
    ----------
    a : array_like, shape (p, q)

    Returns
    -------
    SvdResult
        ``u`` is p x k, ``sigma`` has length k and ``v`` is q x k, with
        ``k = min(p, q)``.
    """
    a = as_matrix(a)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    signs = _sign_flips(u)
    # adding 0.0 turns -0.0 into +0.0
    u = u * signs + 0.0
    v = vt.T * signs + 0.0
    return SvdResult(u=u, sigma=s, v=v)


def singular_values(a) -> np.ndarray:
    return np.linalg.svd(as_matrix(a), compute_uv=False)


def sym_eig_desc(c) -> EigResult:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    The input is symmetrized as ``(c + c.T) / 2`` before factorizing.
    """
    c = as_matrix(c)
    if c.shape[0] != c.shape[1]:
        raise InvalidInput(f"sym_eig_desc needs a square matrix, got {c.shape}")
    c = 0.5 * (c + c.T)
    lam, q = np.linalg.eigh(c)
    lam = lam[::-1].copy()
    q = q[:, ::-1]
    q = q * _sign_flips(q) + 0.0
    return EigResult(q=q, lam=lam)


def lstsq_minnorm(m, g) -> np.ndarray:
    """Minimum-norm minimizer of ``||g - m @ a||``.

    Singular values below ``1e-12 * sigma_1`` are treated as zero, so a
    rank-deficient (or all-zero) ``m`` yields the pseudoinverse solution.
    With full column rank this equals ``(m.T m)^-1 m.T g``.
    """
    m = np.asarray(m, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if m.ndim != 2 or g.ndim != 1 or m.shape[0] != g.shape[0]:
        raise ShapeMismatch(f"operator {m.shape} incompatible with vector {g.shape}")
    h = m.shape[1]
    if h == 0:
        return np.zeros(0)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(h)
    keep = s > PINV_RTOL * s[0]
    coeffs = (u[:, keep].T @ g) / s[keep]
    return vt[keep].T @ coeffs
