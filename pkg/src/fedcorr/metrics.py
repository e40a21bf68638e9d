"""Correlation measurements: cosine similarity, energy ratios, and the
Measure/Narrow operators for SVD and PCA.

Threshold tests everywhere use ``ratio >= alpha`` with a ``1e-12`` slack so
that hand-computed boundary cases such as ``4/5 >= 0.8`` do not hinge on the
last bit of an SVD.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from fedcorr.errors import InsufficientSamples, InvalidInput, ShapeMismatch
from fedcorr.numerics import as_matrix, ceil_fraction, singular_values, sym_eig_desc, thin_svd

THRESHOLD_SLACK = 1e-12

KINDS = ("structural", "temporal", "spatial")


@dataclass(frozen=True)
class TruncatedSvd:
    u_r: np.ndarray
    sigma_r: np.ndarray
    v_r: np.ndarray

    @property
    def r(self) -> int:
        return int(self.sigma_r.size)


@dataclass(frozen=True)
class PcaBasis:
    """Mean vector plus an orthonormal p x r basis; ``r == 0`` is allowed."""

    q_r: np.ndarray
    mu: np.ndarray

    @property
    def r(self) -> int:
        return int(self.q_r.shape[1])

    @property
    def p(self) -> int:
        return int(self.mu.size)

    @property
    def element_count(self) -> int:
        """Scalars needed to ship this basis: ``p * (r + 1)``."""
        return self.p * (self.r + 1)


@dataclass(frozen=True)
class CorrelationReading:
    round: int
    kind: str
    alpha: float
    r_used: int
    sample_count: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown correlation kind {self.kind!r}")
        if not 0.0 <= self.alpha <= 1.0 + THRESHOLD_SLACK:
            raise InvalidInput(f"alpha {self.alpha} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)


def passes(ratio: float, alpha: float) -> bool:
    return ratio >= alpha - THRESHOLD_SLACK


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between ``u`` and ``v``; 0 if either is zero."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeMismatch(f"lengths differ: {u.size} vs {v.size}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def conserved_energy_ratio(sigma, r: int) -> float:
    """Share of squared singular-value mass in the leading ``r`` values."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if not 0 <= r <= sigma.size:
        raise InvalidInput(f"r={r} outside [0, {sigma.size}]")
    peak = np.abs(sigma).max(initial=0.0)
    if peak == 0.0:
        return 0.0
    if r == sigma.size:
        return 1.0
    # rescaling keeps tiny spectra from underflowing when squared
    energy = (sigma / peak) ** 2
    return float(energy[:r].sum() / energy.sum())


def _smallest_rank(ratios, alpha: float) -> int:
    for r, ratio in enumerate(ratios):
        if passes(ratio, alpha):
            return r
    return len(ratios) - 1


def measure_corr_svd(phi, beta: float) -> float:
    """Conserved energy ratio at rank ``ceil(beta * min(p, q))``."""
    if not 0.0 <= beta <= 1.0:
        raise InvalidInput(f"beta {beta} outside [0, 1]")
    sigma = singular_values(phi)
    return conserved_energy_ratio(sigma, ceil_fraction(beta, sigma.size))


def narrow_svd(phi, alpha: float) -> TruncatedSvd:
    """Smallest-rank truncated SVD conserving at least ``alpha`` of the energy.

    An all-zero ``phi`` yields ``r = 0``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInput(f"alpha {alpha} outside [0, 1]")
    res = thin_svd(phi)
    k = res.sigma.size
    if not np.any(res.sigma):
        r = 0
    else:
        r = _smallest_rank([conserved_energy_ratio(res.sigma, j) for j in range(k + 1)], alpha)
    return TruncatedSvd(u_r=res.u[:, :r], sigma_r=res.sigma[:r], v_r=res.v[:, :r])


# pca_fit switches to the covariance route once s exceeds this multiple of p
_COVARIANCE_SWITCH = 4


def _as_samples(samples) -> np.ndarray:
    """Stack samples as rows of an (s, p) array."""
    if isinstance(samples, np.ndarray) and samples.ndim == 2:
        x = samples.astype(np.float64, copy=False)
    else:
        x = np.array([np.asarray(s, dtype=np.float64).ravel() for s in samples])
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientSamples(f"need at least 2 samples, got {x.shape[0] if x.ndim else 0}")
    return as_matrix(x)


def pca_fit(samples):
    """Sample mean and covariance spectrum (divisor ``s - 1``).

    Parameters
    ----------
    samples : sequence of p-vectors, or an (s, p) array with one sample per row

    Returns
    -------
    mu : (p,) ndarray
    lam : (p,) ndarray
        Covariance eigenvalues, non-increasing. Only the first
        ``min(s, p)`` can be nonzero; the rest are padded with zeros.
    q : (p, min(s, p)) ndarray
        Principal directions belonging to the leading eigenvalues.

    Notes
    -----
    With fewer samples than dimensions the centered sample matrix is
    factorized by a thin SVD and the covariance is never formed. With many
    more samples than dimensions the p x p covariance is cheaper to
    eigendecompose; tiny negative eigenvalues from rounding are clipped.
    """
    x = _as_samples(samples)
    s, p = x.shape
    mu = x.mean(axis=0)
    centered = x - mu
    if s > _COVARIANCE_SWITCH * p:
        eig = sym_eig_desc(centered.T @ centered / (s - 1))
        return mu, np.maximum(eig.lam, 0.0), eig.q
    res = thin_svd(centered.T)
    lam = np.zeros(p)
    lam[: res.sigma.size] = res.sigma**2 / (s - 1)
    return mu, lam, res.u


def approx_energy_ratio(mu, lam, r: int) -> float:
    """``(|mu|^2 + sum(lam[:r])) / (|mu|^2 + sum(lam))``; 0 when both vanish."""
    lam = np.asarray(lam, dtype=np.float64)
    if not 0 <= r <= lam.size:
        raise InvalidInput(f"r={r} outside [0, {lam.size}]")
    mu2 = float(np.dot(mu, mu))
    total = mu2 + lam.sum()
    if total == 0.0:
        return 0.0
    if r == lam.size:
        return 1.0
    return float((mu2 + lam[:r].sum()) / total)


def pca_rank_budget(beta: float, p: int, sample_count: int, strict_paper: bool = False) -> int:
    """Rank at which :func:`measure_corr_pca` evaluates the energy ratio.

    The default caps the budget by the sample count, because with a handful
    of samples in high dimension ``ceil(beta * p)`` exceeds the number of
    nonzero eigenvalues and the ratio is always 1. ``strict_paper=True``
    restores the uncapped ``ceil(beta * p)``.
    """
    base = p if strict_paper else min(p, sample_count)
    return min(ceil_fraction(beta, base), p)


def measure_corr_pca(samples, beta: float, strict_paper: bool = False) -> float:
    return measure_corr_pca_detail(samples, beta, strict_paper)[0]


def measure_corr_pca_detail(samples, beta: float, strict_paper: bool = False):
    """Like :func:`measure_corr_pca` but also returns ``(r, sample_count)``."""
    if not 0.0 <= beta <= 1.0:
        raise InvalidInput(f"beta {beta} outside [0, 1]")
    x = _as_samples(samples)
    mu, lam, _ = pca_fit(x)
    r = pca_rank_budget(beta, x.shape[1], x.shape[0], strict_paper)
    return approx_energy_ratio(mu, lam, r), r, x.shape[0]


def narrow_pca(samples, alpha: float) -> PcaBasis:
    """Smallest-rank PCA basis whose approximate energy ratio reaches ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInput(f"alpha {alpha} outside [0, 1]")
    mu, lam, q = pca_fit(samples)
    if float(np.dot(mu, mu)) + lam.sum() == 0.0:
        r = 0
    else:
        ratios = [approx_energy_ratio(mu, lam, j) for j in range(q.shape[1] + 1)]
        r = _smallest_rank(ratios, alpha)
    return PcaBasis(q_r=q[:, :r].copy(), mu=mu)
