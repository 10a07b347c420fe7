"""Gaussian-family divergences and the bound conversions used as
run diagnostics.

Sample batches are summarized by moment fitting (all quantitative
targets in the benchmark are Gaussian, where the fit is exact in
distribution); mixture runs fall back to a sliced Wasserstein estimate
against reference samples, flagged experimental.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np


@dataclass(frozen=True)
class GaussianFit:
    mean: np.ndarray
    cov: np.ndarray
    count: int


def _as_moments(g) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(g, GaussianFit):
        return g.mean, g.cov
    if isinstance(g, tuple) and len(g) == 2:
        mean = np.asarray(g[0], dtype=np.float64)
        cov = np.asarray(g[1], dtype=np.float64)
        if cov.ndim == 1:
            cov = np.diag(cov)
        return mean, cov
    raise TypeError("expected GaussianFit or a (mean, cov) pair")


def fit_gaussian(samples: np.ndarray) -> GaussianFit:
    """Sample mean and ridge-regularized unbiased covariance."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ValueError("samples must be a (batch, d) array")
    b, d = samples.shape
    if b < d + 2:
        raise ValueError(f"need at least d + 2 = {d + 2} samples, got {b}")
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered / (b - 1)
    tr = float(np.trace(cov))
    ridge = 1e-9 * (tr / d if tr > 0.0 else 1.0)
    cov = cov + ridge * np.eye(d)
    return GaussianFit(mean=mean, cov=cov, count=b)


def _chol_or_raise(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive definite") from exc


def gaussian_kl(g1, g2) -> float:
    """KL(N1 || N2) in closed form."""
    mean1, cov1 = _as_moments(g1)
    mean2, cov2 = _as_moments(g2)
    if np.array_equal(mean1, mean2) and np.array_equal(cov1, cov2):
        return 0.0
    d = mean1.shape[0]
    l1 = _chol_or_raise(cov1)
    l2 = _chol_or_raise(cov2)
    solved = np.linalg.solve(l2, l1)
    trace_term = float(np.sum(solved * solved))
    diff = np.linalg.solve(l2, mean2 - mean1)
    quad = float(diff @ diff)
    logdet = 2.0 * float(np.sum(np.log(np.diag(l2))) -
                         np.sum(np.log(np.diag(l1))))
    return 0.5 * (trace_term + quad - d + logdet)


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    # symmetric eigendecomposition with a small eigenvalue floor
    ev, vec = np.linalg.eigh(mat)
    ev = np.maximum(ev, 1e-12)
    return (vec * np.sqrt(ev)) @ vec.T


def gaussian_w2(g1, g2) -> float:
    """Quadratic Wasserstein distance between two Gaussians."""
    mean1, cov1 = _as_moments(g1)
    mean2, cov2 = _as_moments(g2)
    if np.array_equal(mean1, mean2) and np.array_equal(cov1, cov2):
        return 0.0
    _chol_or_raise(cov1)
    _chol_or_raise(cov2)
    diff = mean1 - mean2
    root2 = _sqrtm_psd(cov2)
    cross = _sqrtm_psd(root2 @ cov1 @ root2)
    total = float(diff @ diff) + float(np.trace(cov1) + np.trace(cov2)
                                       - 2.0 * np.trace(cross))
    return math.sqrt(max(total, 0.0))


def pinsker_tv_bound(kl: float) -> float:
    """Total-variation upper bound sqrt(kl / 2)."""
    if kl < 0.0:
        raise ValueError(f"kl must be nonnegative, got {kl}")
    return math.sqrt(0.5 * kl)


def talagrand_w2_bound(kl: float, alpha: float) -> float:
    """W2 upper bound sqrt(2 kl / alpha) under alpha-strong log-concavity."""
    if kl < 0.0:
        raise ValueError(f"kl must be nonnegative, got {kl}")
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return math.sqrt(2.0 * kl / alpha)


def sliced_w2(samples_a: np.ndarray, samples_b: np.ndarray,
              n_projections: int = 64, seed: int = 0) -> float:
    """Sliced W2 estimate between two sample clouds (experimental; used
    for mixture targets where the Gaussian fit is only a surrogate)."""
    samples_a = np.asarray(samples_a, dtype=np.float64)
    samples_b = np.asarray(samples_b, dtype=np.float64)
    d = samples_a.shape[1]
    m = min(samples_a.shape[0], samples_b.shape[0])
    gen = np.random.Generator(np.random.Philox(
        np.random.SeedSequence([seed, 0x51CE])))
    dirs = gen.standard_normal((n_projections, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    q = np.linspace(0.0, 1.0, m, endpoint=False) + 0.5 / m
    acc = 0.0
    for u in dirs:
        pa = np.quantile(samples_a @ u, q)
        pb = np.quantile(samples_b @ u, q)
        acc += float(np.mean((pa - pb) ** 2))
    return math.sqrt(acc / n_projections)
