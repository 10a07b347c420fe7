"""Potentials, exact score oracles, bounded perturbations, diffusion data models.

All targets are quadratic potentials f(x) = (x - mean)' P (x - mean) / 2
with diagonal or dense SPD precision P, so gradients, moments, and the
strong-convexity/smoothness constants are exact.  Diffusion data models
(Gaussian or shared-covariance Gaussian mixture) have closed-form
forward marginals under the variance-preserving noising process
dx = -x/2 dt + dB, hence exact backward scores.

Score oracles can apply a deterministic perturbation delta * u(x) with
a smooth unit field u, so the score-error bound holds with equality at
every point: random noise would average out along a trajectory and
under-test robustness, while a fixed field keeps the full budget in
play.  The field combines a radial component (systematic distortion of
second moments) with seeded direction modes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# log-concave targets
# ---------------------------------------------------------------------------

@dataclass
class LogConcaveTarget:
    """Quadratic potential with exact convexity constants.

    kind is "gaussian" (dense precision), "diagonal_quadratic", or
    "custom" (any SPD precision supplied by the caller).
    """

    kind: str
    mean: np.ndarray
    precision: np.ndarray          # (d,) diagonal or (d, d) dense SPD
    alpha: float = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.precision = np.asarray(self.precision, dtype=np.float64)
        d = self.mean.shape[0]
        if self.precision.ndim == 1:
            if self.precision.shape[0] != d:
                raise ValueError("precision length does not match mean")
            lo, hi = float(self.precision.min()), float(self.precision.max())
        elif self.precision.ndim == 2:
            if self.precision.shape != (d, d):
                raise ValueError("precision shape does not match mean")
            if not np.allclose(self.precision, self.precision.T, rtol=1e-12):
                raise ValueError("precision must be symmetric")
            ev = np.linalg.eigvalsh(self.precision)
            lo, hi = float(ev[0]), float(ev[-1])
        else:
            raise ValueError("precision must be a vector or a matrix")
        if lo <= 0.0:
            raise ValueError(f"precision must be positive definite "
                             f"(min eigenvalue {lo})")
        self.alpha = lo
        self.beta = hi

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def kappa(self) -> float:
        return self.beta / self.alpha

    @property
    def mode(self) -> np.ndarray:
        return self.mean

    @property
    def is_diagonal(self) -> bool:
        return self.precision.ndim == 1

    def covariance(self) -> np.ndarray:
        if self.is_diagonal:
            return np.diag(1.0 / self.precision)
        return np.linalg.inv(self.precision)

    def sample(self, gen: np.random.Generator, size: int) -> np.ndarray:
        z = gen.standard_normal((size, self.dim))
        if self.is_diagonal:
            return self.mean + z / np.sqrt(self.precision)
        cov = self.covariance()
        chol = np.linalg.cholesky(cov)
        return self.mean + z @ chol.T


def gaussian_target(mean, precision) -> LogConcaveTarget:
    prec = np.asarray(precision, dtype=np.float64)
    kind = "diagonal_quadratic" if prec.ndim == 1 else "gaussian"
    return LogConcaveTarget(kind=kind, mean=mean, precision=prec)


def grad_potential(target: LogConcaveTarget, x: np.ndarray) -> np.ndarray:
    """Gradient of the potential at x (supports batched x, last axis d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != target.dim:
        raise ValueError(f"dimension mismatch: x has {x.shape[-1]}, "
                         f"target has {target.dim}")
    diff = x - target.mean
    if target.is_diagonal:
        return target.precision * diff
    return diff @ target.precision.T


def potential(target: LogConcaveTarget, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    diff = x - target.mean
    if target.is_diagonal:
        return 0.5 * np.sum(target.precision * diff * diff, axis=-1)
    return 0.5 * np.sum(diff * (diff @ target.precision.T), axis=-1)


def mode_concentrated_init(target: LogConcaveTarget, rng) -> tuple[np.ndarray, float]:
    """Draw x0 ~ N(mode, I/beta) and return it with the matching
    initialization gap bound kl0 = (d/2) ln(kappa)."""
    from .rng import standard_normal_vec
    z = standard_normal_vec(rng, target.dim)
    x0 = target.mode + z / math.sqrt(target.beta)
    kl0 = 0.5 * target.dim * math.log(target.kappa)
    return x0, kl0


# ---------------------------------------------------------------------------
# perturbation field
# ---------------------------------------------------------------------------

@dataclass
class PerturbationField:
    """Smooth deterministic unit vector field keyed by a seed.

    u(x) = normalize( r_hat(x - center) + 0.5 u0 + 0.5 tanh(<w, x - center>) u1 )

    The radial term biases second moments systematically (no averaging
    out over a trajectory); u0, u1, w are seeded pseudo-random modes.
    """

    direction_seed: int
    d: int
    center: np.ndarray
    u0: np.ndarray = field(init=False)
    u1: np.ndarray = field(init=False)
    w: np.ndarray = field(init=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        ss = np.random.SeedSequence([int(self.direction_seed) & _MASK64,
                                     0xF1E1D, self.d])
        g = np.random.Generator(np.random.Philox(ss))
        self.u0 = g.standard_normal(self.d)
        self.u0 /= np.linalg.norm(self.u0)
        self.u1 = g.standard_normal(self.d)
        self.u1 /= np.linalg.norm(self.u1)
        self.w = g.standard_normal(self.d) / math.sqrt(self.d)

    def unit(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        rel = x - self.center
        nrm = np.linalg.norm(rel, axis=-1, keepdims=True)
        radial = np.where(nrm > 1e-30, rel / np.maximum(nrm, 1e-300), 0.0)
        t = np.tanh(rel @ self.w)
        g = radial + 0.5 * self.u0 + 0.5 * t[..., None] * self.u1
        gn = np.linalg.norm(g, axis=-1, keepdims=True)
        # the field is bounded away from zero by construction; guard anyway
        g = np.where(gn > 1e-12, g, g + self.u0)
        gn = np.linalg.norm(g, axis=-1, keepdims=True)
        return g / gn


# ---------------------------------------------------------------------------
# diffusion data models
# ---------------------------------------------------------------------------

@dataclass
class DiffusionDataModel:
    """Data distribution with closed-form noised marginals.

    kind "gaussian": N(mean0, cov0); kind "mixture": shared-covariance
    Gaussian mixture.  The forward marginal at noising time s is built
    from component means exp(-s/2) mu_i and covariance
    exp(-s) cov0 + (1 - exp(-s)) I.
    """

    kind: str                       # "gaussian" | "mixture"
    means: np.ndarray               # (d,) for gaussian, (K, d) for mixture
    cov0: np.ndarray                # (d,) diagonal or (d, d) dense
    weights: np.ndarray | None = None
    horizon: float = 0.0            # T
    score_error: float = 0.0        # pointwise perturbation scale (delta2)
    normalized: bool = False        # data covariance scaled to identity

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.cov0 = np.asarray(self.cov0, dtype=np.float64)
        if self.kind == "gaussian":
            if self.means.shape[0] != 1:
                raise ValueError("gaussian model takes a single mean")
            self.weights = np.array([1.0])
        else:
            if self.weights is None:
                raise ValueError("mixture model needs weights")
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape[0] != self.means.shape[0]:
                raise ValueError("one weight per component required")
            if np.any(self.weights <= 0.0):
                raise ValueError("mixture weights must be positive")
            if abs(self.weights.sum() - 1.0) > 1e-12:
                raise ValueError("mixture weights must sum to 1")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.score_error < 0.0:
            raise ValueError("score_error must be nonnegative")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def cov0_is_diagonal(self) -> bool:
        return self.cov0.ndim == 1

    def marginal(self, s: float):
        """Component means and shared covariance of the marginal at
        noising time s >= 0 (diagonal covariance stays a vector)."""
        decay = math.exp(-s)
        means = math.sqrt(decay) * self.means
        if self.cov0_is_diagonal:
            cov = decay * self.cov0 + (1.0 - decay)
        else:
            cov = decay * self.cov0 + (1.0 - decay) * np.eye(self.dim)
        return means, cov

    def lipschitz_estimate(self, s_min: float) -> float:
        """Analytic bound on the marginal-score Lipschitz constant over
        noising times in [s_min, horizon]; metadata for validity warnings."""
        if self.cov0_is_diagonal:
            lam_min0 = float(self.cov0.min())
        else:
            lam_min0 = float(np.linalg.eigvalsh(self.cov0)[0])
        vals = []
        for s in (s_min, self.horizon):
            lam = math.exp(-s) * lam_min0 + (1.0 - math.exp(-s))
            if lam <= 0.0:
                return math.inf
            vals.append(1.0 / lam)
        bound = max(vals)
        if self.kind == "mixture":
            spread = 0.0
            for i in range(self.means.shape[0]):
                for k in range(i):
                    spread = max(spread,
                                 float(np.linalg.norm(self.means[i] - self.means[k])))
            bound = bound + bound * bound * spread * spread
        return bound

    def sample_data(self, gen: np.random.Generator, size: int) -> np.ndarray:
        comp = gen.choice(self.means.shape[0], size=size, p=self.weights)
        z = gen.standard_normal((size, self.dim))
        if self.cov0_is_diagonal:
            x = np.sqrt(self.cov0) * z
        else:
            x = z @ np.linalg.cholesky(self.cov0).T
        return x + self.means[comp]

    def sample_marginal(self, gen: np.random.Generator, s: float,
                        size: int) -> np.ndarray:
        x0 = self.sample_data(gen, size)
        decay = math.exp(-s)
        z = gen.standard_normal((size, self.dim))
        return math.sqrt(decay) * x0 + math.sqrt(1.0 - decay) * z


def gaussian_data_model(mean, cov, horizon: float,
                        score_error: float = 0.0) -> DiffusionDataModel:
    return DiffusionDataModel(kind="gaussian", means=np.asarray(mean),
                              cov0=np.asarray(cov), horizon=horizon,
                              score_error=score_error)


def mixture_data_model(weights, means, shared_cov, horizon: float,
                       score_error: float = 0.0) -> DiffusionDataModel:
    return DiffusionDataModel(kind="mixture", means=np.asarray(means),
                              cov0=np.asarray(shared_cov), weights=weights,
                              horizon=horizon, score_error=score_error)


def _marginal_score(model: DiffusionDataModel, s: float, x: np.ndarray) -> np.ndarray:
    means, cov = model.marginal(s)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise ValueError(f"dimension mismatch: x has {x.shape[-1]}, "
                         f"model has {model.dim}")
    if model.cov0_is_diagonal:
        if np.any(cov <= 0.0):
            raise ValueError(f"singular marginal covariance at s={s}")
        inv = 1.0 / cov
        if model.kind == "gaussian":
            return -inv * (x - means[0])
        # responsibilities with the shared covariance (log-det cancels)
        diff = x[..., None, :] - means            # (..., K, d)
        q = -0.5 * np.sum(diff * diff * inv, axis=-1)
        q += np.log(model.weights)
        q -= q.max(axis=-1, keepdims=True)
        r = np.exp(q)
        r /= r.sum(axis=-1, keepdims=True)
        mbar = np.einsum("...k,kd->...d", r, means)
        return -inv * (x - mbar)
    ev = np.linalg.eigvalsh(cov)
    if ev[0] <= 0.0:
        raise ValueError(f"singular marginal covariance at s={s}")
    inv = np.linalg.inv(cov)
    if model.kind == "gaussian":
        return -(x - means[0]) @ inv.T
    diff = x[..., None, :] - means
    q = -0.5 * np.einsum("...kd,de,...ke->...k", diff, inv, diff)
    q += np.log(model.weights)
    q -= q.max(axis=-1, keepdims=True)
    r = np.exp(q)
    r /= r.sum(axis=-1, keepdims=True)
    mbar = np.einsum("...k,kd->...d", r, means)
    return -(x - mbar) @ inv.T


def marginal_log_density(model: DiffusionDataModel, s: float,
                         x: np.ndarray) -> np.ndarray:
    """Log-density of the noised marginal at time s (finite-difference
    oracle for the score)."""
    means, cov = model.marginal(s)
    x = np.asarray(x, dtype=np.float64)
    d = model.dim
    if model.cov0_is_diagonal:
        logdet = float(np.sum(np.log(cov)))
        diff = x[..., None, :] - means
        q = -0.5 * np.sum(diff * diff / cov, axis=-1)
    else:
        sign, logdet = np.linalg.slogdet(cov)
        inv = np.linalg.inv(cov)
        diff = x[..., None, :] - means
        q = -0.5 * np.einsum("...kd,de,...ke->...k", diff, inv, diff)
    q += np.log(model.weights) - 0.5 * (d * math.log(2 * math.pi) + logdet)
    qmax = q.max(axis=-1)
    return qmax + np.log(np.sum(np.exp(q - qmax[..., None]), axis=-1))


def backward_score(model: DiffusionDataModel, t: float, x: np.ndarray) -> np.ndarray:
    """Exact score of the time-reversed process at backward time t,
    i.e. the marginal score at noising time s = horizon - t."""
    if not (0.0 <= t <= model.horizon + 1e-12):
        raise ValueError(f"t={t} outside [0, {model.horizon}]")
    return _marginal_score(model, model.horizon - t, x)


# ---------------------------------------------------------------------------
# score oracle
# ---------------------------------------------------------------------------

class ScoreOracle:
    """Score evaluations with optional bounded perturbation and query
    accounting.

    ``eval_count`` tracks the number of scheduled point evaluations in
    the adaptive-complexity model: direct calls add their batch size,
    and the engines add the exact per-round counts implied by the
    schedule (identical whether a value was freshly computed or replayed
    from a converged cell).
    """

    def __init__(self, base, delta: float = 0.0, direction_seed: int = 0):
        self.base = base
        self.delta = float(delta)
        if self.delta < 0.0:
            raise ValueError("delta must be nonnegative")
        self.eval_count = 0
        self.is_diffusion = isinstance(base, DiffusionDataModel)
        if self.delta > 0.0:
            center = base.means[0] if self.is_diffusion else base.mean
            self.field = PerturbationField(direction_seed=direction_seed,
                                           d=base.dim, center=center)
        else:
            self.field = None

    @property
    def dim(self) -> int:
        return self.base.dim

    def add_scheduled_evals(self, count: int) -> None:
        self.eval_count += int(count)

    def score(self, x: np.ndarray, t: float | None = None) -> np.ndarray:
        """Perturbed score; t required exactly for diffusion models."""
        x = np.asarray(x, dtype=np.float64)
        if self.is_diffusion:
            if t is None:
                raise ValueError("diffusion oracle needs the backward time t")
            out = backward_score(self.base, t, x)
        else:
            if t is not None:
                raise ValueError("log-concave oracle takes no time argument")
            out = grad_potential(self.base, x)
        if self.field is not None:
            out = out + self.delta * self.field.unit(x)
        self.eval_count += 1 if x.ndim == 1 else int(np.prod(x.shape[:-1]))
        return out


def perturbed_oracle(base, delta: float = 0.0,
                     direction_seed: int = 0) -> ScoreOracle:
    return ScoreOracle(base, delta=delta, direction_seed=direction_seed)


class ZeroScoreOracle:
    """Identically-zero score; drift-free runs isolate the noise path."""

    kernel_kind = "zero"

    def __init__(self, d: int, is_diffusion: bool = False):
        self.dim = int(d)
        self.is_diffusion = is_diffusion
        self.delta = 0.0
        self.field = None
        self.eval_count = 0

    def add_scheduled_evals(self, count: int) -> None:
        self.eval_count += int(count)

    def score(self, x, t=None):
        x = np.asarray(x, dtype=np.float64)
        self.eval_count += 1 if x.ndim == 1 else int(np.prod(x.shape[:-1]))
        return np.zeros_like(x)
