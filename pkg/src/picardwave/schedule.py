"""Discretization schemes, wavefront activation order, parameter selection.

Two grid families are supported: a uniform grid (N slices of length h,
M equal sub-steps each) for log-concave sampling, and an early-stopped
variant for diffusion inference whose last slice shrinks its steps
geometrically toward the data end, subject to the cap

    eps[N-1][m] <= eps  and  eps[N-1][m] <= eps * (h - tau[N-1][m+1]),

stopping at h - eta.  Steps in the last slice are chosen maximal under
the cap (fewest score queries for the given constraint).

The wavefront schedule activates cell (slice n, Picard depth j) at wave
k = n + j, so both dependencies — the right boundary of (n-1, j) and the
grid of (n, j-1) — were finalized at wave k - 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np


@dataclass(frozen=True)
class DiscretizationScheme:
    """Per-slice grids tau[n] (nodes, tau[n][0] = 0, tau[n][-1] = h_n)
    and step sizes eps[n] = diff(tau[n])."""

    kind: str                      # "uniform" | "diffusion"
    slice_lengths: np.ndarray      # (N,) h_n
    tau: tuple                     # per slice: (M_n + 1,) node offsets
    eps: tuple                     # per slice: (M_n,) step sizes
    eta: float = 0.0               # early-stop gap (diffusion only)

    @property
    def num_slices(self) -> int:
        return len(self.tau)

    @property
    def horizon(self) -> float:
        # nominal horizon: early stopping shortens the last slice by eta
        return float(np.sum(self.slice_lengths)) + self.eta

    @property
    def slice_starts(self) -> np.ndarray:
        starts = np.zeros(self.num_slices)
        # all slices are nominally h long except the shortened last one;
        # starts depend only on the nominal length
        nominal = self.slice_lengths.copy()
        if self.eta > 0.0:
            nominal[-1] += self.eta
        starts[1:] = np.cumsum(nominal)[:-1]
        return starts

    def steps_per_slice(self) -> np.ndarray:
        return np.array([e.shape[0] for e in self.eps], dtype=np.int64)

    def total_steps(self) -> int:
        return int(self.steps_per_slice().sum())


def uniform_scheme(N: int, h: float, M: int) -> DiscretizationScheme:
    """N slices of length h, each split into M equal steps."""
    if N < 1 or M < 1:
        raise ValueError(f"need N >= 1 and M >= 1, got N={N}, M={M}")
    if h <= 0.0:
        raise ValueError(f"need h > 0, got h={h}")
    nodes = h * (np.arange(M + 1) / M)
    nodes[-1] = h
    nodes.flags.writeable = False
    eps = np.diff(nodes)
    eps.flags.writeable = False
    return DiscretizationScheme(
        kind="uniform",
        slice_lengths=np.full(N, h),
        tau=tuple([nodes] * N),
        eps=tuple([eps] * N),
    )


def _decaying_grid(h: float, eps: float, eta: float) -> np.ndarray:
    """Nodes for the last diffusion slice: maximal steps under the cap
    eps_m = min(eps, eps * (h - tau_{m+1})), ending exactly at h - eta."""
    nodes = [0.0]
    tau = 0.0
    while True:
        step = min(eps, eps * (h - tau) / (1.0 + eps))
        nxt = tau + step
        if h - nxt <= eta:
            nodes.append(h - eta)
            break
        nodes.append(nxt)
        tau = nxt
    return np.asarray(nodes)


def diffusion_scheme(T: float, N: int, eps: float, eta: float) -> DiscretizationScheme:
    """Uniform slices of step eps, with a geometrically decaying,
    early-stopped last slice."""
    if T <= 0.0 or N < 1 or eps <= 0.0:
        raise ValueError(f"need T > 0, N >= 1, eps > 0; got T={T}, N={N}, eps={eps}")
    h = T / N
    if not (0.0 < eta < h):
        raise ValueError(f"need 0 < eta < h = T/N = {h}, got eta={eta}")
    # uniform slices; if eps does not divide h evenly the last sub-step
    # is shortened (M = ceil(h / eps))
    M = max(1, math.ceil(round(h / eps, 12)))
    while M > 1 and eps * (M - 1) >= h:
        M -= 1
    uni = np.minimum(eps * np.arange(M + 1), h)
    uni[-1] = h
    uni.flags.writeable = False
    uni_eps = np.diff(uni)
    uni_eps.flags.writeable = False

    last = _decaying_grid(h, eps, eta)
    last.flags.writeable = False
    last_eps = np.diff(last)
    last_eps.flags.writeable = False

    lengths = np.full(N, h)
    lengths[-1] = h - eta
    tau = tuple([uni] * (N - 1) + [last])
    eps_t = tuple([uni_eps] * (N - 1) + [last_eps])
    return DiscretizationScheme(kind="diffusion", slice_lengths=lengths,
                                tau=tau, eps=eps_t, eta=eta)


def validate_scheme(scheme: DiscretizationScheme, step_bound: float | None = None,
                    rtol: float = 1e-12) -> None:
    """Raise ValueError if the scheme violates its own constraints."""
    for n in range(scheme.num_slices):
        tau, eps = scheme.tau[n], scheme.eps[n]
        if tau[0] != 0.0:
            raise ValueError(f"slice {n}: tau[0] = {tau[0]} != 0")
        if abs(tau[-1] - scheme.slice_lengths[n]) > rtol * max(1.0, tau[-1]):
            raise ValueError(f"slice {n}: endpoint {tau[-1]} != h_n = "
                             f"{scheme.slice_lengths[n]}")
        if np.any(eps <= 0.0):
            raise ValueError(f"slice {n}: non-positive step")
        if not np.allclose(np.diff(tau), eps, rtol=rtol, atol=0.0):
            raise ValueError(f"slice {n}: eps inconsistent with tau")
    if scheme.kind == "diffusion":
        if step_bound is None:
            step_bound = float(scheme.eps[0].max()) if scheme.num_slices > 1 \
                else float(scheme.eps[-1].max())
        n = scheme.num_slices - 1
        tau, eps = scheme.tau[n], scheme.eps[n]
        h = scheme.slice_lengths[n] + scheme.eta
        tol = 1.0 + rtol
        if np.any(eps > step_bound * tol):
            raise ValueError("last slice: step exceeds the uniform bound")
        cap = step_bound * (h - tau[1:])
        if np.any(eps > cap * tol):
            raise ValueError("last slice: step exceeds the decay cap")
        if abs((h - tau[-1]) - scheme.eta) > rtol * max(1.0, h):
            raise ValueError(f"last slice: ends at h - {h - tau[-1]}, "
                             f"expected h - eta = h - {scheme.eta}")


@dataclass(frozen=True)
class WavefrontSchedule:
    """Diagonal activation order: cell (n, j) runs at wave n + j."""

    num_slices: int     # N
    depth: int          # J

    @property
    def num_waves(self) -> int:
        if self.depth == 0:
            return 0
        return self.num_slices + self.depth - 1

    def wave(self, k: int) -> list[tuple[int, int]]:
        """Active cells {(n, j) : n + j = k}, n descending.

        Descending order lets a sequential executor update slice n
        before slice n - 1 is touched in the same wave, so the boundary
        read by (n, j) is still the wave k-1 value.
        """
        if not (1 <= k <= self.num_waves):
            raise ValueError(f"wave {k} out of range 1..{self.num_waves}")
        n_lo = max(0, k - self.depth)
        n_hi = min(self.num_slices, k)
        return [(n, k - n) for n in range(n_hi - 1, n_lo - 1, -1)]

    def cells(self):
        for k in range(1, self.num_waves + 1):
            for cell in self.wave(k):
                yield k, cell


def wavefront(N: int, J: int) -> WavefrontSchedule:
    if N < 1 or J < 1:
        raise ValueError(f"need N >= 1 and J >= 1, got N={N}, J={J}")
    return WavefrontSchedule(num_slices=N, depth=J)


def grid_index(scheme: DiscretizationScheme, n: int, tau: float) -> tuple[int, float]:
    """Largest m with tau[n][m] <= tau, and that node's offset."""
    nodes = scheme.tau[n]
    if not (0.0 <= tau <= nodes[-1]):
        raise ValueError(f"tau={tau} outside [0, {nodes[-1]}] on slice {n}")
    idx = min(int(np.searchsorted(nodes, tau, side="right")) - 1,
              nodes.shape[0] - 1)
    return idx, float(nodes[idx])


# ---------------------------------------------------------------------------
# parameter selection
# ---------------------------------------------------------------------------

@dataclass
class ParamSet:
    """Concrete run parameters plus provenance notes per field."""

    mode: str                      # "logconcave" | "diffusion"
    h: float
    M: int
    N: int
    P: int
    J: int
    accuracy: float                # target accuracy (epsilon)
    delta_max: float = 0.0
    eta: float = 0.0               # diffusion early stop
    T: float = 0.0
    step_bound: float = 0.0        # diffusion grid step (h / M)
    provenance: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


def select_logconcave_params(alpha: float, beta: float, d: int, accuracy: float,
                             kl0: float) -> ParamSet:
    """Smallest parameters satisfying the convergence conditions of the
    wavefront sampler for an alpha-strongly log-concave, beta-log-smooth
    target with initialization gap kl0 (natural logs throughout)."""
    if not (beta >= alpha > 0.0):
        raise ValueError(f"need beta >= alpha > 0, got alpha={alpha}, beta={beta}")
    if accuracy <= 0.0 or kl0 <= 0.0 or d < 1:
        raise ValueError("need accuracy > 0, kl0 > 0, d >= 1")
    kappa = beta / alpha
    eps2 = accuracy * accuracy
    warnings = []

    h = 0.1 / beta
    M = math.ceil(kappa * d / eps2)
    ratio = kl0 / eps2
    if ratio <= 1.0:
        N = 1
        warnings.append("kl0 <= accuracy^2: slice count clamped to 1")
    else:
        N = max(1, math.ceil(10.0 * kappa * math.log(ratio)))
    P = math.ceil(2.0 * math.log(kappa) / 3.0 + 4.0)
    delta_max = 0.2 * math.sqrt(alpha) * accuracy
    tail = (kappa * delta_max**2 * h + kappa * kl0 + kappa**2 * d) / eps2
    extra = math.log(max(N, 1) ** 3 * tail)
    J = N + max(0, math.ceil(extra))
    prov = {
        "h": "0.1 / beta",
        "M": "ceil(kappa d / accuracy^2)",
        "N": "ceil(10 kappa ln(kl0 / accuracy^2)), min 1",
        "P": "ceil(2 ln(kappa)/3 + 4)",
        "delta_max": "0.2 sqrt(alpha) accuracy",
        "J": "N + ceil(ln(N^3 (kappa delta_max^2 h + kappa kl0 + kappa^2 d)"
             " / accuracy^2))",
    }
    return ParamSet(mode="logconcave", h=h, M=M, N=N, P=P, J=J,
                    accuracy=accuracy, delta_max=delta_max,
                    T=N * h, provenance=prov, warnings=warnings)


def check_logconcave_params(p: ParamSet, alpha: float, beta: float, d: int,
                            kl0: float) -> list[str]:
    """Substitute a ParamSet back into the selection inequalities; returns
    the list of violated conditions (empty when self-consistent)."""
    kappa = beta / alpha
    eps2 = p.accuracy**2
    bad = []
    if abs(beta * p.h - 0.1) > 1e-12:
        bad.append("beta h != 0.1")
    if p.M < kappa * d / eps2 - 1e-9:
        bad.append("M < kappa d / accuracy^2")
    if kl0 / eps2 > 1.0 and p.N < 10.0 * kappa * math.log(kl0 / eps2) - 1e-9:
        bad.append("N too small")
    if p.P < 2.0 * math.log(kappa) / 3.0 + 4.0 - 1e-9:
        bad.append("P too small")
    if p.delta_max > 0.2 * math.sqrt(alpha) * p.accuracy + 1e-12:
        bad.append("delta_max exceeds the cap")
    tail = (kappa * p.delta_max**2 * p.h + kappa * kl0 + kappa**2 * d) / eps2
    if p.J - p.N < math.log(p.N**3 * tail) - 1e-9:
        bad.append("J - N too small")
    return bad


@dataclass
class DiffusionConstants:
    """Leading constants for the order-level diffusion parameter rules.

    The analysis fixes only orders of growth; these constants make the
    choices concrete and are echoed into every report.
    """

    c_N: float = 1.0
    c_M: float = 1.0
    c_J: float = 1.0
    h: float = 1.0
    eta: float = 1e-2


def select_diffusion_params(d: int, accuracy: float,
                            constants: DiffusionConstants | None = None) -> ParamSet:
    """Concrete diffusion-run parameters from the order-level rules
    N ~ log(d/accuracy^2), M ~ (d/accuracy^2) log(d/accuracy^2),
    J ~ N + log(N d/accuracy^2), with declared leading constants."""
    if d < 1 or accuracy <= 0.0:
        raise ValueError("need d >= 1 and accuracy > 0")
    c = constants or DiffusionConstants()
    ratio = d / (accuracy * accuracy)
    warnings = []
    logr = math.log(ratio) if ratio > 1.0 else 0.0
    if ratio <= 1.0:
        warnings.append("d <= accuracy^2: slice count clamped to 1")
    N = max(1, math.ceil(c.c_N * logr))
    M = max(1, math.ceil(c.c_M * ratio * logr))
    J = N + max(0, math.ceil(c.c_J * math.log(max(N * ratio, 1.0))))
    T = N * c.h
    if not (0.0 < c.eta < c.h):
        raise ValueError(f"constants.eta must lie in (0, h), got {c.eta}")
    prov = {
        "N": f"ceil({c.c_N} ln(d/accuracy^2)), min 1",
        "M": f"ceil({c.c_M} (d/accuracy^2) ln(d/accuracy^2)), min 1",
        "J": f"N + ceil({c.c_J} ln(N d/accuracy^2))",
        "h": "constants.h",
        "eta": "constants.eta",
    }
    return ParamSet(mode="diffusion", h=c.h, M=M, N=N, P=1, J=J,
                    accuracy=accuracy, delta_max=accuracy, eta=c.eta, T=T,
                    step_bound=c.h / M, provenance=prov, warnings=warnings)
