"""Wavefront Euler-Picard sampler for strongly log-concave targets.

The horizon is split into N slices of M uniform steps.  An
initialization sweep fills every slice with a single coarse Euler step
from its predecessor's endpoint; afterwards cell (slice n, depth j)
performs P Jacobi-style Picard sweeps against the depth j-1 grid, with
its left boundary pinned to slice n - 1's depth-j endpoint (slice -1
meaning the initial point).  In the parallel execution model all cells
with n + j = k run concurrently at wave k; a single chain traverses the
same dependency order slice by slice (cell (n, j) after (n - 1, j) and
(n, j - 1)), which is value-identical, keeps exactly one slice resident,
and leaves parallelism to the chain level.

The sequential fine-grid chain (step h/M) is the exact fixed point of
the cell map under the shared noise table.  Because every cell is a
pure function of its two inputs, once a slice's incoming boundary
trajectory is constant (or 2-periodic) in depth and its grid repeats,
all deeper outputs repeat bit-for-bit; the runner verifies that on the
recorded trajectories and fast-forwards the remaining depths, leaving
outputs and the scheduled round/query accounting unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .schedule import DiscretizationScheme, wavefront

_DUMMY1 = np.zeros(1)
_DUMMY2 = np.zeros((1, 1))


def _lc_pack(oracle):
    """Kernel arguments for a log-concave score oracle."""
    kind = getattr(oracle, "kernel_kind", None)
    if kind == "zero":
        d = oracle.dim
        return (0, _DUMMY1, _DUMMY2, np.zeros(d), 0, _DUMMY1, _DUMMY1,
                _DUMMY1, _DUMMY1, 0.0)
    base = oracle.base
    if base.is_diagonal:
        tag, lam, prec = 1, base.precision, _DUMMY2
    else:
        tag, lam, prec = 2, _DUMMY1, base.precision
    if oracle.field is not None:
        f = oracle.field
        return (tag, lam, prec, base.mean, 1, f.center, f.u0, f.u1, f.w,
                oracle.delta)
    return (tag, lam, prec, base.mean, 0, _DUMMY1, _DUMMY1, _DUMMY1,
            _DUMMY1, 0.0)


def _check_uniform(scheme: DiscretizationScheme):
    if scheme.kind != "uniform":
        raise ValueError("the log-concave engine requires a uniform scheme")
    return float(scheme.slice_lengths[0]), scheme.eps[0].shape[0]


def init_phase(oracle, x0, scheme, noise) -> list[np.ndarray]:
    """Sequential coarse fill of all slices; one score query per slice."""
    h, M = _check_uniform(scheme)
    x0 = np.asarray(x0, dtype=np.float64)
    d = x0.shape[0]
    if d != noise.d:
        raise ValueError(f"dimension mismatch: x0 has {d}, noise has {noise.d}")
    pack = _lc_pack(oracle)
    grids = []
    xb = x0
    for n in range(scheme.num_slices):
        out = np.empty((M + 1, d))
        kernels.lc_init_slice(xb, noise.w(n), h, *pack, out)
        grids.append(out)
        xb = out[M]
    oracle.add_scheduled_evals(scheme.num_slices)
    return grids


def cell_update(n, j, boundary, prev_diag, oracle, noise, P) -> np.ndarray:
    """P Picard sweeps of one cell; returns the depth-j grid."""
    if P < 1:
        raise ValueError(f"need P >= 1, got {P}")
    h, M = _check_uniform(noise.scheme)
    boundary = np.asarray(boundary, dtype=np.float64)
    prev_diag = np.asarray(prev_diag, dtype=np.float64)
    out = np.empty_like(prev_diag)
    buf_a = np.empty_like(prev_diag)
    buf_b = np.empty_like(prev_diag)
    kernels.lc_cell_sweeps(boundary, prev_diag, noise.w(n), h / M, P,
                           *_lc_pack(oracle), out, buf_a, buf_b)
    oracle.add_scheduled_evals(P * M)
    return out


def sequential_fine_lmc(oracle, x0, scheme, noise) -> list[np.ndarray]:
    """Fine-grid Euler chain with step h/M under the shared noise table;
    the fixed point the wavefront converges to."""
    h, M = _check_uniform(scheme)
    x0 = np.asarray(x0, dtype=np.float64)
    pack = _lc_pack(oracle)
    grids = []
    y = x0
    for n in range(scheme.num_slices):
        out = np.empty((M + 1, x0.shape[0]))
        kernels.lc_sequential_slice(y, noise.steps(n), h / M, *pack, out)
        grids.append(out)
        y = out[M]
    oracle.add_scheduled_evals(scheme.num_slices * M)
    return grids


def sequential_fine_endpoint(oracle, x0, scheme, noise,
                             release: bool = False) -> np.ndarray:
    """Endpoint of the fine-grid chain, holding one slice at a time."""
    h, M = _check_uniform(scheme)
    x0 = np.asarray(x0, dtype=np.float64)
    pack = _lc_pack(oracle)
    out = np.empty((M + 1, x0.shape[0]))
    y = x0
    for n in range(scheme.num_slices):
        kernels.lc_sequential_slice(y, noise.steps(n), h / M, *pack, out)
        y = out[M].copy()
        if release:
            noise.release(n)
    oracle.add_scheduled_evals(scheme.num_slices * M)
    return y


def rounds_log(N: int, M: int, J: int, P: int) -> np.ndarray:
    """Score queries per adaptive round implied by the schedule:
    N init rounds of one query, then P rounds per wave with M queries
    per active cell."""
    log = [1] * N
    if J >= 1:
        wf = wavefront(N, J)
        for k in range(1, wf.num_waves + 1):
            q = M * len(wf.wave(k))
            log.extend([q] * P)
    return np.asarray(log, dtype=np.int64)


@dataclass
class ChainResult:
    endpoint: np.ndarray
    scheduled_evals: int
    computed_cells: int
    total_cells: int
    trunc_prev_update: np.ndarray | None = None    # max_m ||x^{j,P}-x^{j,P-1}||^2
    trunc_boundary: np.ndarray | None = None       # ||x^j_{n,M}-x^{j-1}_{n,M}||^2


def _tail_period(traj: np.ndarray, j: int, q: int) -> bool:
    """True when traj[j'] == traj[j' - q] bit-for-bit for every j' > j."""
    if q == 1:
        return bool(np.all(traj[j:] == traj[j]))
    return np.array_equal(traj[j + 1:], traj[j + 1 - q:traj.shape[0] - q])


def run_chain(oracle, x0, scheme, noise, P: int, J: int, *,
              memoize: bool = True, diagnostics: bool = False,
              lazy: bool = False) -> ChainResult:
    """Full run of one chain; returns the depth-J endpoint of the last
    slice plus scheduled-query accounting.

    Traversal is slice-major: slice n consumes the recorded boundary
    trajectory of slice n - 1 (its endpoint at every depth) and records
    its own, so each cell sees exactly the inputs the wave order would
    give it while only one slice is resident.  With diagnostics on,
    per-cell truncation diagnostics are collected and fast-forwarding
    is disabled so every cell is computed as written.
    """
    if P < 1 or J < 0:
        raise ValueError(f"need P >= 1 and J >= 0, got P={P}, J={J}")
    h, M = _check_uniform(scheme)
    N = scheme.num_slices
    x0 = np.asarray(x0, dtype=np.float64)
    d = x0.shape[0]
    if d != noise.d:
        raise ValueError(f"dimension mismatch: x0 has {d}, noise has {noise.d}")
    pack = _lc_pack(oracle)
    if diagnostics:
        memoize = False
    hM = h / M

    # N init queries, then P rounds of M queries for each of the N*J cells
    scheduled = N + P * M * N * J
    total_cells = N * J

    E = np.zeros((N, J)) if diagnostics else None
    D = np.zeros((N, J)) if diagnostics else None

    # boundary trajectory of the predecessor: row j = its depth-j endpoint,
    # row 0 = its initialization endpoint; slice -1 is the fixed start point
    traj_prev = np.tile(x0, (J + 1, 1))
    traj_cur = np.empty((J + 1, d))
    init_end = x0
    cur = np.empty((M + 1, d))
    out = np.empty((M + 1, d))
    prev = np.empty((M + 1, d))
    buf_a = np.empty((M + 1, d))
    buf_b = np.empty((M + 1, d))
    computed = 0

    for n in range(N):
        w = noise.w(n)
        kernels.lc_init_slice(init_end, w, h, *pack, cur)
        init_end = cur[M].copy()
        traj_cur[0] = init_end
        have_prev = False
        j = 1
        while j <= J:
            boundary = traj_prev[j]
            maxdiff = kernels.lc_cell_sweeps(boundary, cur, w, hM, P, *pack,
                                             out, buf_a, buf_b)
            computed += 1
            if diagnostics:
                E[n, j - 1] = maxdiff
                bd = out[M] - cur[M]
                D[n, j - 1] = float(bd @ bd)
            traj_cur[j] = out[M]
            if memoize and j < J:
                # all deeper cells repeat once the inputs repeat: grid
                # fixed under a constant boundary tail, or a 2-cycle
                # under an alternating one
                if np.array_equal(out, cur) and _tail_period(traj_prev, j, 1):
                    for jj in range(j + 1, J + 1):
                        traj_cur[jj] = traj_cur[j]
                    j = J
                elif (have_prev and np.array_equal(out, prev)
                        and _tail_period(traj_prev, j, 2)):
                    for jj in range(j + 1, J + 1):
                        traj_cur[jj] = traj_cur[jj - 2]
                    j = J
            prev, cur, out = cur, out, prev
            have_prev = True
            j += 1
        traj_prev, traj_cur = traj_cur, traj_prev
        if lazy:
            noise.release(n)

    endpoint = traj_prev[J].copy()
    oracle.add_scheduled_evals(scheduled)
    return ChainResult(endpoint=endpoint, scheduled_evals=scheduled,
                       computed_cells=computed, total_cells=total_cells,
                       trunc_prev_update=E, trunc_boundary=D)
