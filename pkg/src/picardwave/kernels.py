"""Compiled inner loops for both engines.

One chain's state lives in small per-slice arrays (grid nodes x
dimension), so a chain stays cache-resident while its wavefront runs;
parallelism across chains is handled by the callers.  All kernels are
deterministic elementwise loops: results do not depend on worker count
or scheduling, and repeated calls with identical inputs are
bit-identical (which the engines exploit to fast-forward converged
cells).

Score evaluation is dispatched on an integer tag:
  0 zero field (testing), 1 diagonal quadratic, 2 dense quadratic
  (log-concave); 1 Gaussian marginal with diagonal covariance,
  2 Gaussian dense, 3 mixture diagonal, 4 mixture dense (diffusion).
A bounded perturbation delta * u(x) with the smooth unit field u from
targets.PerturbationField can be layered on either family.
"""

from __future__ import annotations

import numpy as np
from numba import njit

RT2 = np.sqrt(2.0)


@njit(cache=True, inline="always")
def _add_perturbation(x, center, u0, u1, wf, delta, out):
    d = x.shape[0]
    nrm2 = 0.0
    tdot = 0.0
    for i in range(d):
        rel = x[i] - center[i]
        nrm2 += rel * rel
        tdot += wf[i] * rel
    nrm = np.sqrt(nrm2)
    t = np.tanh(tdot)
    gn2 = 0.0
    if nrm > 1e-30:
        inv = 1.0 / nrm
    else:
        inv = 0.0
    # g = radial + 0.5 u0 + 0.5 tanh(<w, rel>) u1, then normalize
    g = np.empty(d)
    for i in range(d):
        g[i] = (x[i] - center[i]) * inv + 0.5 * u0[i] + 0.5 * t * u1[i]
        gn2 += g[i] * g[i]
    if gn2 <= 1e-24:
        gn2 = 0.0
        for i in range(d):
            g[i] = g[i] + u0[i]
            gn2 += g[i] * g[i]
    scale = delta / np.sqrt(gn2)
    for i in range(d):
        out[i] += scale * g[i]


@njit(cache=True, inline="always")
def _lc_score(tag, lam, prec, mu, pert, center, u0, u1, wf, delta, x, out):
    d = x.shape[0]
    if tag == 0:
        for i in range(d):
            out[i] = 0.0
    elif tag == 1:
        for i in range(d):
            out[i] = lam[i] * (x[i] - mu[i])
    else:
        for i in range(d):
            acc = 0.0
            for k in range(d):
                acc += prec[i, k] * (x[k] - mu[k])
            out[i] = acc
    if pert == 1:
        _add_perturbation(x, center, u0, u1, wf, delta, out)


@njit(cache=True)
def lc_init_slice(xb, w, h, tag, lam, prec, mu, pert, center, u0, u1, wf,
                  delta, out):
    """Coarse one-step fill of a slice: out[m] = xb - (h m / M) s(xb)
    + sqrt(2) w[m].  One score evaluation."""
    M1, d = out.shape
    M = M1 - 1
    s = np.empty(d)
    _lc_score(tag, lam, prec, mu, pert, center, u0, u1, wf, delta, xb, s)
    for i in range(d):
        out[0, i] = xb[i]
    for m in range(1, M1):
        frac = h * m / M
        for i in range(d):
            out[m, i] = xb[i] - frac * s[i] + RT2 * w[m, i]


@njit(cache=True)
def lc_cell_sweeps(boundary, start, w, hM, P, tag, lam, prec, mu, pert,
                   center, u0, u1, wf, delta, out, buf_a, buf_b):
    """P Jacobi-style Picard sweeps of one cell.

    Row 0 is pinned to the boundary throughout.  Sweep p rebuilds every
    node from the p-1 iterate:
        out[m] = boundary - hM * sum_{m'<m} s(prev[m']) + sqrt(2) w[m].
    Returns max_m ||sweep P - sweep (P-1)||^2 (truncation diagnostic).
    """
    M1, d = start.shape
    M = M1 - 1
    cur = buf_a
    nxt = buf_b
    for i in range(d):
        cur[0, i] = boundary[i]
    for m in range(1, M1):
        for i in range(d):
            cur[m, i] = start[m, i]
    s = np.empty(d)
    S = np.empty(d)
    maxdiff = 0.0
    for p in range(P):
        for i in range(d):
            S[i] = 0.0
            nxt[0, i] = boundary[i]
        for mp in range(M):
            _lc_score(tag, lam, prec, mu, pert, center, u0, u1, wf, delta,
                      cur[mp], s)
            for i in range(d):
                S[i] += s[i]
                nxt[mp + 1, i] = boundary[i] - hM * S[i] + RT2 * w[mp + 1, i]
        if p == P - 1:
            maxdiff = 0.0
            for m in range(M1):
                acc = 0.0
                for i in range(d):
                    diff = nxt[m, i] - cur[m, i]
                    acc += diff * diff
                if acc > maxdiff:
                    maxdiff = acc
        tmp = cur
        cur = nxt
        nxt = tmp
    for m in range(M1):
        for i in range(d):
            out[m, i] = cur[m, i]
    return maxdiff


@njit(cache=True)
def lc_sequential_slice(y0, steps, gamma, tag, lam, prec, mu, pert, center,
                        u0, u1, wf, delta, out):
    """Fine-grid Euler chain through one slice:
    out[m] = out[m-1] - gamma s(out[m-1]) + sqrt(2) steps[m-1]."""
    M1, d = out.shape
    s = np.empty(d)
    for i in range(d):
        out[0, i] = y0[i]
    for m in range(1, M1):
        _lc_score(tag, lam, prec, mu, pert, center, u0, u1, wf, delta,
                  out[m - 1], s)
        for i in range(d):
            out[m, i] = out[m - 1, i] - gamma * s[i] + RT2 * steps[m - 1, i]
    return 0


# ---------------------------------------------------------------------------
# diffusion (exponential integrator)
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _diff_score(node, tag, minv, invcov, mmeans, logw, pert, center, u0, u1,
                wf, delta, x, out):
    """Marginal score at grid node `node`; per-node coefficients are
    precomputed by the oracle pack."""
    d = x.shape[0]
    K = mmeans.shape[1]
    if tag == 0:
        for i in range(d):
            out[i] = 0.0
    elif tag == 1:
        for i in range(d):
            out[i] = -minv[node, i] * (x[i] - mmeans[node, 0, i])
    elif tag == 2:
        for i in range(d):
            acc = 0.0
            for k in range(d):
                acc += invcov[node, i, k] * (x[k] - mmeans[node, 0, k])
            out[i] = -acc
    else:
        # responsibility-weighted mean, shared covariance
        q = np.empty(K)
        qmax = -1e300
        for c in range(K):
            acc = 0.0
            if tag == 3:
                for i in range(d):
                    diff = x[i] - mmeans[node, c, i]
                    acc += diff * diff * minv[node, i]
            else:
                for i in range(d):
                    row = 0.0
                    for k in range(d):
                        row += invcov[node, i, k] * (x[k] - mmeans[node, c, k])
                    acc += row * (x[i] - mmeans[node, c, i])
            q[c] = logw[c] - 0.5 * acc
            if q[c] > qmax:
                qmax = q[c]
        rsum = 0.0
        for c in range(K):
            q[c] = np.exp(q[c] - qmax)
            rsum += q[c]
        mbar = np.empty(d)
        for i in range(d):
            acc = 0.0
            for c in range(K):
                acc += q[c] * mmeans[node, c, i]
            mbar[i] = acc / rsum
        if tag == 3:
            for i in range(d):
                out[i] = -minv[node, i] * (x[i] - mbar[i])
        else:
            for i in range(d):
                acc = 0.0
                for k in range(d):
                    acc += invcov[node, i, k] * (x[k] - mbar[k])
                out[i] = -acc
    if pert == 1:
        _add_perturbation(x, center, u0, u1, wf, delta, out)


@njit(cache=True)
def diff_init_slice(yb, xi, bf, eg, wd, bn, tag, minv, invcov, mmeans, logw,
                    pert, center, u0, u1, wf, delta, out):
    """Initialization pass over one slice: the score is frozen at the
    incoming boundary point (evaluated at each node's time).

    out[m] = bf[m] yb + S_m,
    S_m = eg[m-1] S_{m-1} + wd[m-1] s_{m-1}(yb) + bn[m-1] xi[m-1].
    """
    M1, d = out.shape
    M = M1 - 1
    s = np.empty(d)
    S = np.zeros(d)
    for i in range(d):
        out[0, i] = yb[i]
    for m in range(1, M1):
        _diff_score(m - 1, tag, minv, invcov, mmeans, logw, pert, center,
                    u0, u1, wf, delta, yb, s)
        for i in range(d):
            S[i] = eg[m - 1] * S[i] + wd[m - 1] * s[i] + bn[m - 1] * xi[m - 1, i]
            out[m, i] = bf[m] * yb[i] + S[i]
    return 0


@njit(cache=True)
def diff_cell_sweeps(boundary, start, xi, bf, eg, wd, bn, tag, minv, invcov,
                     mmeans, logw, pert, center, u0, u1, wf, delta, P, out,
                     buf_a, buf_b):
    """P exponential-integrator Picard sweeps of one cell (P = 1 in the
    standard configuration).  The per-node drift/noise sums telescope:

    out[m] = bf[m] boundary + S_m,
    S_m = eg[m-1] S_{m-1} + wd[m-1] s(prev[m-1]) + bn[m-1] xi[m-1].

    Returns max_m ||sweep P - sweep (P-1)||^2.
    """
    M1, d = start.shape
    M = M1 - 1
    cur = buf_a
    nxt = buf_b
    for i in range(d):
        cur[0, i] = boundary[i]
    for m in range(1, M1):
        for i in range(d):
            cur[m, i] = start[m, i]
    s = np.empty(d)
    S = np.empty(d)
    maxdiff = 0.0
    for p in range(P):
        for i in range(d):
            S[i] = 0.0
            nxt[0, i] = boundary[i]
        for mp in range(M):
            _diff_score(mp, tag, minv, invcov, mmeans, logw, pert, center,
                        u0, u1, wf, delta, cur[mp], s)
            for i in range(d):
                S[i] = eg[mp] * S[i] + wd[mp] * s[i] + bn[mp] * xi[mp, i]
                nxt[mp + 1, i] = bf[mp + 1] * boundary[i] + S[i]
        if p == P - 1:
            maxdiff = 0.0
            for m in range(M1):
                acc = 0.0
                for i in range(d):
                    diff = nxt[m, i] - cur[m, i]
                    acc += diff * diff
                if acc > maxdiff:
                    maxdiff = acc
        tmp = cur
        cur = nxt
        nxt = tmp
    for m in range(M1):
        for i in range(d):
            out[m, i] = cur[m, i]
    return maxdiff


@njit(cache=True)
def diff_sequential_slice(y0, xi, eg, wd, bn, tag, minv, invcov, mmeans,
                          logw, pert, center, u0, u1, wf, delta, out):
    """One-step exponential integrator through a slice:
    out[m+1] = eg[m] out[m] + wd[m] s_m(out[m]) + bn[m] xi[m]."""
    M1, d = out.shape
    s = np.empty(d)
    for i in range(d):
        out[0, i] = y0[i]
    for m in range(M1 - 1):
        _diff_score(m, tag, minv, invcov, mmeans, logw, pert, center, u0,
                    u1, wf, delta, out[m], s)
        for i in range(d):
            out[m + 1, i] = eg[m] * out[m, i] + wd[m] * s[i] + bn[m] * xi[m, i]
    return 0
