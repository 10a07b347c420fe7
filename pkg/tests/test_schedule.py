from __future__ import annotations

import math

import numpy as np
import pytest

import picardwave as pw


def test_uniform_partition():
    scheme = pw.uniform_scheme(2, 1.0, 4)
    assert np.allclose(scheme.tau[0], [0.0, 0.25, 0.5, 0.75, 1.0])
    assert np.allclose(scheme.eps[0], 0.25)
    assert scheme.tau[0][-1] == 1.0


def test_uniform_degenerate_single_step():
    scheme = pw.uniform_scheme(1, 0.1, 1)
    assert np.allclose(scheme.eps[0], [0.1])
    assert scheme.total_steps() == 1


def test_uniform_totals():
    scheme = pw.uniform_scheme(3, 0.5, 10)
    assert math.isclose(scheme.horizon, 1.5)
    assert scheme.total_steps() == 30


@pytest.mark.parametrize("args", [(0, 1.0, 4), (2, -1.0, 4), (2, 1.0, 0)])
def test_uniform_rejects_bad_inputs(args):
    with pytest.raises(ValueError):
        pw.uniform_scheme(*args)


# ---------------------------------------------------------------------------
# early-stopped decaying scheme
# ---------------------------------------------------------------------------

def test_decaying_last_slice_recursion():
    scheme = pw.diffusion_scheme(2.0, 2, 0.5, 0.25)
    tau = scheme.tau[-1]
    assert np.allclose(tau[:3], [0.0, 1.0 / 3.0, 5.0 / 9.0])
    assert tau[-1] == 0.75
    eps = scheme.eps[-1]
    # every step obeys both caps
    assert np.all(eps <= 0.5 + 1e-15)
    assert np.all(eps <= 0.5 * (1.0 - tau[1:]) * (1.0 + 1e-12))


def test_decaying_single_step_when_eta_large():
    scheme = pw.diffusion_scheme(2.0, 2, 10.0, 0.5)
    assert scheme.eps[-1].shape[0] == 1
    assert math.isclose(scheme.eps[-1][0], 0.5)


def test_decaying_step_count_scales_like_log():
    # steps shrink by 1/(1+eps) per node: about log(h/eta)/log(1+eps) steps
    scheme = pw.diffusion_scheme(10.0, 10, 0.1, 1e-3)
    m_last = scheme.eps[-1].shape[0]
    assert 65 <= m_last <= 75


def test_diffusion_scheme_rejects_bad_eta():
    with pytest.raises(ValueError):
        pw.diffusion_scheme(2.0, 2, 0.5, 1.0)
    with pytest.raises(ValueError):
        pw.diffusion_scheme(2.0, 2, 0.5, 0.0)


def test_diffusion_uneven_division_shortens_last_substep():
    scheme = pw.diffusion_scheme(2.0, 2, 0.3, 0.1)
    eps = scheme.eps[0]
    assert eps.shape[0] == 4          # ceil(1 / 0.3)
    assert math.isclose(eps[-1], 0.1)
    assert scheme.tau[0][-1] == 1.0


def test_validator_passes_scheme_matrix():
    schemes = [
        pw.uniform_scheme(1, 0.1, 1),
        pw.uniform_scheme(4, 0.025, 16),
        pw.diffusion_scheme(2.0, 2, 0.5, 0.25),
        pw.diffusion_scheme(6.0, 6, 0.05, 1e-2),
        pw.diffusion_scheme(3.0, 3, 0.4, 0.3),
    ]
    for scheme in schemes:
        pw.validate_scheme(scheme)


def test_validator_rejects_violations():
    scheme = pw.diffusion_scheme(2.0, 2, 0.5, 0.25)
    # an oversized last-slice step violates the decay cap
    with pytest.raises(ValueError):
        pw.validate_scheme(scheme, step_bound=0.1)


# ---------------------------------------------------------------------------
# wavefront
# ---------------------------------------------------------------------------

def test_wavefront_examples():
    wf = pw.wavefront(3, 4)
    assert set(wf.wave(3)) == {(0, 3), (1, 2), (2, 1)}
    assert wf.wave(1) == [(0, 1)]
    assert wf.wave(6) == [(2, 4)]
    assert wf.num_waves == 6


def test_wavefront_covers_grid_exactly():
    for n in range(1, 9):
        for j in range(1, 9):
            wf = pw.wavefront(n, j)
            seen = []
            for k in range(1, wf.num_waves + 1):
                for cell in wf.wave(k):
                    assert sum(cell) == k
                    seen.append(cell)
            assert len(seen) == n * j
            assert set(seen) == {(a, b) for a in range(n)
                                 for b in range(1, j + 1)}


def test_wavefront_large_counts():
    wf = pw.wavefront(64, 64)
    total = sum(len(wf.wave(k)) for k in range(1, wf.num_waves + 1))
    assert total == 64 * 64
    assert wf.num_waves == 127


def test_wavefront_dependencies_precede():
    wf = pw.wavefront(5, 7)
    for k in range(1, wf.num_waves + 1):
        for n, j in wf.wave(k):
            if n > 0:
                assert (n - 1) + j == k - 1
            if j > 1:
                assert n + (j - 1) == k - 1


# ---------------------------------------------------------------------------
# grid index
# ---------------------------------------------------------------------------

def test_grid_index_uniform():
    scheme = pw.uniform_scheme(2, 1.0, 4)
    assert pw.grid_index(scheme, 0, 0.6) == (2, 0.5)
    assert pw.grid_index(scheme, 0, 0.0) == (0, 0.0)
    assert pw.grid_index(scheme, 1, 1.0) == (4, 1.0)


def test_grid_index_matches_linear_scan_on_decaying_slice():
    scheme = pw.diffusion_scheme(2.0, 2, 0.5, 0.25)
    tau = scheme.tau[-1]
    for probe in [0.0, 1e-9, 0.2, 1.0 / 3.0, 0.4, 0.6, 0.74, 0.75]:
        idx, anchor = pw.grid_index(scheme, 1, probe)
        ref = max(m for m in range(tau.shape[0]) if tau[m] <= probe)
        assert idx == ref
        assert anchor == tau[ref]


def test_grid_index_out_of_range():
    scheme = pw.uniform_scheme(1, 1.0, 4)
    with pytest.raises(ValueError):
        pw.grid_index(scheme, 0, 1.5)


# ---------------------------------------------------------------------------
# parameter selection
# ---------------------------------------------------------------------------

def test_logconcave_params_isotropic():
    p = pw.select_logconcave_params(1.0, 1.0, 16, 0.5, 8 * math.log(4.0))
    assert math.isclose(p.h, 0.1)
    assert p.M == 64
    assert p.P == 4


def test_logconcave_params_clamp():
    p = pw.select_logconcave_params(1.0, 1.0, 4, 0.5, 0.25)
    assert p.N == 1
    assert p.warnings


def test_logconcave_params_conditioned():
    kl0 = 8.0 * math.log(4.0)    # d = 16, kappa = 4 initialization bound
    assert math.isclose(kl0, 11.090354888959125)
    p = pw.select_logconcave_params(1.0, 4.0, 16, 0.5, kl0)
    assert p.N == 152
    assert math.isclose(p.h, 0.025)
    assert p.M == 256
    assert p.P == 5
    assert math.isclose(p.delta_max, 0.1)


@pytest.mark.parametrize("alpha,beta,d,acc", [
    (1.0, 1.0, 4, 0.5), (1.0, 4.0, 16, 0.5), (0.5, 2.0, 8, 0.3),
    (2.0, 3.0, 32, 1.0),
])
def test_logconcave_params_self_verify(alpha, beta, d, acc):
    kl0 = 0.5 * d * math.log(beta / alpha) + 0.1
    p = pw.select_logconcave_params(alpha, beta, d, acc, kl0)
    assert pw.check_logconcave_params(p, alpha, beta, d, kl0) == []


def test_diffusion_params_example():
    p = pw.select_diffusion_params(16, 0.5)
    assert p.N == 5
    assert p.M == 267
    assert p.P == 1


def test_diffusion_params_clamp():
    p = pw.select_diffusion_params(4, 2.0)    # accuracy^2 = d
    assert p.N == 1
    assert p.warnings
