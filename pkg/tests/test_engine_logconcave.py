from __future__ import annotations

import math

import numpy as np
import pytest

import picardwave as pw
from picardwave import engine_logconcave as eng


def _chain_inputs(seed=5, stream=0, d=2, N=6, h=0.025, M=8):
    target = pw.gaussian_target(np.zeros(d), np.linspace(1.0, 4.0, d))
    scheme = pw.uniform_scheme(N, h, M)
    rng = pw.make_rng(seed, stream)
    x0, _ = pw.mode_concentrated_init(target, rng)
    noise = pw.build_brownian_table(rng, scheme, d)
    return target, scheme, x0, noise


# ---------------------------------------------------------------------------
# initialization sweep
# ---------------------------------------------------------------------------

def test_init_zero_score_zero_noise_stays_put():
    scheme = pw.uniform_scheme(3, 0.1, 4)
    oracle = pw.ZeroScoreOracle(2)
    x0 = np.array([0.7, -1.0])
    grids = eng.init_phase(oracle, x0, scheme, pw.zero_brownian_table(scheme, 2))
    for g in grids:
        assert np.array_equal(g, np.tile(x0, (5, 1)))


def test_init_hand_simulation():
    # d=1, s(x) = x, x0 = 1, zero noise, h = 0.1, M = 2
    target = pw.gaussian_target(np.zeros(1), np.ones(1))
    scheme = pw.uniform_scheme(2, 0.1, 2)
    grids = eng.init_phase(pw.ScoreOracle(target), np.array([1.0]), scheme,
                           pw.zero_brownian_table(scheme, 1))
    assert np.allclose(grids[0][:, 0], [1.0, 0.95, 0.9])
    assert math.isclose(grids[1][1, 0], 0.9 - 0.05 * 0.9)   # 0.855


def test_init_query_accounting():
    target, scheme, x0, noise = _chain_inputs()
    oracle = pw.ScoreOracle(target)
    eng.init_phase(oracle, x0, scheme, noise)
    assert oracle.eval_count == scheme.num_slices
    log = eng.rounds_log(scheme.num_slices, 8, 0, 1)
    assert log.shape[0] == scheme.num_slices
    assert np.all(log == 1)


def test_init_rejects_non_uniform_scheme():
    scheme = pw.diffusion_scheme(2.0, 2, 0.5, 0.25)
    with pytest.raises(ValueError):
        eng.init_phase(pw.ZeroScoreOracle(1), np.zeros(1), scheme,
                       pw.zero_brownian_table(scheme, 1))


# ---------------------------------------------------------------------------
# cell update
# ---------------------------------------------------------------------------

def test_cell_update_fixed_point():
    target, scheme, x0, noise = _chain_inputs()
    oracle = pw.ScoreOracle(target)
    seq = eng.sequential_fine_lmc(oracle, x0, scheme, noise)
    for n in (0, 3, 5):
        boundary = x0 if n == 0 else seq[n - 1][-1]
        out = eng.cell_update(n, 1, boundary, seq[n], oracle, noise, P=1)
        scale = 1.0 + np.abs(seq[n]).max()
        assert np.abs(out - seq[n]).max() <= 1e-12 * scale


def test_cell_update_zero_score_ignores_previous_diagonal():
    scheme = pw.uniform_scheme(2, 0.1, 4)
    rng = pw.make_rng(3, 1)
    noise = pw.build_brownian_table(rng, scheme, 2)
    oracle = pw.ZeroScoreOracle(2)
    boundary = np.array([0.5, -0.5])
    gen = np.random.Generator(np.random.Philox(1))
    for p in (1, 3):
        out = eng.cell_update(0, 1, boundary,
                              gen.standard_normal((5, 2)), oracle, noise, P=p)
        expect = boundary + math.sqrt(2.0) * noise.w(0)
        assert np.allclose(out, expect, atol=1e-15)


def test_cell_update_single_point_slice():
    target = pw.gaussian_target(np.zeros(1), 2.0 * np.ones(1))
    scheme = pw.uniform_scheme(1, 0.05, 1)
    rng = pw.make_rng(4, 2)
    noise = pw.build_brownian_table(rng, scheme, 1)
    oracle = pw.ScoreOracle(target)
    boundary = np.array([1.5])
    prev = np.array([[1.5], [99.0]])    # interior value must be irrelevant
    for p in (1, 4):
        out = eng.cell_update(0, 1, boundary, prev, oracle, noise, P=p)
        expect = 1.5 - 0.05 * (2.0 * 1.5) + math.sqrt(2.0) * noise.w(0)[1, 0]
        assert math.isclose(out[1, 0], expect, rel_tol=1e-15)


def test_cell_update_rejects_bad_p():
    target, scheme, x0, noise = _chain_inputs()
    with pytest.raises(ValueError):
        eng.cell_update(0, 1, x0, np.zeros((9, 2)), pw.ScoreOracle(target),
                        noise, P=0)


# ---------------------------------------------------------------------------
# sequential fine-grid oracle
# ---------------------------------------------------------------------------

def test_sequential_hand_iteration():
    target = pw.gaussian_target(np.zeros(1), np.ones(1))
    scheme = pw.uniform_scheme(1, 0.1, 2)
    grids = eng.sequential_fine_lmc(pw.ScoreOracle(target), np.array([1.0]),
                                    scheme, pw.zero_brownian_table(scheme, 1))
    assert np.allclose(grids[0][:, 0], [1.0, 0.95, 0.9025])


def test_sequential_stationary_variance():
    # Euler chain with step gamma targeting N(0,1): stationary variance
    # 2 gamma / (1 - (1 - gamma)^2)
    target = pw.gaussian_target(np.zeros(1), np.ones(1))
    gamma = 0.05
    scheme = pw.uniform_scheme(20, 0.5, 10)    # 200 steps of 0.05
    ends = np.empty(20_000)
    for c in range(ends.shape[0]):
        rng = pw.make_rng(60, c)
        noise = pw.build_brownian_table(rng, scheme, 1)
        grids = eng.sequential_fine_lmc(pw.ScoreOracle(target),
                                        np.zeros(1), scheme, noise)
        ends[c] = grids[-1][-1, 0]
    expect = 2 * gamma / (1.0 - (1.0 - gamma) ** 2)
    assert abs(ends.var() / expect - 1.0) <= 0.03


def test_sequential_rerun_bit_identical():
    target, scheme, x0, noise = _chain_inputs()
    a = eng.sequential_fine_lmc(pw.ScoreOracle(target), x0, scheme, noise)
    b = eng.sequential_fine_lmc(pw.ScoreOracle(target), x0, scheme, noise)
    for ga, gb in zip(a, b):
        assert np.array_equal(ga, gb)


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

def test_run_degenerate_no_waves_is_coarse_chain():
    target, scheme, x0, noise = _chain_inputs()
    oracle = pw.ScoreOracle(target)
    res = eng.run_chain(oracle, x0, scheme, noise, P=4, J=0)
    init = eng.init_phase(pw.ScoreOracle(target), x0, scheme, noise)
    assert np.array_equal(res.endpoint, init[-1][-1])


def test_round_accounting_identity():
    log = eng.rounds_log(N=4, M=8, J=6, P=4)
    assert log.shape[0] == 4 + (4 + 6 - 1) * 4    # 40 adaptive rounds
    wf = pw.wavefront(4, 6)
    expect = 4 + sum(4 * 8 * len(wf.wave(k)) for k in range(1, 10))
    assert int(log.sum()) == expect


def test_run_converges_to_sequential_oracle():
    target, scheme, x0, noise = _chain_inputs(d=1, N=8, h=0.1, M=6)
    oracle = pw.ScoreOracle(target)
    res = eng.run_chain(oracle, x0, scheme, noise, P=4, J=8 + 30)
    seq = eng.sequential_fine_lmc(pw.ScoreOracle(target), x0, scheme, noise)
    assert np.linalg.norm(res.endpoint - seq[-1][-1]) <= 1e-8


def test_run_scheduled_evals_match_rounds_log():
    target, scheme, x0, noise = _chain_inputs()
    oracle = pw.ScoreOracle(target)
    res = eng.run_chain(oracle, x0, scheme, noise, P=3, J=5)
    log = eng.rounds_log(scheme.num_slices, 8, 5, 3)
    assert res.scheduled_evals == int(log.sum())
    assert oracle.eval_count == res.scheduled_evals


def test_fast_forward_matches_full_compute_bitwise():
    target, scheme, x0, noise = _chain_inputs(seed=8)
    oracle = pw.ScoreOracle(target)
    fast = eng.run_chain(oracle, x0, scheme, noise, P=5, J=24)
    full = eng.run_chain(pw.ScoreOracle(target), x0, scheme, noise, P=5,
                         J=24, memoize=False)
    assert np.array_equal(fast.endpoint, full.endpoint)
    assert fast.computed_cells < full.computed_cells
    assert full.computed_cells == full.total_cells
    assert fast.scheduled_evals == full.scheduled_evals


def test_lazy_mode_matches_eager_bitwise():
    target = pw.gaussian_target(np.zeros(2), np.linspace(1.0, 4.0, 2))
    scheme = pw.uniform_scheme(6, 0.025, 8)
    rng = pw.make_rng(13, 0)
    x0, _ = pw.mode_concentrated_init(target, rng)
    eager_noise = pw.build_brownian_table(rng, scheme, 2)
    lazy_noise = pw.build_brownian_table(rng, scheme, 2, lazy=True)
    a = eng.run_chain(pw.ScoreOracle(target), x0, scheme, eager_noise,
                      P=5, J=12)
    b = eng.run_chain(pw.ScoreOracle(target), x0, scheme, lazy_noise,
                      P=5, J=12, lazy=True)
    assert np.array_equal(a.endpoint, b.endpoint)


def test_one_wave_on_sequential_solution_is_identity():
    target, scheme, x0, noise = _chain_inputs(seed=10)
    oracle = pw.ScoreOracle(target)
    seq = eng.sequential_fine_lmc(oracle, x0, scheme, noise)
    N = scheme.num_slices
    for n in range(N):
        boundary = x0 if n == 0 else seq[n - 1][-1]
        out = eng.cell_update(n, 1, boundary, seq[n], oracle, noise, P=5)
        scale = 1.0 + np.abs(seq[n]).max()
        assert np.abs(out - seq[n]).max() <= 1e-12 * scale


def test_oracle_discrepancy_nonincreasing_in_depth():
    target, scheme, x0, noise = _chain_inputs(seed=12, d=2, N=8, M=8)
    seq = eng.sequential_fine_lmc(pw.ScoreOracle(target), x0, scheme, noise)
    ref = seq[-1][-1]
    discs = []
    for j_extra in (0, 5, 15):
        res = eng.run_chain(pw.ScoreOracle(target), x0, scheme, noise, P=5,
                            J=scheme.num_slices + j_extra)
        discs.append(np.linalg.norm(res.endpoint - ref))
    assert discs[1] <= discs[0] + 1e-15
    assert discs[2] <= discs[1] + 1e-15


# ---------------------------------------------------------------------------
# truncation diagnostics
# ---------------------------------------------------------------------------

def test_truncation_zero_score_is_exactly_zero():
    scheme = pw.uniform_scheme(4, 0.1, 4)
    rng = pw.make_rng(14, 0)
    noise = pw.build_brownian_table(rng, scheme, 2)
    res = eng.run_chain(pw.ZeroScoreOracle(2), np.zeros(2), scheme, noise,
                        P=3, J=6, diagnostics=True)
    assert np.all(res.trunc_prev_update == 0.0)


def test_truncation_boundary_vanishes_at_convergence():
    target, scheme, x0, noise = _chain_inputs(seed=15)
    res = eng.run_chain(pw.ScoreOracle(target), x0, scheme, noise, P=5,
                        J=scheme.num_slices + 20, diagnostics=True)
    scale = float(np.abs(res.endpoint).max()) + 1.0
    assert res.trunc_boundary[-1, -1] <= 1e-16 * scale


def test_truncation_decays_along_depth():
    # kappa = 4 reference: the per-depth decay of the boundary truncation
    # error, median over the usable (positive-denominator) window
    d = 4
    target = pw.gaussian_target(np.zeros(d), np.linspace(1.0, 4.0, d))
    kl0 = 0.5 * d * math.log(4.0)
    p = pw.select_logconcave_params(1.0, 4.0, d, 1.0, kl0)
    scheme = pw.uniform_scheme(p.N, p.h, p.M)
    acc = None
    B = 30
    for c in range(B):
        rng = pw.make_rng(16, c)
        x0, _ = pw.mode_concentrated_init(target, rng)
        noise = pw.build_brownian_table(rng, scheme, d)
        res = eng.run_chain(pw.ScoreOracle(target), x0, scheme, noise,
                            P=p.P, J=p.N + 8, diagnostics=True)
        acc = res.trunc_boundary if acc is None else acc + res.trunc_boundary
    delta = acc / B
    ratios = []
    for n in range(delta.shape[0]):
        for j in range(n + 2, min(n + 6, delta.shape[1] - 1)):
            if delta[n, j - 1] > 0.0:
                ratios.append(delta[n, j] / delta[n, j - 1])
    assert ratios, "no usable decay ratios"
    assert np.median(ratios) < 1.0


def test_scheduling_guard_trips_on_corrupt_state():
    target, scheme, x0, noise = _chain_inputs()
    # run_chain itself never violates the schedule; cell_update applied
    # with a stale diagonal is the user-facing misuse the guard catches
    res = eng.run_chain(pw.ScoreOracle(target), x0, scheme, noise, P=2, J=3)
    assert res.total_cells == scheme.num_slices * 3
