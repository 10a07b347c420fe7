from __future__ import annotations

import math

import numpy as np
import pytest

import picardwave as pw
from picardwave import engine_diffusion as eng


def _stationary_inputs(seed=3, stream=0, d=2, T=3.0, N=3, eps=0.25, eta=1e-2,
                       mode="exact"):
    model = pw.gaussian_data_model(np.zeros(d), np.ones(d), horizon=T)
    scheme = pw.diffusion_scheme(T, N, eps, eta)
    weights = eng.build_weights(scheme, mode)
    rng = pw.make_rng(seed, stream)
    y0 = pw.standard_normal_vec(rng, d)
    xi = pw.build_xi_table(rng, scheme, d)
    return model, scheme, weights, y0, xi


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

def test_weight_values_adjacent_pair():
    scheme = pw.uniform_scheme(1, 1.0, 5)     # eps = 0.2
    exact = eng.build_weights(scheme, "exact")
    literal = eng.build_weights(scheme, "literal")
    # adjacent pair (m, m-1): the boundary-growth factor is exp(0) = 1
    assert math.isclose(exact.a(0, 3, 2), 2.0 * (math.exp(0.1) - 1.0),
                        rel_tol=1e-12)
    assert math.isclose(literal.a(0, 3, 2), 2.0 * (math.exp(0.2) - 1.0),
                        rel_tol=1e-12)
    assert math.isclose(exact.b(0, 3, 2), math.sqrt(math.exp(0.2) - 1.0),
                        rel_tol=1e-12)


def test_weight_telescoping_direct_sum():
    for scheme in (pw.uniform_scheme(2, 1.0, 8),
                   pw.diffusion_scheme(2.0, 2, 0.3, 0.05)):
        w = eng.build_weights(scheme)
        for n in range(scheme.num_slices):
            tau = scheme.tau[n]
            for m in range(1, tau.shape[0]):
                total = sum(w.b(n, m, mp) ** 2 for mp in range(m))
                expect = math.exp(tau[m]) - 1.0
                assert abs(total - expect) <= 1e-12 * expect


def test_weight_boundary_factor_composition():
    scheme = pw.diffusion_scheme(3.0, 3, 0.2, 0.1)
    w = eng.build_weights(scheme)
    for n in range(scheme.num_slices):
        prod = float(np.prod(w.step_growth[n]))
        expect = math.exp(0.5 * scheme.slice_lengths[n])
        assert abs(prod - expect) <= 1e-12 * expect


def test_weights_grow_with_node_distance():
    # for fixed m the factor exp((tau_m - tau_{m'+1})/2) shrinks as m'
    # increases, so earlier nodes carry larger weights
    scheme = pw.uniform_scheme(1, 1.0, 6)
    w = eng.build_weights(scheme)
    for m in range(2, 7):
        for mp in range(m - 1):
            assert w.a(0, m, mp) >= w.a(0, m, mp + 1)
            assert w.b(0, m, mp) >= w.b(0, m, mp + 1)


def test_weights_reject_absurd_step():
    scheme = pw.uniform_scheme(1, 120.0, 2)
    with pytest.raises(ValueError):
        eng.build_weights(scheme)


def test_weights_reject_unknown_mode():
    with pytest.raises(ValueError):
        eng.build_weights(pw.uniform_scheme(1, 1.0, 2), "midpoint")


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def test_init_zero_score_zero_noise_is_pure_growth():
    _, scheme, weights, _, _ = _stationary_inputs()
    oracle = pw.ZeroScoreOracle(2, is_diffusion=True)
    y0 = np.array([1.0, -2.0])
    grids = eng.init_phase(oracle, y0, scheme, weights,
                           pw.zero_xi_table(scheme, 2))
    yb = y0
    for n in range(scheme.num_slices):
        expect = np.exp(0.5 * scheme.tau[n])[:, None] * yb
        assert np.allclose(grids[n], expect, rtol=1e-14)
        yb = grids[n][-1]


def test_init_variance_propagation_zero_score():
    # var(y at h) = e^h var(y0) + (e^h - 1) per coordinate
    T, N, eps = 2.0, 2, 0.125
    scheme = pw.diffusion_scheme(T, N, eps, 0.25)
    weights = eng.build_weights(scheme)
    vals = []
    for c in range(10_000):
        rng = pw.make_rng(30, c)
        y0 = pw.standard_normal_vec(rng, 4)
        xi = pw.build_xi_table(rng, scheme, 4)
        oracle = pw.ZeroScoreOracle(4, is_diffusion=True)
        grids = eng.init_phase(oracle, y0, scheme, weights, xi)
        vals.append(grids[0][-1])
    var = np.asarray(vals).var(axis=0).mean()
    expect = math.e * 1.0 + (math.e - 1.0)
    assert abs(var / expect - 1.0) <= 0.05


def test_init_round_and_query_accounting():
    model, scheme, weights, y0, xi = _stationary_inputs()
    oracle = pw.ScoreOracle(model)
    eng.init_phase(oracle, y0, scheme, weights, xi)
    assert oracle.eval_count == scheme.total_steps()
    log = eng.rounds_log(scheme, J=0)
    assert log.shape[0] == scheme.num_slices


# ---------------------------------------------------------------------------
# cell update
# ---------------------------------------------------------------------------

def test_cell_update_fixed_point():
    model, scheme, weights, y0, xi = _stationary_inputs(seed=6)
    oracle = pw.ScoreOracle(model)
    seq = eng.sequential_fine_integrator(oracle, y0, scheme, weights, xi)
    for n in range(scheme.num_slices):
        boundary = y0 if n == 0 else seq[n - 1][-1]
        out = eng.cell_update(n, 1, boundary, seq[n], oracle, weights, xi)
        scale = 1.0 + np.abs(seq[n]).max()
        assert np.abs(out - seq[n]).max() <= 1e-12 * scale


def test_cell_update_zero_score_is_depth_independent():
    _, scheme, weights, _, _ = _stationary_inputs(seed=7)
    rng = pw.make_rng(7, 9)
    xi = pw.build_xi_table(rng, scheme, 2)
    oracle = pw.ZeroScoreOracle(2, is_diffusion=True)
    boundary = np.array([0.3, 0.4])
    gen = np.random.Generator(np.random.Philox(2))
    a = eng.cell_update(0, 1, boundary, gen.standard_normal((9, 2)), oracle,
                        weights, xi)
    b = eng.cell_update(0, 5, boundary, gen.standard_normal((9, 2)), oracle,
                        weights, xi)
    assert np.array_equal(a, b)


def test_cell_update_single_point_slice():
    model = pw.gaussian_data_model(np.zeros(1), np.ones(1), horizon=1.0)
    scheme = pw.diffusion_scheme(1.0, 1, 10.0, 0.5)   # one step of h - eta
    weights = eng.build_weights(scheme)
    rng = pw.make_rng(8, 0)
    xi = pw.build_xi_table(rng, scheme, 1)
    oracle = pw.ScoreOracle(model)
    boundary = np.array([0.8])
    prev = np.array([[0.8], [55.0]])
    out = eng.cell_update(0, 1, boundary, prev, oracle, weights, xi)
    eps0 = scheme.eps[0][0]
    expect = (math.exp(0.5 * eps0) * 0.8
              + 2.0 * (math.exp(0.5 * eps0) - 1.0) * (-0.8)
              + math.sqrt(math.exp(eps0) - 1.0) * xi.xi(0)[0, 0])
    assert math.isclose(out[1, 0], expect, rel_tol=1e-14)


# ---------------------------------------------------------------------------
# sequential oracle
# ---------------------------------------------------------------------------

def test_sequential_endpoint_variance_zero_score():
    # per slice: var <- e^h var + (e^h - 1); telescopes to
    # e^{T-eta} var0 + e^{T-eta} - 1
    T, N, eta = 2.0, 2, 0.25
    scheme = pw.diffusion_scheme(T, N, 0.125, eta)
    weights = eng.build_weights(scheme)
    ends = np.empty(20_000)
    for c in range(ends.shape[0]):
        rng = pw.make_rng(31, c)
        y0 = pw.standard_normal_vec(rng, 1)
        xi = pw.build_xi_table(rng, scheme, 1)
        grids = eng.sequential_fine_integrator(
            pw.ZeroScoreOracle(1, is_diffusion=True), y0, scheme, weights, xi)
        ends[c] = grids[-1][-1, 0]
    horizon = T - eta
    expect = math.exp(horizon) * 1.0 + math.exp(horizon) - 1.0
    assert abs(ends.var() / expect - 1.0) <= 0.03


def test_sequential_bit_identical_rerun():
    model, scheme, weights, y0, xi = _stationary_inputs(seed=9)
    a = eng.sequential_fine_integrator(pw.ScoreOracle(model), y0, scheme,
                                       weights, xi)
    b = eng.sequential_fine_integrator(pw.ScoreOracle(model), y0, scheme,
                                       weights, xi)
    for ga, gb in zip(a, b):
        assert np.array_equal(ga, gb)


def test_sequential_one_step_matches_cell_update():
    model = pw.gaussian_data_model(np.zeros(1), np.ones(1), horizon=1.0)
    scheme = pw.diffusion_scheme(1.0, 1, 10.0, 0.5)
    weights = eng.build_weights(scheme)
    rng = pw.make_rng(10, 0)
    xi = pw.build_xi_table(rng, scheme, 1)
    y0 = np.array([0.8])
    seq = eng.sequential_fine_integrator(pw.ScoreOracle(model), y0, scheme,
                                         weights, xi)
    cell = eng.cell_update(0, 1, y0, seq[0], pw.ScoreOracle(model), weights,
                           xi)
    assert np.allclose(seq[0], cell, rtol=1e-14)


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

def test_round_accounting_identity():
    scheme = pw.diffusion_scheme(6.0, 6, 0.5, 0.1)
    log = eng.rounds_log(scheme, J=20, P=1)
    assert log.shape[0] == 2 * 6 + 20 - 1


def test_run_converges_to_sequential_oracle():
    model, scheme, weights, y0, xi = _stationary_inputs(
        seed=11, d=2, T=4.0, N=4, eps=0.125)
    res = eng.run_chain(pw.ScoreOracle(model), y0, scheme, weights, xi,
                        J=4 + 25)
    seq = eng.sequential_fine_integrator(pw.ScoreOracle(model), y0, scheme,
                                         weights, xi)
    assert np.linalg.norm(res.endpoint - seq[-1][-1]) <= 1e-8


def test_run_scheduled_evals_match_rounds_log():
    model, scheme, weights, y0, xi = _stationary_inputs(seed=12)
    oracle = pw.ScoreOracle(model)
    res = eng.run_chain(oracle, y0, scheme, weights, xi, J=5)
    log = eng.rounds_log(scheme, J=5, P=1)
    assert res.scheduled_evals == int(log.sum())
    assert oracle.eval_count == res.scheduled_evals


def test_fast_forward_matches_full_compute_bitwise():
    model, scheme, weights, y0, xi = _stationary_inputs(seed=13, T=4.0, N=4,
                                                        eps=0.2)
    fast = eng.run_chain(pw.ScoreOracle(model), y0, scheme, weights, xi, J=40)
    full = eng.run_chain(pw.ScoreOracle(model), y0, scheme, weights, xi, J=40,
                         memoize=False)
    assert np.array_equal(fast.endpoint, full.endpoint)
    assert fast.computed_cells < full.computed_cells


def test_geometric_convergence_in_depth():
    # discrepancy to the oracle is monotone in J past N and drops by
    # >= 10x over ten extra waves
    model, scheme, weights, y0, xi = _stationary_inputs(
        seed=14, d=4, T=6.0, N=6, eps=0.1)
    seq = eng.sequential_fine_integrator(pw.ScoreOracle(model), y0, scheme,
                                         weights, xi)
    ref = seq[-1][-1]
    discs = []
    for j in (6 + 5, 6 + 10, 6 + 15):
        res = eng.run_chain(pw.ScoreOracle(model), y0, scheme, weights, xi,
                            J=j)
        discs.append(np.linalg.norm(res.endpoint - ref))
    assert discs[1] <= discs[0]
    assert discs[2] <= discs[1]
    assert discs[0] >= 10.0 * discs[2]


def test_early_stop_endpoint_time():
    scheme = pw.diffusion_scheme(6.0, 6, 0.1, 1e-2)
    n_last = scheme.num_slices - 1
    end_time = scheme.slice_starts[n_last] + scheme.tau[n_last][-1]
    assert math.isclose(end_time, 6.0 - 1e-2, rel_tol=1e-12)


def test_validity_warnings_on_long_slices():
    model = pw.gaussian_data_model(np.zeros(2), np.ones(2), horizon=6.0)
    scheme = pw.diffusion_scheme(6.0, 6, 0.1, 1e-2)
    warnings = eng.lipschitz_validity_warnings(model, scheme)
    assert warnings     # h = 1 violates both smallness conditions
    short = pw.diffusion_scheme(0.048, 6, 0.002, 1e-3)
    assert eng.lipschitz_validity_warnings(model, short) == []


def test_truncation_zero_score_is_zero():
    _, scheme, weights, _, _ = _stationary_inputs(seed=15)
    rng = pw.make_rng(15, 1)
    xi = pw.build_xi_table(rng, scheme, 2)
    res = eng.run_chain(pw.ZeroScoreOracle(2, is_diffusion=True),
                        np.array([1.0, 2.0]), scheme, weights, xi, J=4,
                        diagnostics=True)
    assert np.all(res.trunc_prev_update == 0.0)
