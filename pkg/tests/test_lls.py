import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abcem import lls
from abcem.lls import (BankruptcyError, DegenerateHistoryError, LlsParams, LlsState, MemoryMode,
                       ReturnHistory, clamp_gamma, clearance_price_explicit,
                       clearance_price_fixed_point, clearance_residual, dividend_step,
                       effective_memory, expected_log_utility, foc_value, init_history,
                       initial_state, lls_ensemble, lls_run, lls_step, noisy_gamma, optimal_gamma,
                       step_return, wealth_step)
from abcem.rng import InvalidParameterError, make_stream

BASIC = LlsParams()


def grid_scan_gamma(history, r, dt, points=100_001):
    grid = np.linspace(0.01, 0.99, points)
    return grid[np.argmax(expected_log_utility(grid, history, r, dt))]


def random_state(N, rs):
    p = LlsParams(num_agents=N, total_shares=int(rs.integers(1, 10**5)))
    st_ = LlsState(wealth=rs.uniform(10, 5000, N), gamma=rs.uniform(0.01, 0.99, N),
                   price=float(rs.uniform(0.5, 50)), prev_price=1.0,
                   dividend=float(rs.uniform(0.01, 1)), history=ReturnHistory([0.04]))
    return p, st_, rs.uniform(0.01, 0.99, N), float(rs.uniform(0.01, 1))


def test_dividend_step():
    assert dividend_step(0.2, BASIC, make_stream(1)) == pytest.approx(0.21, rel=1e-15)
    zs = {dividend_step(0.2, BASIC, make_stream(s)) for s in range(5)}
    assert len(zs) == 1
    assert dividend_step(0.2, BASIC.with_(dt=1e-300), make_stream(1)) == 0.2
    with pytest.raises(InvalidParameterError):
        dividend_step(0.2, BASIC.with_(dividend_lo=-2.0, dividend_hi=-2.0), make_stream(1))


def test_step_return():
    assert step_return(4.0, 4.0, 0.2, 1.0) == pytest.approx(0.05, rel=1e-15)
    assert step_return(4.0, 4.0, 0.0, 1.0) == 0.0
    assert step_return(4.4, 4.0, 0.0, 1.0) == pytest.approx(0.1, rel=1e-14)


def test_wealth_step():
    assert wealth_step(1000.0, 0.4, 0.04, 0.1, 1.0) == pytest.approx(1064.0, rel=1e-15)
    assert wealth_step(1000.0, 0.0, 0.04, 0.7, 1.0) == pytest.approx(1040.0, rel=1e-15)
    assert wealth_step(1000.0, 0.9, 0.04, 0.04, 0.5) == pytest.approx(1020.0, rel=1e-15)
    with pytest.raises(BankruptcyError):
        wealth_step(1000.0, 0.99, 0.04, -2.0, 1.0)


def test_foc_examples():
    assert foc_value(0.3, [0.04] * 5, 0.04, 1.0) == 0.0
    assert foc_value(0.99, [0.1, 0.2], 0.04, 1.0) > 0
    # hand evaluation: 0.06 / 1.07 and -0.06 / 1.01 averaged
    assert foc_value(0.5, [0.1, -0.02], 0.04, 1.0) == pytest.approx(
        0.5 * (0.06 / 1.07 - 0.06 / 1.01), rel=1e-14)
    with pytest.raises(DegenerateHistoryError):
        foc_value(0.5, [-5.0], 0.04, 1.0)


def test_foc_matches_finite_difference():
    rs = np.random.default_rng(8)
    h = 1e-6
    for _ in range(200):
        hist = rs.uniform(-0.5, 0.8, rs.integers(1, 300))
        g = rs.uniform(0.05, 0.95)
        fd = (expected_log_utility(g + h, hist, 0.04, 1.0)
              - expected_log_utility(g - h, hist, 0.04, 1.0)) / (2 * h)
        f = foc_value(g, hist, 0.04, 1.0)
        assert abs(fd - f) <= 1e-6 * max(abs(f), 1e-3)


def test_optimal_gamma_examples():
    assert optimal_gamma([0.1] * 15, 0.04, 1.0, 0.4) == 0.99
    assert optimal_gamma([0.0] * 15, 0.04, 1.0, 0.4) == 0.01
    assert optimal_gamma([0.04] * 15, 0.04, 1.0, 0.37) == 0.37
    g = optimal_gamma([0.5, -0.3], 0.04, 1.0, 0.4)
    assert 0.01 < g < 0.99
    assert abs(g - grid_scan_gamma([0.5, -0.3], 0.04, 1.0)) <= 1e-4
    assert abs(foc_value(g, [0.5, -0.3], 0.04, 1.0)) < 1e-9
    with pytest.raises(InvalidParameterError):
        optimal_gamma([], 0.04, 1.0, 0.4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-0.9, 3.0), min_size=1, max_size=60), st.sampled_from([1.0, 0.1, 0.01]))
def test_optimal_gamma_against_grid_scan(hist, dt):
    g = optimal_gamma(hist, 0.04, dt, 0.4)
    assert abs(g - grid_scan_gamma(hist, 0.04, dt)) <= 1e-4 + 1e-12


def test_foc_is_non_increasing_on_random_histories():
    rs = np.random.default_rng(2)
    for _ in range(10_000):
        hist = rs.uniform(-0.9, 2.0, rs.integers(1, 20))
        assert foc_value(0.01, hist, 0.04, 1.0) >= foc_value(0.99, hist, 0.04, 1.0)


def test_clamp_and_noise():
    assert clamp_gamma(1.2) == 0.99 and clamp_gamma(-0.3) == 0.01 and clamp_gamma(0.5) == 0.5
    rng = make_stream(3)
    assert noisy_gamma(0.42, BASIC.with_(gamma_noise_sd=0.0), rng) == 0.42
    assert rng.draw_count == 1
    draws = noisy_gamma(np.full(10**5, 0.5), BASIC, make_stream(4))
    assert draws.min() >= 0.01 and draws.max() <= 0.99
    assert abs(draws.mean() - 0.5) < 0.005
    assert noisy_gamma(0.99, BASIC.with_(gamma_noise_sd=1e-300), make_stream(1)) == 0.99


def test_effective_memory():
    assert effective_memory(15, 1.0, MemoryMode.SCALED) == 15
    assert effective_memory(15, 0.1, MemoryMode.SCALED) == 150
    assert effective_memory(15, 0.01, MemoryMode.FIXED) == 15
    assert effective_memory(0.5, 1.0, "scaled") == 1


def test_init_history():
    p = BASIC.with_(history_init_sd=0.0)
    assert np.all(init_history(p, make_stream(1)) == 0.0415)
    h = init_history(BASIC.with_(memory_spec=10**4), make_stream(2))
    assert len(h) == 10**4 and abs(h.mean() - 0.0415) < 0.001
    p = BASIC.with_(num_agents=3, memory_spec=[5, 7, 2], dt=0.5)
    assert len(init_history(p, make_stream(1))) == 14


def test_params_validation():
    for bad in (dict(num_agents=0), dict(interest_rate=1.0), dict(dividend_lo=0.1),
                dict(gamma_noise_sd=-1), dict(dt=0), dict(total_shares=0),
                dict(memory_spec=[1, 2]), dict(memory_mode="fixed", memory_spec=0.5)):
        with pytest.raises(InvalidParameterError):
            BASIC.with_(**bad)


def test_stationary_clearance_price_is_four():
    st_ = initial_state(BASIC, make_stream(1))
    g = np.full(100, 0.4)
    # zero feedback: everything the dividend and interest add is spent at S
    S = clearance_price_fixed_point(g, st_, BASIC, 0.2)
    assert S == pytest.approx(clearance_price_explicit(g, st_, BASIC, 0.2), rel=1e-12)
    assert np.sum(g * st_.wealth) / BASIC.total_shares == 4.0


def test_zero_feedback_clearance():
    rs = np.random.default_rng(0)
    p, st_, g, Z = random_state(10, rs)
    st_.gamma[:] = 0.0
    S = clearance_price_fixed_point(g, st_, p, Z)
    expected = np.sum(g * st_.wealth * (1 + p.dt * p.interest_rate)) / p.total_shares
    assert S == pytest.approx(expected, rel=1e-12)


def test_single_agent_clearance():
    p = LlsParams(num_agents=1, total_shares=100, memory_spec=[3])
    st_ = LlsState(np.array([900.0]), np.array([0.6]), 5.0, 5.0, 0.3, ReturnHistory([0.1]))
    g = np.array([0.6])
    a = clearance_price_explicit(g, st_, p, 0.3)
    b = clearance_price_fixed_point(g, st_, p, 0.3)
    assert a == pytest.approx(b, rel=1e-10)


@pytest.mark.parametrize("N", [1, 10, 100])
def test_explicit_price_matches_oracle_on_random_states(N):
    rs = np.random.default_rng(N)
    for _ in range(20):
        p, st_, g, Z = random_state(N, rs)
        try:
            a = clearance_price_explicit(g, st_, p, Z)
        except lls.ClearanceError:
            continue
        b = clearance_price_fixed_point(g, st_, p, Z)
        assert a == pytest.approx(b, rel=1e-8)
        assert abs(clearance_residual(b, g, st_, p, Z)) < 1e-9 * p.total_shares


def test_one_step_golden_value():
    # frozen output of one noiseless step from the basic initial values, seed 1
    p = BASIC.with_(gamma_noise_sd=0.0)
    rng = make_stream(1)
    s = lls_step(initial_state(p, rng), p, rng, check_clearance=True)
    assert s.price == pytest.approx(638.5499999999996, rel=1e-13)
    assert s.dividend == pytest.approx(0.21, rel=1e-15)
    assert np.allclose(s.wealth, 64499.99999999997, rtol=1e-13, atol=0)
    assert np.all(s.gamma == 0.99)
    assert s.history.values()[-1] == pytest.approx(158.6899999999999, rel=1e-13)
    assert s.step == 1 and s.time == 1.0


def test_identical_agents_stay_identical():
    p = BASIC.with_(gamma_noise_sd=0.0)
    run = lls_run(p, 200, make_stream(2))
    st_ = run.final_state
    assert np.ptp(st_.wealth) == 0.0 and np.ptp(st_.gamma) == 0.0


def test_permuting_agents_keeps_the_price_path():
    mem = [3, 8, 15, 20, 5, 11]
    p = LlsParams(num_agents=6, total_shares=600, memory_spec=mem, gamma_noise_sd=0.0)
    perm = [4, 1, 5, 0, 3, 2]
    q = p.with_(memory_spec=[mem[i] for i in perm])
    a = lls_run(p, 300, make_stream(6))
    b = lls_run(q, 300, make_stream(6))
    assert np.allclose(a.price, b.price, rtol=1e-12, atol=0)


def test_step_run_and_ensemble_agree():
    p = BASIC.with_(num_agents=4, total_shares=400, memory_spec=[3, 15, 9, 15])
    rng = make_stream(11)
    s = initial_state(p, rng)
    prices = [s.price]
    for _ in range(50):
        s = lls_step(s, p, rng)
        prices.append(s.price)
    run = lls_run(p, 50, make_stream(11))
    ens = lls_ensemble(p, 50, [make_stream(10), make_stream(11)])
    assert np.array_equal(run.price, prices)
    assert np.array_equal(ens.price[:, 1], prices)


def test_invariants_over_a_run():
    p = BASIC.with_(dt=0.1)
    run = lls_run(p, 500, make_stream(3), keep_gammas=True, check_clearance=True)
    assert run.max_clearance_residual <= 1e-8
    st_ = run.final_state
    assert np.all((st_.gamma >= 0.01) & (st_.gamma <= 0.99)) and np.all(st_.wealth > 0)
    g = run.gamma_star
    assert np.array_equal(run.boundary_frac[1:], np.mean((g == 0.01) | (g == 0.99), axis=1))
    n_held = np.sum(st_.gamma * st_.wealth) / st_.price
    assert abs(n_held - p.total_shares) <= 1e-8 * p.total_shares


@pytest.mark.slow
def test_three_group_preset_runs_full_length():
    p = LlsParams(num_agents=99, interest_rate=0.0001, dividend_lo=0.00015, dividend_hi=0.00015,
                  total_shares=9900, memory_spec=[10] * 33 + [141] * 33 + [256] * 33,
                  initial_dividend=0.004)
    run = lls_run(p, 20000, make_stream(1))
    assert np.all(np.isfinite(run.price)) and run.max_clearance_residual <= 1e-8
