import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abcem import fw
from abcem.fw import (FwParams, FwState, NumericOverflowError, SchemeKind, excess_demand,
                      fractions_step_explicit, fractions_step_semi_implicit, fw_continuous_coefficients,
                      fw_ensemble, fw_run, fw_step, price_step, switching_index,
                      switching_probabilities)
from abcem.rng import InvalidParameterError, make_stream

P = FwParams()


def test_switching_index_examples():
    assert switching_index(FwState(1.0, n_f=0.5, n_c=0.5), P) == pytest.approx(-0.161, abs=1e-15)
    assert switching_index(FwState(1.0, n_f=1.0, n_c=0.0), P) == pytest.approx(1.139, abs=1e-14)
    assert switching_index(FwState(1.1, n_f=0.5, n_c=0.5), P) == pytest.approx(-0.036, abs=1e-14)


def test_switching_probabilities():
    assert switching_probabilities(0.0, P) == (0.05, 0.05)
    cf, fc = switching_probabilities(10.0, P.with_(clamp_probabilities=True))
    assert cf == 1.0
    assert fc == pytest.approx(0.05 * math.exp(-10), rel=1e-15)
    with pytest.raises(NumericOverflowError):
        switching_probabilities(1000.0, P)
    # the clamped variant saturates instead of failing
    assert switching_probabilities(1000.0, P.with_(clamp_probabilities=True))[0] == 1.0


@given(st.floats(-30, 30))
def test_probability_product_is_nu_squared(a):
    cf, fc = switching_probabilities(a, P)
    assert cf * fc == pytest.approx(P.nu ** 2, rel=1e-12)


def test_excess_demand_examples():
    assert excess_demand(FwState(1.0), P) == 0.0
    assert excess_demand(FwState(0.5, n_f=1.0, n_c=0.0), P) == pytest.approx(0.09, abs=1e-15)
    s = FwState(1.02, prev_log_price=1.0, n_f=0.0, n_c=1.0)
    assert excess_demand(s, P.with_(fundamental_price=1.02)) == pytest.approx(0.046, abs=1e-14)


def test_price_step_examples():
    assert price_step(FwState(1.0), P, 0.0) == 1.0
    assert price_step(FwState(0.5, n_f=1.0, n_c=0.0), P, 0.0) == pytest.approx(0.5009, abs=1e-15)
    noise = price_step(FwState(1.0, n_f=1.0, n_c=0.0), P, 1.0) - 1.0
    assert noise == pytest.approx(0.0079, abs=1e-15)


def _fixed_rates(pi, dt=1.0):
    # a = 0 makes both probabilities equal to nu
    return FwParams(nu=pi, alpha_p=1e-300, alpha_h=1e-300, alpha_m=1e-300, dt=dt)


def test_explicit_fraction_examples():
    params = _fixed_rates(0.05)
    assert fractions_step_explicit(FwState(1.0, n_f=0.5, n_c=0.5), params) == (0.5, 0.5)
    nf, nc = fractions_step_explicit(FwState(1.0, n_f=0.4, n_c=0.6), params)
    assert nf == pytest.approx(0.41, abs=1e-15) and nc == pytest.approx(0.59, abs=1e-15)
    # dt * pi_cf > 1 with everyone a chartist overshoots the simplex
    nf, nc = fractions_step_explicit(FwState(1.0, n_f=0.0, n_c=1.0), _fixed_rates(0.6, dt=2.0))
    assert nf > 1 and nc < 0 and nf + nc == 1.0


def test_semi_implicit_examples():
    params = _fixed_rates(0.05)
    assert fractions_step_semi_implicit(FwState(1.0, n_f=0.5, n_c=0.5), params) == (0.5, 0.5)
    nf, nc = fractions_step_semi_implicit(FwState(1.0, n_f=0.4, n_c=0.6), params)
    assert nf == pytest.approx(0.45 / 1.1, abs=1e-15)
    assert nc == pytest.approx(0.65 / 1.1, abs=1e-15)
    # rates 0.1 / 0.05 for large dt approach the equilibrium 0.1 / (0.1 + 0.05)
    nf, _ = fw._semi_implicit_fractions(0.3, 0.7, 0.1, 0.05, 1e9)
    assert nf == pytest.approx(2 / 3, abs=1e-8)


@settings(max_examples=200)
@given(nf=st.floats(0, 1), cf=st.floats(1e-6, 50), fc=st.floats(1e-6, 50), dt=st.floats(1e-3, 10))
def test_semi_implicit_solves_the_implicit_relations(nf, cf, fc, dt):
    nc = 1.0 - nf
    f1, c1 = fw._semi_implicit_fractions(nf, nc, cf, fc, dt)
    assert 0 <= f1 <= 1 and 0 <= c1 <= 1
    assert abs(f1 - (nf + dt * (c1 * cf - f1 * fc))) <= 1e-14 * max(1.0, dt * (cf + fc))
    assert abs(c1 - (nc + dt * (f1 * fc - c1 * cf))) <= 1e-14 * max(1.0, dt * (cf + fc))
    assert abs(f1 + c1 - 1) <= 1e-12


def test_sum_preservation_over_many_random_steps():
    rs = np.random.default_rng(3)
    n = 10**6
    nf = rs.uniform(0, 1, n)
    nc = 1 - nf
    cf, fc, dt = rs.uniform(0, 5, n), rs.uniform(0, 5, n), rs.uniform(0, 10, n)
    for step in (fw._explicit_fractions, fw._semi_implicit_fractions):
        f1, c1 = step(nf, nc, cf, fc, dt)
        assert np.max(np.abs((f1 + c1) - (nf + nc))) <= 1e-12 * np.max(1 + dt * (cf + fc))


def test_equilibrium_is_a_fixed_point():
    params = _fixed_rates(0.05)
    s = FwState(1.0, n_f=0.5, n_c=0.5)
    for scheme in SchemeKind:
        nxt = fw._advance(s, params, scheme, 0.0)
        assert (nxt.log_price, nxt.n_f, nxt.n_c) == (1.0, 0.5, 0.5)
        assert nxt.prev_log_price == 1.0 and nxt.time == 1.0


def scalar_fw_oracle(params, steps, etas, semi):
    """Plain-float transcription of the model used as an independent check."""
    p, p_prev, nf, nc = 1.0, 1.0, 0.5, 0.5
    out = [(p, nf, nc)]
    for k in range(steps):
        a = params.alpha_p + params.alpha_h * (nf - nc) + params.alpha_m * (p - 1.0) ** 2
        cf, fc = params.nu * math.exp(a), params.nu * math.exp(-a)
        d = nf * params.phi * (1.0 - p) + nc * params.chi * (p - p_prev) / params.dt
        p_new = (p + params.mu * params.dt * d
                 + math.sqrt(params.dt) * params.mu * (nf * params.sigma_f + nc * params.sigma_c) * etas[k])
        if semi:
            den = 1 + params.dt * (cf + fc)
            nf, nc = (nf + params.dt * cf) / den, (nc + params.dt * fc) / den
        else:
            flow = params.dt * (nc * cf - nf * fc)
            nf, nc = nf + flow, nc - flow
        p_prev, p = p, p_new
        out.append((p, nf, nc))
    return np.array(out)


@pytest.mark.parametrize("scheme", list(SchemeKind))
def test_fw_run_matches_scalar_oracle(scheme):
    params = P.with_(dt=0.5)
    tr = fw_run(FwState(), params, scheme, 3000, make_stream(5, 2))
    etas = make_stream(5, 2).normal(size=3000)
    ref = scalar_fw_oracle(params, 3000, etas, scheme is SchemeKind.SEMI_IMPLICIT)
    assert np.allclose(np.c_[tr.P, tr.n_f, tr.n_c], ref, rtol=0, atol=1e-12)
    assert np.allclose(tr.t, 0.5 * np.arange(3001))


def test_fw_run_zero_steps_and_step_api():
    tr = fw_run(FwState(), P, SchemeKind.EXPLICIT_EULER, 0, make_stream(1))
    assert len(tr) == 1 and not tr.blew_up
    with pytest.raises(InvalidParameterError):
        fw_run(FwState(), P, SchemeKind.EXPLICIT_EULER, -1, make_stream(1))
    s = fw_step(FwState(), P, SchemeKind.EXPLICIT_EULER, make_stream(9))
    tr = fw_run(FwState(), P, SchemeKind.EXPLICIT_EULER, 1, make_stream(9))
    assert s.log_price == tr.P[1] and s.n_f == tr.n_f[1]


def test_run_and_ensemble_agree_bitwise():
    params = P.with_(sigma_f=1.15)
    streams = [make_stream(4, k) for k in range(6)]
    out = fw_ensemble(FwState(), params, SchemeKind.EXPLICIT_EULER, 2000, streams, chunk=700)
    for k in range(6):
        tr = fw_run(FwState(), params, SchemeKind.EXPLICIT_EULER, 2000, make_stream(4, k))
        if not tr.blew_up and np.all(np.abs(tr.P) <= 1e6):
            assert out.final_price[k] == tr.P[-1]


def test_explicit_blowup_keeps_the_sum_until_the_flag():
    params = P.with_(sigma_f=1.15)
    streams = [make_stream(1, k) for k in range(100)]
    out = fw_ensemble(FwState(), params, SchemeKind.EXPLICIT_EULER, 20000, streams)
    assert out.blown_up.any()
    assert np.all(out.max_sum_error[out.blown_up] <= 1e-9)
    k = int(np.flatnonzero(out.first_nonfinite_step >= 0)[0])
    tr = fw_run(FwState(), params, SchemeKind.EXPLICIT_EULER, 20000, make_stream(1, k))
    assert tr.blew_up and tr.first_bad_step == out.first_nonfinite_step[k]
    assert len(tr) == tr.first_bad_step
    assert np.all(np.isfinite(tr.P))


def test_schemes_agree_at_first_order_for_small_steps():
    T = 10.0
    gaps = []
    for dt in (0.1, 0.01, 0.001):
        params = P.with_(dt=dt)
        n = int(round(T / dt))
        ends = []
        for scheme in SchemeKind:
            s = FwState(1.2, n_f=0.3, n_c=0.7)
            for _ in range(n):
                s = fw._advance(s, params, scheme, 0.0)
            ends.append(np.array([s.log_price, s.n_f]))
        gaps.append(np.max(np.abs(ends[0] - ends[1])))
    for coarse, fine in zip(gaps, gaps[1:]):
        assert 5 <= coarse / fine <= 20


def test_continuous_coefficients():
    drift, diff = fw_continuous_coefficients(1.0, 0.3, P)
    assert drift == 0.0
    drift, diff = fw_continuous_coefficients(0.5, 1.0, P)
    assert drift == pytest.approx(0.01 * 0.18 * 0.5, rel=1e-15)
    assert diff == pytest.approx(0.01 * 0.79, rel=1e-15)
    drift, diff = fw_continuous_coefficients(0.0, 0.0, P)
    # (mu phi / 2) / (1 - mu chi / 2) and mu (sigma_f + sigma_c) / 2 / (1 - mu chi / 2)
    assert drift == pytest.approx(9.104704097116844e-4, rel=1e-13)
    assert diff == pytest.approx(0.013606474456246839, rel=1e-13)
    with pytest.raises(InvalidParameterError):
        fw_continuous_coefficients(0.0, -1.0, P.with_(mu=1.0))


def test_param_validation():
    with pytest.raises(InvalidParameterError):
        FwParams(phi=0.0)
    assert FwParams(alpha_p=-3.0).alpha_p == -3.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32), dt=st.floats(0.01, 10), nu=st.floats(0.01, 5),
       alpha_p=st.floats(-5, 5), alpha_h=st.floats(0.01, 5), alpha_m=st.floats(0.01, 5))
def test_semi_implicit_stays_in_the_simplex(seed, dt, nu, alpha_p, alpha_h, alpha_m):
    params = P.with_(dt=dt, nu=nu, alpha_p=alpha_p, alpha_h=alpha_h, alpha_m=alpha_m)
    tr = fw_run(FwState(), params, SchemeKind.SEMI_IMPLICIT, 500, make_stream(seed))
    assert np.all((tr.n_f >= 0) & (tr.n_f <= 1) & (tr.n_c >= 0) & (tr.n_c <= 1))
    assert np.max(np.abs(tr.n_f + tr.n_c - 1)) <= 1e-9
