"""Franke-Westerhoff model with a time step.

Log price ``P`` follows an Euler-Maruyama step driven by the excess demand
of fundamentalists and chartists; the group fractions ``n_f``, ``n_c``
switch according to the transition probability approach.  Two fraction
updates are provided: the explicit Euler step, which may leave ``[0, 1]``
and blow up, and the semi-implicit step, which never does.

All arithmetic is written so that the state and parameter fields may be
numpy arrays: the same code path advances one run, an ensemble of seeds,
or a batch of parameter sets.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

from .rng import InvalidParameterError, RngStream


class NumericOverflowError(ArithmeticError):
    pass


class SchemeKind(enum.Enum):
    EXPLICIT_EULER = "explicit"
    SEMI_IMPLICIT = "semi_implicit"


@dataclass(frozen=True)
class FwParams:
    """Model constants.  Defaults are the standard calibration."""

    phi: float = 0.18
    chi: float = 2.3
    alpha_p: float = -0.161
    alpha_h: float = 1.3
    alpha_m: float = 12.5
    sigma_f: float = 0.79
    sigma_c: float = 1.9
    nu: float = 0.05
    fundamental_price: float = 1.0
    mu: float = 0.01
    dt: float = 1.0
    clamp_probabilities: bool = False

    def __post_init__(self):
        positive = ("phi", "chi", "alpha_h", "alpha_m", "sigma_f", "sigma_c",
                    "nu", "mu", "dt")
        for name in positive:
            value = np.asarray(getattr(self, name), dtype=float)
            if not np.all(value > 0):
                raise InvalidParameterError(f"{name} must be > 0, got {getattr(self, name)}")

    def with_(self, **overrides) -> "FwParams":
        return replace(self, **overrides)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class FwState:
    log_price: float = 1.0
    prev_log_price: Optional[float] = None
    n_f: float = 0.5
    n_c: float = 0.5
    time: float = 0.0

    def __post_init__(self):
        # zero lagged return at t = 0
        if self.prev_log_price is None:
            self.prev_log_price = self.log_price


@dataclass
class Trajectory:
    """Time series of one FW run.

    ``first_bad_step`` is the index of the first state that contained a
    non-finite value; that state is not stored.
    """

    t: np.ndarray
    P: np.ndarray
    n_f: np.ndarray
    n_c: np.ndarray
    first_bad_step: Optional[int] = None

    def __len__(self):
        return len(self.t)

    @property
    def blew_up(self) -> bool:
        return self.first_bad_step is not None


# ---------------------------------------------------------------------------
# model terms

def switching_index(state: FwState, params: FwParams):
    """Attractiveness of the fundamentalist strategy at the current state."""
    dev = state.log_price - params.fundamental_price
    return (params.alpha_p + params.alpha_h * (state.n_f - state.n_c)
            + params.alpha_m * dev * dev)


def _probabilities(a, nu, clamp):
    with np.errstate(over="ignore"):
        pi_cf = nu * np.exp(a)
        pi_fc = nu * np.exp(-a)
    if clamp:
        pi_cf = np.minimum(1.0, pi_cf)
        pi_fc = np.minimum(1.0, pi_fc)
    return pi_cf, pi_fc


def switching_probabilities(a, params: FwParams):
    """Return ``(pi_cf, pi_fc)``; capped at 1 when ``params.clamp_probabilities``.

    Unclamped probabilities that overflow raise :class:`NumericOverflowError`.
    """
    pi_cf, pi_fc = _probabilities(a, params.nu, params.clamp_probabilities)
    if not (np.all(np.isfinite(pi_cf)) and np.all(np.isfinite(pi_fc))):
        raise NumericOverflowError(f"switching probability overflow for a={a}")
    if np.ndim(pi_cf) == 0:
        return float(pi_cf), float(pi_fc)
    return pi_cf, pi_fc


def excess_demand(state: FwState, params: FwParams):
    lagged_return = (state.log_price - state.prev_log_price) / params.dt
    return (state.n_f * params.phi * (params.fundamental_price - state.log_price)
            + state.n_c * params.chi * lagged_return)


def price_step(state: FwState, params: FwParams, eta):
    """Euler-Maruyama price update with an externally supplied N(0,1) draw."""
    noise = params.mu * (state.n_f * params.sigma_f + state.n_c * params.sigma_c)
    return (state.log_price + params.mu * params.dt * excess_demand(state, params)
            + np.sqrt(params.dt) * noise * eta)


def _explicit_fractions(n_f, n_c, pi_cf, pi_fc, dt):
    flow = dt * (n_c * pi_cf - n_f * pi_fc)
    return n_f + flow, n_c - flow


def _semi_implicit_fractions(n_f, n_c, pi_cf, pi_fc, dt):
    p = dt * pi_cf
    q = dt * pi_fc
    denom = 1.0 + p + q
    new_f = (n_f + p) / denom
    new_c = (n_c + q) / denom
    if np.any(np.isinf(p)) or np.any(np.isinf(q)):
        # limits of the closed form when one rate overflows
        new_f = np.where(np.isinf(p), 1.0, np.where(np.isinf(q), 0.0, new_f))
        new_c = np.where(np.isinf(p), 0.0, np.where(np.isinf(q), 1.0, new_c))
    return new_f, new_c


def _rates(state, params):
    a = switching_index(state, params)
    return _probabilities(a, params.nu, params.clamp_probabilities)


def fractions_step_explicit(state: FwState, params: FwParams):
    pi_cf, pi_fc = _rates(state, params)
    return _explicit_fractions(state.n_f, state.n_c, pi_cf, pi_fc, params.dt)


def fractions_step_semi_implicit(state: FwState, params: FwParams):
    """Closed form of the linearly implicit update; stays in [0, 1] for any dt."""
    pi_cf, pi_fc = _rates(state, params)
    return _semi_implicit_fractions(state.n_f, state.n_c, pi_cf, pi_fc, params.dt)


_FRACTION_STEPS = {
    SchemeKind.EXPLICIT_EULER: _explicit_fractions,
    SchemeKind.SEMI_IMPLICIT: _semi_implicit_fractions,
}


def _advance(state: FwState, params: FwParams, scheme: SchemeKind, eta) -> FwState:
    # rates and price both see the pre-step state; fractions move second
    pi_cf, pi_fc = _rates(state, params)
    new_price = price_step(state, params, eta)
    n_f, n_c = _FRACTION_STEPS[scheme](state.n_f, state.n_c, pi_cf, pi_fc, params.dt)
    return FwState(log_price=new_price, prev_log_price=state.log_price,
                   n_f=n_f, n_c=n_c, time=state.time + params.dt)


def fw_step(state: FwState, params: FwParams, scheme: SchemeKind, rng: RngStream) -> FwState:
    with np.errstate(over="ignore", invalid="ignore"):
        return _advance(state, params, scheme, rng.normal())


# ---------------------------------------------------------------------------
# runs

def _as_batch(initial: FwState, runs: int) -> FwState:
    shape = (runs,)
    return FwState(log_price=np.full(shape, float(initial.log_price)),
                   prev_log_price=np.full(shape, float(initial.prev_log_price)),
                   n_f=np.full(shape, float(initial.n_f)),
                   n_c=np.full(shape, float(initial.n_c)),
                   time=np.full(shape, float(initial.time)))


def fw_run(initial: FwState, params: FwParams, scheme: SchemeKind, steps: int,
           rng: RngStream) -> Trajectory:
    """Integrate ``steps`` steps, stopping at the first non-finite state."""
    if steps < 0:
        raise InvalidParameterError("steps must be >= 0")
    t = np.empty(steps + 1)
    P = np.empty(steps + 1)
    nf = np.empty(steps + 1)
    nc = np.empty(steps + 1)
    # length-1 arrays keep the arithmetic identical to fw_ensemble
    state = _as_batch(initial, 1)
    t[0], P[0], nf[0], nc[0] = initial.time, initial.log_price, initial.n_f, initial.n_c
    etas = rng.normal(size=steps) if steps else np.empty(0)
    first_bad = None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, steps + 1):
            state = _advance(state, params, scheme, etas[k - 1:k])
            p, f, c = state.log_price[0], state.n_f[0], state.n_c[0]
            if not (math.isfinite(p) and math.isfinite(f) and math.isfinite(c)):
                first_bad = k
                break
            t[k], P[k], nf[k], nc[k] = state.time[0], p, f, c
    end = steps + 1 if first_bad is None else first_bad
    return Trajectory(t[:end].copy(), P[:end].copy(), nf[:end].copy(), nc[:end].copy(),
                      first_bad_step=first_bad)


@dataclass
class EnsembleOutcome:
    """Per-run summary of a batch of FW runs advanced in lockstep.

    Statistics of the fractions cover the states strictly before each run's
    flag step (all states when the run never flags).
    """

    steps: int
    first_nonfinite_step: np.ndarray
    first_flag_step: np.ndarray
    first_violation_step: np.ndarray
    min_fraction: np.ndarray
    max_fraction: np.ndarray
    max_sum_error: np.ndarray
    final_price: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def blown_up(self) -> np.ndarray:
        return self.first_flag_step >= 0


def fw_ensemble(initial: FwState, params: FwParams, scheme: SchemeKind, steps: int,
                streams: Sequence[RngStream], price_bound: float = 1e6,
                fraction_bound: float = 10.0, chunk: int = 8192,
                violation_tol: float = 0.0) -> EnsembleOutcome:
    """Advance one run per stream in lockstep and summarise each run.

    ``params`` fields may be arrays with one entry per stream.  A run is
    flagged at the first state that is non-finite, has ``|P| > price_bound``
    or ``n_f`` outside ``[-fraction_bound, 1 + fraction_bound]``.  A bound
    violation is any ``n_f`` or ``n_c`` outside ``[-violation_tol,
    1 + violation_tol]``.  Step ``k`` refers to the state after ``k``
    updates; -1 means never.
    """
    runs = len(streams)
    shape = (runs,)
    state = _as_batch(initial, runs)
    nonfinite = np.full(shape, -1)
    flag = np.full(shape, -1)
    violation = np.full(shape, -1)
    lo = np.minimum(state.n_f, state.n_c)
    hi = np.maximum(state.n_f, state.n_c)
    sum_err = np.abs(state.n_f + state.n_c - 1.0)

    def check(k, st, alive):
        finite = np.isfinite(st.log_price) & np.isfinite(st.n_f) & np.isfinite(st.n_c)
        with np.errstate(invalid="ignore"):
            bad = (~finite | (np.abs(st.log_price) > price_bound)
                   | (st.n_f < -fraction_bound) | (st.n_f > 1 + fraction_bound))
            viol = ((np.minimum(st.n_f, st.n_c) < -violation_tol)
                    | (np.maximum(st.n_f, st.n_c) > 1 + violation_tol) | ~finite)
        nonfinite[(nonfinite < 0) & ~finite] = k
        violation[(violation < 0) & viol] = k
        newly = alive & bad
        flag[newly] = k
        return alive & ~bad

    alive = check(0, state, np.ones(shape, dtype=bool))
    done = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while done < steps:
            block = min(chunk, steps - done)
            etas = np.stack([s.normal(size=block) for s in streams], axis=1)
            for j in range(block):
                state = _advance(state, params, scheme, etas[j])
                k = done + j + 1
                alive = check(k, state, alive)
                np.minimum(lo, np.where(alive, np.minimum(state.n_f, state.n_c), lo), out=lo)
                np.maximum(hi, np.where(alive, np.maximum(state.n_f, state.n_c), hi), out=hi)
                np.maximum(sum_err,
                           np.where(alive, np.abs(state.n_f + state.n_c - 1.0), sum_err),
                           out=sum_err)
            done += block
    return EnsembleOutcome(steps=steps, first_nonfinite_step=nonfinite,
                           first_flag_step=flag, first_violation_step=violation,
                           min_fraction=lo, max_fraction=hi, max_sum_error=sum_err,
                           final_price=np.asarray(state.log_price, dtype=float))


# ---------------------------------------------------------------------------
# explicit continuous form

def fw_continuous_coefficients(P, n, params: FwParams):
    """Drift and diffusion of the price SDE with ``n = n_f - n_c`` given."""
    share_f = (1.0 + n) / 2.0
    share_c = (1.0 - n) / 2.0
    denom = 1.0 - params.mu * share_c * params.chi
    if np.any(np.asarray(denom) <= 0):
        raise InvalidParameterError(
            f"1 - mu*chi*(1-n)/2 = {denom} must be positive for the explicit SDE")
    drift = params.mu * share_f * params.phi * (params.fundamental_price - P) / denom
    diffusion = params.mu * (share_f * params.sigma_f + share_c * params.sigma_c) / denom
    return drift, diffusion
