"""Levy-Levy-Solomon market with an explicit time step.

Agents split wealth between a bond paying ``r`` and a stock paying a
multiplicative dividend.  Each step every agent maximises the average log
utility of next-step wealth over its remembered return history, the choice
is blurred by Gaussian noise and clamped to ``[0.01, 0.99]``, and the price
is set so that total stock demand equals the fixed number of shares.

Per-agent quantities live in numpy arrays on :class:`LlsState`; the return
history is shared by the whole market, agents differ only in how far back
they look.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numba
import numpy as np
from scipy.optimize import brentq

from .rng import InvalidParameterError, RngStream

GAMMA_MIN = 0.01
GAMMA_MAX = 0.99


class ClearanceError(RuntimeError):
    pass


class BankruptcyError(RuntimeError):
    pass


class DegenerateHistoryError(RuntimeError):
    pass


class MemoryMode(enum.Enum):
    SCALED = "scaled"   # memory is a time span; steps = floor(m / dt)
    FIXED = "fixed"     # memory is a number of steps


@dataclass(frozen=True)
class LlsParams:
    """Model constants and initial values (defaults: the basic 100-agent setting)."""

    num_agents: int = 100
    interest_rate: float = 0.04
    dividend_lo: float = 0.05
    dividend_hi: float = 0.05
    gamma_noise_sd: float = 0.2
    dt: float = 1.0
    total_shares: int = 10000
    memory_mode: MemoryMode = MemoryMode.SCALED
    memory_spec: Union[float, Sequence[float]] = 15
    history_init_mean: float = 0.0415
    history_init_sd: float = 0.003
    initial_wealth: float = 1000.0
    initial_gamma: float = 0.4
    initial_price: float = 4.0
    initial_dividend: float = 0.2

    def __post_init__(self):
        if isinstance(self.memory_mode, str):
            object.__setattr__(self, "memory_mode", MemoryMode(self.memory_mode))
        if not np.isscalar(self.memory_spec):
            object.__setattr__(self, "memory_spec", tuple(float(m) for m in self.memory_spec))
        if self.num_agents < 1:
            raise InvalidParameterError("num_agents must be >= 1")
        if not 0 < self.interest_rate < 1:
            raise InvalidParameterError("interest_rate must lie in (0, 1)")
        if self.dividend_lo > self.dividend_hi:
            raise InvalidParameterError("dividend_lo must not exceed dividend_hi")
        if self.gamma_noise_sd < 0:
            raise InvalidParameterError("gamma_noise_sd must be >= 0")
        if self.dt <= 0:
            raise InvalidParameterError("dt must be > 0")
        if self.total_shares < 1:
            raise InvalidParameterError("total_shares must be >= 1")
        if self.initial_price <= 0 or self.initial_dividend <= 0 or self.initial_wealth <= 0:
            raise InvalidParameterError("initial price, dividend and wealth must be > 0")
        mem = self.memories()
        if len(mem) != self.num_agents:
            raise InvalidParameterError(
                f"memory_spec has {len(mem)} entries for {self.num_agents} agents")
        if self.memory_mode is MemoryMode.FIXED and np.any(mem < 1):
            raise InvalidParameterError("fixed memory must be >= 1 step")
        if np.any(mem <= 0):
            raise InvalidParameterError("memory must be > 0")

    def memories(self) -> np.ndarray:
        if np.isscalar(self.memory_spec):
            return np.full(self.num_agents, float(self.memory_spec))
        return np.asarray(self.memory_spec, dtype=float)

    def effective_memories(self) -> np.ndarray:
        return np.array([effective_memory(m, self.dt, self.memory_mode)
                         for m in self.memories()], dtype=int)

    def with_(self, **overrides) -> "LlsParams":
        return replace(self, **overrides)


class ReturnHistory:
    """Fixed-capacity ring buffer; ``latest(m)`` is a contiguous view."""

    def __init__(self, values: Sequence[float]):
        values = np.asarray(values, dtype=float)
        self.capacity = len(values)
        if self.capacity == 0:
            raise InvalidParameterError("history must be non-empty")
        self._buf = np.concatenate([values, values])
        self._pos = 0   # index of the oldest entry

    def push(self, x: float):
        self._buf[self._pos] = x
        self._buf[self._pos + self.capacity] = x
        self._pos = (self._pos + 1) % self.capacity

    def latest(self, m: int) -> np.ndarray:
        end = self._pos + self.capacity
        return self._buf[end - m:end]

    def values(self) -> np.ndarray:
        return self.latest(self.capacity).copy()

    def copy(self) -> "ReturnHistory":
        other = ReturnHistory.__new__(ReturnHistory)
        other.capacity = self.capacity
        other._buf = self._buf.copy()
        other._pos = self._pos
        return other


@dataclass
class LlsState:
    wealth: np.ndarray
    gamma: np.ndarray            # holdings fraction chosen last step
    price: float
    prev_price: float
    dividend: float
    history: ReturnHistory
    time: float = 0.0
    step: int = 0
    gamma_star: Optional[np.ndarray] = None   # optimiser output of the last step

    def copy(self) -> "LlsState":
        return LlsState(self.wealth.copy(), self.gamma.copy(), self.price, self.prev_price,
                        self.dividend, self.history.copy(), self.time, self.step,
                        None if self.gamma_star is None else self.gamma_star.copy())


# ---------------------------------------------------------------------------
# building blocks

def dividend_step(Z: float, params: LlsParams, rng: RngStream) -> float:
    z = rng.uniform(params.dividend_lo, params.dividend_hi)
    new = (1.0 + params.dt * z) * Z
    if new <= 0:
        raise InvalidParameterError(f"dividend became non-positive ({new})")
    return new


def step_return(S_new: float, S_old: float, Z_new: float, dt: float) -> float:
    """Stock return rate over one step, relative to the starting price."""
    return ((S_new - S_old) / dt + Z_new) / S_old


def wealth_step(w, gamma_prev, r, x, dt):
    w_new = w + dt * ((1.0 - gamma_prev) * r + gamma_prev * x) * w
    if np.any(np.asarray(w_new) <= 0):
        raise BankruptcyError(f"non-positive wealth after update: min {np.min(w_new)}")
    return w_new


def _foc_terms(history, r, dt):
    c = dt * (np.asarray(history, dtype=float) - r)
    return c, 1.0 + dt * r


def _check_history(c, b):
    # the denominator c*g + b is affine in g, so the endpoints decide
    worst = min(np.min(c * GAMMA_MIN + b), np.min(c * GAMMA_MAX + b))
    if worst <= 1e-12:
        raise DegenerateHistoryError(
            f"log utility undefined on [{GAMMA_MIN}, {GAMMA_MAX}] (min denominator {worst})")


def foc_value(gamma: float, history, r: float, dt: float) -> float:
    """Derivative in ``gamma`` of the mean log utility over ``history``."""
    c, b = _foc_terms(history, r, dt)
    _check_history(c, b)
    return float(np.mean(c / (c * gamma + b)))


def expected_log_utility(gamma, history, r, dt):
    """Mean log growth factor of wealth; used by tests as an independent target."""
    c, b = _foc_terms(history, r, dt)
    g = np.atleast_1d(np.asarray(gamma, dtype=float))
    out = np.log(np.outer(g, c) + b).mean(axis=1)
    return out if np.ndim(gamma) else float(out[0])


# reassociation lets the reductions vectorise; results stay deterministic
_JIT = dict(cache=True, fastmath={"reassoc", "nsz", "arcp"})


@numba.njit(**_JIT)
def _foc_row(h, g, r, dt, b):
    """Mean of q = c / (c g + b), of -q^2, and max |q|, with c = dt (x - r)."""
    m = h.shape[0]
    f = 0.0
    fp = 0.0
    qmax = 0.0
    for j in range(m):
        c = dt * (h[j] - r)
        q = c / (c * g + b)
        f += q
        fp -= q * q
        qmax = max(qmax, abs(q))
    return f / m, fp / m, qmax


@numba.njit(**_JIT)
def _optimal_row(h, r, dt, tol, start):
    """Returns (gamma, status) with status 0 ok, 1 flat, 2 degenerate, 3 failed."""
    m = h.shape[0]
    b = 1.0 + dt * r
    cmin = np.inf
    cmax = -np.inf
    for j in range(m):
        c = dt * (h[j] - r)
        cmin = min(cmin, c)
        cmax = max(cmax, c)
    # c*g + b is affine in c with g > 0, so the smallest c is the worst case
    if min(cmin * GAMMA_MIN + b, cmin * GAMMA_MAX + b) <= 1e-12:
        return np.nan, 2
    if max(abs(cmin), abs(cmax)) <= 1e-14:
        return np.nan, 1
    lo, hi = GAMMA_MIN, GAMMA_MAX
    lo_known = hi_known = False   # sign of f proven at the bracket ends
    if GAMMA_MIN < start < GAMMA_MAX:
        g = start
    else:
        f_lo = _foc_row(h, GAMMA_MIN, r, dt, b)[0]
        if f_lo <= 0:
            return GAMMA_MIN, 0
        f_hi = _foc_row(h, GAMMA_MAX, r, dt, b)[0]
        if f_hi >= 0:
            return GAMMA_MAX, 0
        lo_known = hi_known = True
        g = lo + (hi - lo) * f_lo / (f_lo - f_hi)     # regula falsi start
    for _ in range(200):
        f, fp, qmax = _foc_row(h, g, r, dt, b)
        if f == 0:
            return g, 0
        if f > 0:
            lo, lo_known = g, True
        else:
            hi, hi_known = g, True
        nxt = g - f / fp
        if not nxt > lo:
            if not lo_known:
                if _foc_row(h, GAMMA_MIN, r, dt, b)[0] <= 0:
                    return GAMMA_MIN, 0
                lo_known = True
            nxt = 0.5 * (lo + hi)
        elif not nxt < hi:
            if not hi_known:
                if _foc_row(h, GAMMA_MAX, r, dt, b)[0] >= 0:
                    return GAMMA_MAX, 0
                hi_known = True
            nxt = 0.5 * (lo + hi)
        # |f''| / (2 |f'|) <= max |q|, so a Newton step of size d leaves an
        # error of about qmax * d^2
        d = abs(nxt - g)
        if d <= 1e-13 or qmax * d * d <= 1e-13 or hi - lo <= 1e-14:
            return nxt, 0
        g = nxt
    if lo_known and hi_known and hi - lo <= tol:
        return 0.5 * (lo + hi), 0
    return np.nan, 3


@numba.njit(cache=True)
def _optimal_rows_kernel(H, r, dt, tol, starts, out, status):
    for i in range(H.shape[0]):
        out[i], status[i] = _optimal_row(H[i], r, dt, tol, starts[i])


def _optimal_rows(H: np.ndarray, r: float, dt: float, tol: float = 1e-10, starts=None):
    """Row-wise maximiser of the mean log utility over return histories ``H``.

    Returns the optimal fractions, a mask of flat rows (total indifference,
    the caller keeps the previous fraction) and a mask of degenerate rows
    (log utility undefined somewhere on the feasible range).

    Interior roots use Newton's method on the first-order condition,
    safeguarded by a sign bracket: a step leaving the bracket is replaced by
    bisection.  The condition is smooth and strictly decreasing, so the
    iteration ends in quadratic convergence far below ``tol``; it stops once
    the predicted error of the last step is below 1e-13.  ``starts``
    (e.g. last step's optima) seed the iteration; an endpoint is then only
    evaluated when an iterate tries to cross it, which is where the boundary
    answer would apply.
    """
    R = H.shape[0]
    out = np.empty(R)
    status = np.empty(R, dtype=np.int8)
    if starts is None:
        starts = np.full(R, np.nan)
    _optimal_rows_kernel(H, float(r), float(dt), float(tol),
                         np.asarray(starts, dtype=float), out, status)
    if (status == 3).any():
        raise RuntimeError("optimal fraction iteration did not converge")
    return out, status == 1, status == 2


def optimal_gamma(history, r: float, dt: float, prev_gamma: float, tol: float = 1e-10) -> float:
    """Maximiser of the mean log utility on ``[0.01, 0.99]``.

    Boundary answers come straight from the sign of the first-order
    condition at the ends; otherwise the unique interior root is located to
    better than ``tol``.  A flat history keeps ``prev_gamma``.
    """
    c, b = _foc_terms(history, r, dt)
    if c.size == 0:
        raise InvalidParameterError("empty return history")
    _check_history(c, b)
    g, flat, _ = _optimal_rows(np.asarray(history, dtype=float)[None, :], r, dt, tol)
    return float(prev_gamma) if flat[0] else float(g[0])


def clamp_gamma(x):
    return np.minimum(GAMMA_MAX, np.maximum(GAMMA_MIN, x))


def noisy_gamma(gamma_star, params: LlsParams, rng: RngStream):
    """Clamped Gaussian perturbation of the optimal fraction(s)."""
    size = None if np.ndim(gamma_star) == 0 else np.shape(gamma_star)
    eps = rng.normal(0.0, params.gamma_noise_sd, size=size)
    out = clamp_gamma(gamma_star + eps)
    return float(out) if size is None else out


def effective_memory(m: float, dt: float, mode: MemoryMode) -> int:
    mode = MemoryMode(mode)
    if mode is MemoryMode.SCALED:
        # the small offset absorbs representation error, e.g. 15 / 0.1
        return max(1, int(math.floor(m / dt + 1e-9)))
    return int(m)


def init_history(params: LlsParams, rng: RngStream) -> np.ndarray:
    length = int(params.effective_memories().max())
    return np.asarray(rng.normal(params.history_init_mean, params.history_init_sd,
                                 size=length), dtype=float)


# ---------------------------------------------------------------------------
# market clearance

def _clearance_inputs(gamma_new, state: LlsState):
    return (np.asarray(gamma_new, dtype=float), state.gamma, state.wealth, state.price)


def clearance_price_explicit(gamma_new, state: LlsState, params: LlsParams,
                             dividend: float) -> float:
    """Closed-form clearing price.

    Wealth after the step is affine in the new price, so the clearance
    condition ``n * S = sum(gamma_new * w_new(S))`` is linear in ``S``.
    ``dividend`` is the dividend paid over the step (Z at the new time).
    """
    g, g_old, w_old, S_old = _clearance_inputs(gamma_new, state)
    n, dt, r = params.total_shares, params.dt, params.interest_rate
    carried = w_old * (1.0 + dt * (g_old * (dividend - S_old / dt) / S_old
                                   + (1.0 - g_old) * r))
    denom = 1.0 - np.sum(g * g_old * w_old / S_old) / n
    if denom <= 0:
        raise ClearanceError(f"clearance denominator {denom} is not positive")
    S = np.sum(g * carried) / n / denom
    if not S > 0:
        raise ClearanceError(f"clearance price {S} is not positive")
    return float(S)


def clearance_residual(S: float, gamma_new, state: LlsState, params: LlsParams,
                       dividend: float) -> float:
    """``n - sum(gamma_new * w_new(S)) / S`` with wealth updated at price ``S``."""
    g, g_old, w_old, S_old = _clearance_inputs(gamma_new, state)
    x = step_return(S, S_old, dividend, params.dt)
    w_new = w_old + params.dt * ((1.0 - g_old) * params.interest_rate + g_old * x) * w_old
    return params.total_shares - float(np.sum(g * w_new)) / S


def clearance_price_fixed_point(gamma_new, state: LlsState, params: LlsParams,
                                dividend: float, rtol: float = 1e-13) -> float:
    """Root of the clearance residual, bracketed outward from the old price."""
    def resid(S):
        return clearance_residual(S, gamma_new, state, params, dividend)

    lo = hi = state.price
    for _ in range(400):
        if resid(lo) < 0:
            break
        lo *= 0.5
    else:
        raise ClearanceError("no lower bracket for the clearing price")
    for _ in range(400):
        if resid(hi) > 0:
            break
        hi *= 2.0
    else:
        raise ClearanceError("no upper bracket for the clearing price")
    return brentq(resid, lo, hi, xtol=1e-300, rtol=rtol, maxiter=500)


# ---------------------------------------------------------------------------
# dynamics

def initial_state(params: LlsParams, rng: RngStream) -> LlsState:
    N = params.num_agents
    return LlsState(wealth=np.full(N, float(params.initial_wealth)),
                    gamma=np.full(N, float(params.initial_gamma)),
                    price=float(params.initial_price),
                    prev_price=float(params.initial_price),
                    dividend=float(params.initial_dividend),
                    history=ReturnHistory(init_history(params, rng)))


class _Market:
    """Several independent markets advanced in lockstep.

    Row ``i`` is one run driven by its own stream.  Per step each stream
    draws the agents' fraction noise and then the dividend growth, exactly
    as a single run does, so a run's numbers do not depend on its company.
    A run that fails is frozen and its error recorded.
    """

    def __init__(self, states: Sequence[LlsState], params: LlsParams,
                 streams: Sequence[RngStream]):
        self.params = params
        self.streams = list(streams)
        self.W = np.array([s.wealth for s in states], dtype=float)
        self.G = np.array([s.gamma for s in states], dtype=float)
        self.S = np.array([s.price for s in states], dtype=float)
        self.S_prev = np.array([s.prev_price for s in states], dtype=float)
        self.Z = np.array([s.dividend for s in states], dtype=float)
        self.step_index = self._start = states[0].step
        self.t0 = states[0].time
        hist = np.array([s.history.values() for s in states])
        self.cap = hist.shape[1]
        self.buf = np.concatenate([hist, hist], axis=1)
        self.pos = 0
        # warm starts carry over so stepping one at a time matches a full run
        self.gstar = np.array([np.full(len(st.gamma), np.nan) if st.gamma_star is None
                               else st.gamma_star for st in states], dtype=float)
        mem = params.effective_memories()
        if mem.max() > self.cap:
            raise InvalidParameterError("return history shorter than the longest memory")
        self.groups = [(int(m), np.flatnonzero(mem == m)) for m in np.unique(mem)]
        R = len(states)
        self.alive = np.ones(R, dtype=bool)
        self.failed_step = np.full(R, -1)
        self.errors: list = [None] * R
        self.max_residual = np.zeros(R)

    def _fail(self, rows, exc_type, msg):
        for i in rows:
            if self.alive[i]:
                self.alive[i] = False
                self.failed_step[i] = self.step_index
                self.errors[i] = exc_type(f"step {self.step_index}: {msg}")

    def advance(self, check_oracle: bool = False):
        p = self.params
        self.step_index += 1
        rows = np.flatnonzero(self.alive)
        if rows.size == 0:
            return
        full = rows.size == len(self.alive)
        take = (lambda a: a) if full else (lambda a: a[rows])
        W, G, S_old, Z_old = take(self.W), take(self.G), take(self.S), take(self.Z)
        r, dt, n = p.interest_rate, p.dt, p.total_shares
        end = self.pos + self.cap

        # 1. optimal fractions, one optimisation per distinct lookback
        gstar = np.empty_like(G)
        bad = np.zeros(rows.size, dtype=bool)
        for m, agents in self.groups:
            H = self.buf[:, end - m:end] if full else self.buf[rows, end - m:end]
            g, flat, degenerate = _optimal_rows(H, r, dt, starts=take(self.gstar)[:, agents[0]])
            gstar[:, agents] = g[:, None]
            if flat.any():
                gstar[np.ix_(flat, agents)] = G[np.ix_(flat, agents)]
            bad |= degenerate
        if bad.any():
            self._fail(rows[bad], DegenerateHistoryError,
                       "log utility undefined on the feasible fraction range")

        # 2.-3. noise, then dividend growth, stream by stream
        N = p.num_agents
        eps = np.empty_like(G)
        u = np.empty(rows.size)
        for k, i in enumerate(rows):
            stream = self.streams[i]
            eps[k] = stream.normal(0.0, 1.0, size=N)
            u[k] = stream.uniform()
        if p.gamma_noise_sd == 0:
            G_new = gstar.copy()
        else:
            G_new = clamp_gamma(gstar + p.gamma_noise_sd * eps)
        if p.dividend_lo == p.dividend_hi:
            growth = np.full(rows.size, p.dividend_lo)
        else:
            growth = p.dividend_lo + (p.dividend_hi - p.dividend_lo) * u
        Z_new = (1.0 + dt * growth) * Z_old
        bad = Z_new <= 0
        if bad.any():
            self._fail(rows[bad], InvalidParameterError, "dividend became non-positive")

        # 4. clearing price (closed form, linear in the new price)
        carried = W * (1.0 + dt * (G * (Z_new[:, None] - S_old[:, None] / dt) / S_old[:, None]
                                   + (1.0 - G) * r))
        denom = 1.0 - np.sum(G_new * G * W, axis=1) / S_old / n
        with np.errstate(divide="ignore", invalid="ignore"):
            S_new = np.sum(G_new * carried, axis=1) / n / denom
        bad = ~(denom > 0) | ~(S_new > 0)
        if bad.any():
            self._fail(rows[bad], ClearanceError, "no positive clearing price")

        # 5.-6. step return and wealth with last step's fractions
        x = ((S_new - S_old) / dt + Z_new) / S_old
        W_new = W + dt * ((1.0 - G) * r + G * x[:, None]) * W
        bad = ~np.all(W_new > 0, axis=1)
        if bad.any():
            self._fail(rows[bad], BankruptcyError, "non-positive wealth after update")

        with np.errstate(divide="ignore", invalid="ignore"):
            resid = np.abs(n - np.sum(G_new * W_new, axis=1) / S_new) / n
        if check_oracle:
            for k, i in enumerate(rows):
                if not self.alive[i]:
                    continue
                state = self.state(i)
                S_ref = clearance_price_fixed_point(G_new[k], state, p, Z_new[k])
                if abs(S_new[k] - S_ref) > 1e-8 * S_ref:
                    self._fail([i], ClearanceError,
                               f"closed-form price {S_new[k]!r} disagrees with oracle {S_ref!r}")

        ok = self.alive[rows]
        keep = rows[ok]
        self.W[keep] = W_new[ok]
        self.G[keep] = G_new[ok]
        self.gstar[keep] = gstar[ok]
        self.S_prev[keep] = S_old[ok]
        self.S[keep] = S_new[ok]
        self.Z[keep] = Z_new[ok]
        self.max_residual[keep] = np.maximum(self.max_residual[keep], resid[ok])
        # every run shares the ring position; frozen runs just stop changing
        col = self.pos
        self.buf[keep, col] = x[ok]
        self.buf[keep, col + self.cap] = x[ok]
        self.pos = (self.pos + 1) % self.cap

    def state(self, i: int) -> LlsState:
        hist = ReturnHistory(self.buf[i, self.pos:self.pos + self.cap])
        gs = self.gstar[i].copy()
        return LlsState(wealth=self.W[i].copy(), gamma=self.G[i].copy(),
                        price=float(self.S[i]), prev_price=float(self.S_prev[i]),
                        dividend=float(self.Z[i]), history=hist,
                        time=self.t0 + (self.step_index - self._start) * self.params.dt,
                        step=self.step_index, gamma_star=None if np.isnan(gs).all() else gs)


def lls_step(state: LlsState, params: LlsParams, rng: RngStream,
             check_clearance: bool = False) -> LlsState:
    """Advance the market by one step and return the new state.

    Order: optimise, add noise, draw the dividend, clear the market, form
    the step return, update wealth with last step's fractions, record the
    return.  With ``check_clearance`` the closed-form price is compared with
    the root-finding oracle.  Failures raise with the step index attached.
    """
    market = _Market([state], params, [rng])
    market.advance(check_oracle=check_clearance)
    if market.errors[0] is not None:
        raise market.errors[0]
    return market.state(0)


@dataclass
class LlsEnsemble:
    """Per-step records of a set of runs; rows are steps, columns are runs.

    Row 0 is the initial state.  Entries after a run's failure are NaN.
    """

    t: np.ndarray
    price: np.ndarray
    dividend: np.ndarray
    mean_wealth: np.ndarray
    boundary_frac: np.ndarray          # share of optimal fractions at 0.01/0.99
    failed_step: np.ndarray            # -1 for runs that completed
    errors: list
    max_clearance_residual: np.ndarray  # relative to the share count
    gamma_star: Optional[np.ndarray] = None   # (steps, runs, agents)
    final_states: list = field(default_factory=list, repr=False)

    @property
    def completed(self) -> np.ndarray:
        return self.failed_step < 0


def lls_ensemble(params: LlsParams, steps: int, streams: Sequence[RngStream],
                 keep_gammas: bool = False, check_clearance: bool = False,
                 states: Optional[Sequence[LlsState]] = None) -> LlsEnsemble:
    """Run one market per stream for ``steps`` steps."""
    if steps < 0:
        raise InvalidParameterError("steps must be >= 0")
    streams = list(streams)
    if not streams:
        raise InvalidParameterError("at least one stream is required")
    if states is None:
        states = [initial_state(params, s) for s in streams]
    market = _Market(states, params, streams)
    R, N = len(streams), params.num_agents
    t = states[0].time + params.dt * np.arange(steps + 1)
    S = np.full((steps + 1, R), np.nan)
    Z = np.full((steps + 1, R), np.nan)
    mw = np.full((steps + 1, R), np.nan)
    bf = np.full((steps + 1, R), np.nan)
    gammas = np.full((steps, R, N), np.nan) if keep_gammas else None
    S[0], Z[0], mw[0] = market.S, market.Z, market.W.mean(axis=1)
    for k in range(1, steps + 1):
        market.advance(check_oracle=check_clearance)
        a = market.alive
        S[k, a], Z[k, a], mw[k, a] = market.S[a], market.Z[a], market.W[a].mean(axis=1)
        g = market.gstar[a]
        bf[k, a] = np.mean((g == GAMMA_MIN) | (g == GAMMA_MAX), axis=1)
        if keep_gammas:
            gammas[k - 1, a] = g
    finals = [market.state(i) for i in range(R)]
    return LlsEnsemble(t, S, Z, mw, bf, market.failed_step.copy(), list(market.errors),
                       market.max_residual.copy(), gammas, finals)


@dataclass
class LlsRun:
    """Per-step records of one LLS run (row 0 is the initial state)."""

    t: np.ndarray
    price: np.ndarray
    dividend: np.ndarray
    mean_wealth: np.ndarray
    boundary_frac: np.ndarray
    gamma_star: Optional[np.ndarray] = None
    max_clearance_residual: float = 0.0
    final_state: Optional[LlsState] = field(default=None, repr=False)


def lls_run(params: LlsParams, steps: int, rng: RngStream, check_clearance: bool = False,
            keep_gammas: bool = False, state: Optional[LlsState] = None) -> LlsRun:
    """Single run; errors propagate with the failing step index."""
    ens = lls_ensemble(params, steps, [rng], keep_gammas=keep_gammas,
                       check_clearance=check_clearance,
                       states=None if state is None else [state])
    if ens.errors[0] is not None:
        raise ens.errors[0]
    return LlsRun(ens.t, ens.price[:, 0], ens.dividend[:, 0], ens.mean_wealth[:, 0],
                  ens.boundary_frac[:, 0],
                  None if ens.gamma_star is None else ens.gamma_star[:, 0],
                  float(ens.max_clearance_residual[0]), ens.final_states[0])


def boundary_share(gammas) -> float:
    g = np.asarray(gammas)
    return float(np.mean((g == GAMMA_MIN) | (g == GAMMA_MAX)))
