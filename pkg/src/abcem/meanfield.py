"""Mean-field descriptions of the two markets.

LLS side: with constant fractions the agent density splits into one
transport equation per fraction value ``gamma_g``,

    d/dt f_g + d/dw ((r + gamma_g Z(t) / A(t)) w f_g) = 0,
    A(t) = sum_g omega_g gamma_g (1 - gamma_g) int w f_g dw,

solved here with first-order conservative upwind finite volumes.  The
finite particle system it approximates is integrated with RK4, and the two
are compared in the Wasserstein-1 metric.

FW side: with the strategy split frozen the log price is an
Ornstein-Uhlenbeck process whose stationary law is Gaussian.  It is
computed three ways: in closed form, by relaxing the Fokker-Planck equation
on a grid, and by long Euler-Maruyama runs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.signal import lfilter
from scipy.special import ndtr

from .fw import FwParams, fw_continuous_coefficients
from .rng import InvalidParameterError, RngStream

TimeFunction = Union[float, Callable[[float], float]]

CFL = 0.5
BOUNDARY_BUDGET = 1e-6


class SingularCoefficientError(ArithmeticError):
    """The nonlocal coefficient A(t) (or its particle analogue) is not positive."""


class InvalidStepError(ValueError):
    """Time step violates the CFL bound."""


class BoundaryLeakError(RuntimeError):
    """Mass reaching the right edge of the grid exceeded the budget."""


class ConvergenceError(RuntimeError):
    pass


def _as_function(Z: TimeFunction) -> Callable[[float], float]:
    if callable(Z):
        return Z
    value = float(Z)
    return lambda t: value


# ---------------------------------------------------------------------------
# grids and densities

@dataclass(frozen=True)
class Grid1D:
    """Uniform cell grid.  Wealth grids are positive; ``signed`` lifts that."""

    w_min: float
    w_max: float
    num_cells: int
    signed: bool = False

    def __post_init__(self):
        if not self.w_min < self.w_max:
            raise InvalidParameterError("grid needs w_min < w_max")
        if not self.signed and self.w_min <= 0:
            raise InvalidParameterError("wealth grid needs w_min > 0")
        if self.num_cells < 16:
            raise InvalidParameterError("grid needs at least 16 cells")

    @property
    def dx(self) -> float:
        return (self.w_max - self.w_min) / self.num_cells

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.w_min, self.w_max, self.num_cells + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    def integrate(self, values) -> np.ndarray:
        """Midpoint rule along the last axis."""
        return np.asarray(values).sum(axis=-1) * self.dx

    def normalize(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        mass = self.integrate(values)
        if np.any(mass <= 0):
            raise InvalidParameterError("cannot normalize a density with no mass")
        return values / np.expand_dims(mass, -1)


@dataclass
class GroupDensity:
    """Agent density split into groups that share one fraction value."""

    gammas: np.ndarray
    weights: np.ndarray
    values: np.ndarray           # (groups, cells)
    grid: Grid1D
    time: float = 0.0
    leaked: np.ndarray = None    # mass that has flowed into the last cell

    def __post_init__(self):
        self.gammas = np.atleast_1d(np.asarray(self.gammas, dtype=float))
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        G = len(self.gammas)
        if self.values.shape != (G, self.grid.num_cells) or len(self.weights) != G:
            raise InvalidParameterError("group arrays do not match each other or the grid")
        if np.any((self.gammas <= 0) | (self.gammas >= 1)):
            raise InvalidParameterError("group fractions must lie in (0, 1)")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1) > 1e-12:
            raise InvalidParameterError("group weights must be non-negative and sum to 1")
        if np.any(self.values < 0):
            raise InvalidParameterError("densities must be non-negative")
        if np.any(np.abs(self.masses() - 1) > 1e-8):
            raise InvalidParameterError("each group density must integrate to 1")
        if self.leaked is None:
            self.leaked = np.zeros(G)

    def masses(self) -> np.ndarray:
        return self.grid.integrate(self.values)

    def means(self) -> np.ndarray:
        return self.grid.integrate(self.values * self.grid.centers)

    def to_csv(self, target=None) -> str:
        """Rows ``w,group_id,f`` with 17 significant digits."""
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["w", "group_id", "f"])
        w = self.grid.centers
        for g, row in enumerate(self.values):
            for wi, fi in zip(w, row):
                out.writerow([f"{wi:.17g}", g, f"{fi:.17g}"])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text


def group_density(gammas, weights, profiles, grid: Grid1D, time: float = 0.0) -> GroupDensity:
    """Build a density from unnormalized per-group profiles on ``grid``."""
    return GroupDensity(gammas, weights, grid.normalize(np.atleast_2d(profiles)), grid, time)


def lognormal_profile(grid: Grid1D, B: float, ln_var: float = 0.5) -> np.ndarray:
    """Log-normal profile ``(1/w) exp(-(ln w - B)^2 / (2 ln_var))``, normalized.

    ``ln_var = 1/2`` is the ansatz ``(c/w) exp(-(ln w - B)^2)``.
    """
    w = grid.centers
    return grid.normalize(np.exp(-(np.log(w) - B) ** 2 / (2 * ln_var)) / w)


# ---------------------------------------------------------------------------
# LLS mean-field transport

def mf_coefficient(density: GroupDensity) -> float:
    A = float(np.sum(density.weights * density.gammas * (1 - density.gammas)
                     * density.means()))
    if not A > 0:
        raise SingularCoefficientError(f"nonlocal coefficient A = {A} is not positive")
    return A


def _growth_rates(density: GroupDensity, Z: float, r: float) -> np.ndarray:
    A = mf_coefficient(density)
    return r + density.gammas * Z / A


def mf_stable_dt(density: GroupDensity, Z_of_t: TimeFunction, r: float) -> float:
    """Largest step allowed by the CFL number 0.5 at the current state."""
    c = _growth_rates(density, _as_function(Z_of_t)(density.time), r)
    vmax = np.max(np.abs(c)) * max(abs(density.grid.w_min), abs(density.grid.w_max))
    return math.inf if vmax == 0 else CFL * density.grid.dx / vmax


def _upwind_update(f: np.ndarray, v_faces: np.ndarray, dt: float, dx: float) -> np.ndarray:
    """Conservative upwind step with zero flux through both outer faces.

    ``v_faces`` has shape (..., cells + 1); only interior faces move mass.
    """
    left, right = f[..., :-1], f[..., 1:]
    v = v_faces[..., 1:-1]
    flux = np.where(v > 0, v * left, v * right)
    out = f.copy()
    out[..., :-1] -= dt / dx * flux
    out[..., 1:] += dt / dx * flux
    return out


def mf_transport_step(density: GroupDensity, Z_of_t: TimeFunction, r: float,
                      dt: float) -> GroupDensity:
    """One explicit upwind step of the coupled transport equations.

    A(t) is evaluated once from the pre-step density and shared by all
    groups.  Both outer faces carry zero flux, so mass is conserved exactly;
    the flux into the last cell is tallied and may not exceed
    ``BOUNDARY_BUDGET``.
    """
    grid = density.grid
    c = _growth_rates(density, _as_function(Z_of_t)(density.time), r)
    edges = grid.edges
    vmax = np.max(np.abs(c)) * max(abs(edges[0]), abs(edges[-1]))
    if dt <= 0 or dt * vmax > CFL * grid.dx * (1 + 1e-12):
        raise InvalidStepError(f"dt = {dt} violates the CFL bound {CFL * grid.dx / vmax}")
    v = c[:, None] * edges[None, :]
    values = _upwind_update(density.values, v, dt, grid.dx)
    # mass entering the last cell is what the unbounded problem would carry away
    leaked = density.leaked + dt * np.maximum(v[:, -2], 0) * density.values[:, -2]
    if np.any(leaked > BOUNDARY_BUDGET):
        raise BoundaryLeakError(
            f"mass at w_max exceeded {BOUNDARY_BUDGET} (grid too short for the horizon)")
    out = GroupDensity.__new__(GroupDensity)
    out.gammas, out.weights, out.grid = density.gammas, density.weights, grid
    out.values, out.time, out.leaked = values, density.time + dt, leaked
    return out


@dataclass
class TransportResult:
    density: GroupDensity
    times: np.ndarray
    A: np.ndarray                # coefficient used at each step
    log_growth: np.ndarray       # per group: sum of dt * (r + gamma Z / A)


def mf_solve(density: GroupDensity, Z_of_t: TimeFunction, r: float, T: float,
             dt: Optional[float] = None) -> TransportResult:
    """Advance to time ``density.time + T`` with CFL-limited steps.

    Without ``dt`` the step is re-chosen each time from the CFL bound and
    the last one is shortened to land on ``T`` exactly.
    """
    Z = _as_function(Z_of_t)
    t_end = density.time + T
    times, As, growth = [density.time], [], np.zeros(len(density.gammas))
    while t_end - density.time > 1e-12 * max(1.0, abs(t_end)):
        h = dt if dt is not None else 0.999 * mf_stable_dt(density, Z, r)
        h = min(h, t_end - density.time)
        A = mf_coefficient(density)
        growth += h * (r + density.gammas * Z(density.time) / A)
        As.append(A)
        density = mf_transport_step(density, Z, r, h)
        times.append(density.time)
    return TransportResult(density, np.array(times), np.array(As), growth)


def toy_mf_step(grid: Grid1D, f: np.ndarray, dt: float) -> np.ndarray:
    """One upwind step of ``d/dt f + d/dw ((m(t) - w) f) = 0`` with m the mean."""
    f = np.asarray(f, dtype=float)
    mass = grid.integrate(f)
    if mass == 0:
        return f.copy()
    m = grid.integrate(f * grid.centers) / mass
    edges = grid.edges
    v = m - edges
    if dt <= 0 or dt * np.max(np.abs(v)) > CFL * grid.dx * (1 + 1e-12):
        raise InvalidStepError(f"dt = {dt} violates the CFL bound")
    return _upwind_update(f, v, dt, grid.dx)


# ---------------------------------------------------------------------------
# particle system

@dataclass
class ParticleRun:
    t: np.ndarray
    wealth: np.ndarray           # (len(t), N) or just the final row

    @property
    def final(self) -> np.ndarray:
        return self.wealth[-1]


def _particle_rhs(t, w, gammas, r, Z, gg):
    A = np.mean(gg * w)
    if not A > 1e-300:
        raise SingularCoefficientError(f"particle coefficient {A} is not positive")
    return r * w + gammas * w * (Z(t) / A)


def simplified_particle_run(w0, gammas, r: float, Z_of_t: TimeFunction, T: float,
                            dt: float, keep_path: bool = True) -> ParticleRun:
    """Classical RK4 for ``w_i' = r w_i + gamma_i w_i Z / mean((1 - gamma) gamma w)``."""
    w = np.array(w0, dtype=float)
    gammas = np.broadcast_to(np.asarray(gammas, dtype=float), w.shape)
    if np.any(w <= 0):
        raise InvalidParameterError("initial wealth must be positive")
    if np.any((gammas <= 0) | (gammas >= 1)):
        raise InvalidParameterError("fractions must lie in (0, 1)")
    if dt <= 0 or T < 0:
        raise InvalidParameterError("need dt > 0 and T >= 0")
    Z = _as_function(Z_of_t)
    gg = gammas * (1 - gammas)
    steps = int(math.ceil(T / dt - 1e-9))
    h = T / steps if steps else 0.0
    t = np.arange(steps + 1) * h
    path = np.empty((steps + 1, w.size)) if keep_path else None
    if keep_path:
        path[0] = w
    for k in range(steps):
        tk = t[k]
        k1 = _particle_rhs(tk, w, gammas, r, Z, gg)
        k2 = _particle_rhs(tk + h / 2, w + h / 2 * k1, gammas, r, Z, gg)
        k3 = _particle_rhs(tk + h / 2, w + h / 2 * k2, gammas, r, Z, gg)
        k4 = _particle_rhs(tk + h, w + h * k3, gammas, r, Z, gg)
        w = w + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if keep_path:
            path[k + 1] = w
    return ParticleRun(t, path if keep_path else w[None, :])


# ---------------------------------------------------------------------------
# Wasserstein-1 in one dimension

def _abs_linear_integral(a, b, L):
    """Exact integral of |a + (b - a) s / L| for s in [0, L]."""
    a, b = np.asarray(a), np.asarray(b)
    same = a * b >= 0
    denom = np.where(same, 1.0, np.abs(a) + np.abs(b))
    return np.where(same, 0.5 * L * (np.abs(a) + np.abs(b)), 0.5 * L * (a * a + b * b) / denom)


def w1_sorted(samples_a, samples_b) -> float:
    """W1 between two empirical measures.

    Equal sample counts use the sorted-sample formula; otherwise the two
    step CDFs are integrated against each other exactly.
    """
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise InvalidParameterError("W1 needs non-empty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    x = np.concatenate([a, b])
    x.sort(kind="mergesort")
    Fa = np.searchsorted(a, x[:-1], side="right") / a.size
    Fb = np.searchsorted(b, x[:-1], side="right") / b.size
    return float(np.sum(np.abs(Fa - Fb) * np.diff(x)))


def density_cdf(grid: Grid1D, f) -> Callable[[np.ndarray], np.ndarray]:
    """Piecewise-linear CDF of a cell-constant density (0 left, 1 right)."""
    cum = np.concatenate([[0.0], np.cumsum(f) * grid.dx])
    edges = grid.edges
    return lambda x: np.interp(x, edges, cum, left=0.0, right=cum[-1])


def w1_empirical_vs_density(samples, grid: Grid1D, f) -> float:
    """Exact ``int |F_emp - F_dens| dw`` for a cell-constant density."""
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    f = np.asarray(f, dtype=float)
    if s.size == 0:
        raise InvalidParameterError("W1 needs non-empty samples")
    if f.shape != (grid.num_cells,) or np.any(f < 0):
        raise InvalidParameterError("density must be non-negative and match the grid")
    if abs(grid.integrate(f) - 1) > 1e-8:
        raise InvalidParameterError("density is not normalized")
    x = np.union1d(s, grid.edges)
    F = density_cdf(grid, f)(x)
    Femp = np.searchsorted(s, x[:-1], side="right") / s.size
    return float(np.sum(_abs_linear_integral(F[:-1] - Femp, F[1:] - Femp, np.diff(x))))


def sample_from_density(grid: Grid1D, f, size: int, rng: RngStream) -> np.ndarray:
    """Inverse-CDF draws from a cell-constant density."""
    f = np.asarray(f, dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(f) * grid.dx])
    cum /= cum[-1]
    u = rng.uniform(size=size)
    # flat stretches of the CDF map to their left end
    keep = np.concatenate([[True], np.diff(cum) > 0])
    return np.interp(u, cum[keep], grid.edges[keep])


def density_quantiles(grid: Grid1D, f, count: int) -> np.ndarray:
    """Samples placed at the mid-quantiles ``(k + 1/2) / count``."""
    f = np.asarray(f, dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(f) * grid.dx])
    cum /= cum[-1]
    keep = np.concatenate([[True], np.diff(cum) > 0])
    return np.interp((np.arange(count) + 0.5) / count, cum[keep], grid.edges[keep])


# ---------------------------------------------------------------------------
# particle-versus-PDE comparison

@dataclass(frozen=True)
class GroupSpec:
    """Fraction atoms, their population weights and the market constants."""

    gammas: tuple = (0.3, 0.5, 0.7)
    weights: tuple = (1 / 3, 1 / 3, 1 / 3)
    r: float = 0.04
    Z: float = 0.05
    B0: float = 0.0              # initial log-wealth centre of every group
    ln_var: float = 0.5
    grid: Grid1D = field(default_factory=lambda: Grid1D(1e-3, 60.0, 4096))

    def initial_density(self) -> GroupDensity:
        prof = lognormal_profile(self.grid, self.B0, self.ln_var)
        return GroupDensity(self.gammas, self.weights,
                            np.tile(prof, (len(self.gammas), 1)), self.grid)

    def group_sizes(self, N: int) -> np.ndarray:
        """Largest-remainder split of N agents by weight."""
        raw = np.asarray(self.weights) * N
        sizes = np.floor(raw).astype(int)
        order = np.argsort(-(raw - sizes), kind="stable")
        sizes[order[:N - sizes.sum()]] += 1
        return sizes


@dataclass
class ConvergenceRow:
    N: int
    w1_initial: float
    w1_final: float


def _weighted_w1(spec: GroupSpec, sizes, wealth, density: GroupDensity) -> float:
    total, start = 0.0, 0
    for g, n_g in enumerate(sizes):
        if n_g:
            total += spec.weights[g] * w1_empirical_vs_density(
                wealth[start:start + n_g], density.grid, density.values[g])
        start += n_g
    return total


def convergence_rate_table(spec: GroupSpec, T: float, N_list: Sequence[int],
                           rng: RngStream, particle_dt: float = 1e-2,
                           reference: Optional[TransportResult] = None) -> list:
    """W1 between N-agent particle systems and the PDE, at t = 0 and t = T.

    Initial wealths are drawn per group from the initial density; the W1
    is the weight-averaged per-group distance.  ``reference`` lets callers
    reuse one PDE solve across replicates.
    """
    if list(N_list) != sorted(N_list):
        raise InvalidParameterError("N_list must be ascending")
    f0 = spec.initial_density()
    if reference is None:
        reference = mf_solve(f0, spec.Z, spec.r, T)
    rows = []
    for N in N_list:
        sizes = spec.group_sizes(N)
        w0 = np.concatenate([sample_from_density(f0.grid, f0.values[g], n, rng)
                             for g, n in enumerate(sizes)])
        gam = np.repeat(np.asarray(spec.gammas), sizes)
        run = simplified_particle_run(w0, gam, spec.r, spec.Z, T, particle_dt, keep_path=False)
        rows.append(ConvergenceRow(int(N), _weighted_w1(spec, sizes, w0, f0),
                                   _weighted_w1(spec, sizes, run.final, reference.density)))
    return rows


# ---------------------------------------------------------------------------
# log-normal ansatz

@dataclass
class LognormalFit:
    residual: float              # largest per-group L1 distance to the fitted log-normal
    residuals: np.ndarray
    shift: np.ndarray            # change of the mean of ln w per group
    predicted_shift: np.ndarray  # int (r + gamma Z / A) dt along the solve
    ln_var_ratio: np.ndarray     # var(ln w) at T over var(ln w) at 0
    density: GroupDensity = field(repr=False)


def _ln_moments(density: GroupDensity):
    lw = np.log(density.grid.centers)
    m1 = density.grid.integrate(density.values * lw)
    m2 = density.grid.integrate(density.values * (lw - m1[:, None]) ** 2)
    return m1, m2


def lognormal_ansatz_check(spec: GroupSpec, T: float, Z_of_t: Optional[TimeFunction] = None,
                           dt: Optional[float] = None) -> LognormalFit:
    """Evolve log-normal initial data and compare with moment-matched log-normals."""
    Z = spec.Z if Z_of_t is None else Z_of_t
    f0 = spec.initial_density()
    m0, v0 = _ln_moments(f0)
    res = mf_solve(f0, Z, spec.r, T, dt)
    fT = res.density
    m1, v1 = _ln_moments(fT)
    grid = fT.grid
    l1 = np.array([grid.integrate(np.abs(fT.values[g] - lognormal_profile(grid, m1[g], v1[g])))
                   for g in range(len(spec.gammas))])
    return LognormalFit(float(l1.max()), l1, m1 - m0, res.log_growth, v1 / v0, fT)


# ---------------------------------------------------------------------------
# frozen-fraction FW: Ornstein-Uhlenbeck log price

@dataclass(frozen=True)
class OuSpec:
    """``dP = drift_rate (mean - P) dt + diffusion dW``."""

    drift_rate: float
    mean: float
    diffusion: float

    def __post_init__(self):
        if not (self.drift_rate > 0 and self.diffusion > 0):
            raise InvalidParameterError("OU drift rate and diffusion must be positive")

    @property
    def variance(self) -> float:
        return self.diffusion ** 2 / (2 * self.drift_rate)

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    @property
    def printed_center(self) -> float:
        """Centre of the exponent ``-(drift/diffusion^2)(p^2 - p F)``: F / 2."""
        return self.mean / 2

    def grid(self, num_cells: int = 400, width: float = 8.0) -> Grid1D:
        return Grid1D(self.mean - width * self.sd, self.mean + width * self.sd,
                      num_cells, signed=True)


def ou_spec_from_fw(params: FwParams, n: float = 0.0) -> OuSpec:
    """Frozen-fraction coefficients; the drift is linear in P with zero at F."""
    F = params.fundamental_price
    drift, diffusion = fw_continuous_coefficients(F - 1.0, n, params)
    return OuSpec(drift_rate=float(drift), mean=F, diffusion=float(diffusion))


def ou_stationary_gaussian(spec: OuSpec):
    """(mean, variance) of the stationary law."""
    return spec.mean, spec.variance


def ou_gaussian_cells(spec: OuSpec, grid: Grid1D, center: Optional[float] = None) -> np.ndarray:
    """Cell averages of the stationary Gaussian (optionally re-centred)."""
    c = spec.mean if center is None else center
    cdf = ndtr((grid.edges - c) / spec.sd)
    return np.diff(cdf) / grid.dx / (cdf[-1] - cdf[0])


def _bernoulli(z):
    """z / (e^z - 1) with the removable singularity at 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    zs = np.where(small, 1.0, z)
    return np.where(small, 1 - z / 2, zs / np.expm1(zs))


@dataclass
class SteadyState:
    values: np.ndarray
    grid: Grid1D
    steps: int
    max_mass_error: float


def ou_steady_state_numeric(spec: OuSpec, grid: Optional[Grid1D] = None, initial=None,
                            tol: float = 1e-10, max_steps: int = 2_000_000,
                            flux: str = "fitted") -> SteadyState:
    """Relax the Fokker-Planck equation to its stationary density.

    Explicit steps at 0.9 of the diffusive stability bound, zero flux at
    both ends, stopped when the L1 change of one step falls below ``tol``.

    ``flux="fitted"`` uses the exponentially fitted (Scharfetter-Gummel)
    face flux: upwinding weighted by the local Peclet number, which keeps
    the discrete stationary state on the exact Gibbs profile.  ``"upwind"``
    is plain donor-cell advection plus centred diffusion.
    """
    if grid is None:
        grid = spec.grid()
    dx, D = grid.dx, 0.5 * spec.diffusion ** 2
    faces = grid.edges[1:-1]
    v = spec.drift_rate * (spec.mean - faces)
    if flux == "fitted":
        pe = v * dx / D
        wl, wr = D / dx * _bernoulli(-pe), D / dx * _bernoulli(pe)
    elif flux == "upwind":
        wl = np.maximum(v, 0) + D / dx
        wr = -np.minimum(v, 0) + D / dx
    else:
        raise InvalidParameterError(f"unknown flux {flux!r}")
    # face flux = wl * f_left - wr * f_right; the worst cell loses at rate
    # (wl + wr) / dx through its two faces
    rate = np.max(np.concatenate([wl, [0.0]]) + np.concatenate([[0.0], wr])) / dx
    dt = 0.9 / rate
    f = np.full(grid.num_cells, 1.0 / (grid.w_max - grid.w_min)) if initial is None \
        else grid.normalize(initial)
    worst = 0.0
    for step in range(1, max_steps + 1):
        J = wl * f[:-1] - wr * f[1:]
        g = f.copy()
        g[:-1] -= dt / dx * J
        g[1:] += dt / dx * J
        change = grid.integrate(np.abs(g - f))
        f = g
        if step % 1000 == 0:
            worst = max(worst, abs(grid.integrate(f) - 1))
        if change < tol:
            worst = max(worst, abs(grid.integrate(f) - 1))
            return SteadyState(grid.normalize(f), grid, step, worst)
    raise ConvergenceError(f"no steady state after {max_steps} steps (last change {change})")


def fw_frozen_n_simulate(params: FwParams, n_fixed: float, steps: int, burn_in: int,
                         rng: RngStream, P0: Optional[float] = None) -> np.ndarray:
    """Euler-Maruyama for the price with the strategy split pinned at ``n_fixed``.

    The drift is linear in P, so the scheme is the AR(1) recursion
    ``y' = (1 - a dt) y + s sqrt(dt) eta`` for ``y = P - F``, run with
    ``scipy.signal.lfilter``.  Starts at ``P0`` (default F) and returns the
    states after step ``burn_in``.
    """
    if not 0 <= burn_in < steps:
        raise InvalidParameterError("need 0 <= burn_in < steps")
    F, dt = params.fundamental_price, params.dt
    drift, diffusion = fw_continuous_coefficients(F - 1.0, n_fixed, params)
    a, s = float(drift), float(diffusion)
    y0 = (F if P0 is None else P0) - F
    eta = rng.normal(size=steps)
    rho = 1.0 - a * dt
    y, _ = lfilter([1.0], [1.0, -rho], s * math.sqrt(dt) * eta, zi=[rho * y0])
    return F + y[burn_in:]


def ar1_effective_size(count: int, rho: float) -> float:
    """Effective number of independent draws in a stationary AR(1) sample."""
    return count * (1 - rho) / (1 + rho)
