"""Large-deviation rate functions on grids.

Three layers share one discretization so energy differences cancel exactly:

  * donsker_varadhan: the square-root kinetic form of a normalized density,
    identical to the quadratic form behind the grid Laplacian, so the rate of
    a discrete ground-state density vanishes to rounding.
  * cumulant / j_beta: the finite-horizon Feynman-Kac cumulant of a bounded
    test function, evolved by Strang splitting from single-cell mass at the
    origin, and its Legendre-Fenchel transform computed by monotone concave
    ascent with the exact discrete gradient (forward times backward states).
  * composite rates: canonical, product-state, and mean-field energies minus
    their variational minima.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (EnlargeGridError, NonConvergenceError, NumericalError,
                     PreconditionError)
from .gp import _Descent, trap_on_grid
from .grids import UniformGrid, gaussian_wave
from .hartree import PairInteraction
from .potentials import LiftedPotentials, ext_mul
from .scattering import born_length

_MASS_TOL = 1e-10
_DEFAULT_BOUND = 50.0
_TIME_STEP = 1.0 / 64.0
_LEAK_TOL = 1e-6


@dataclass(frozen=True)
class Density:
    """Normalized probability density on a Cartesian grid."""

    grid: UniformGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise PreconditionError("density shape does not match the grid")
        if np.any(vals < 0):
            raise PreconditionError("density must be nonnegative")
        mass = float(np.sum(vals)) * self.grid.cell_volume
        if abs(mass - 1.0) > _MASS_TOL:
            raise PreconditionError(f"density mass {mass} is not 1")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_samples(cls, grid, values):
        """Normalize nonnegative cell values into a Density."""
        vals = np.asarray(values, dtype=float)
        total = float(np.sum(vals)) * grid.cell_volume
        if not total > 0:
            raise PreconditionError("cannot normalize zero mass")
        return cls(grid, vals / total)

    def has_spike(self):
        """Single cell carrying most of the mass on a fine grid: no density."""
        cell = float(np.max(self.values)) * self.grid.cell_volume
        return cell > 0.5 and self.grid.n > 128


@dataclass(frozen=True)
class TestFunction:
    """Bounded function on a grid, the dual variable of j_beta."""

    grid: UniformGrid
    values: np.ndarray
    bound: float = _DEFAULT_BOUND

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise PreconditionError("test function shape does not match grid")
        if np.max(np.abs(vals)) > self.bound + 1e-12:
            raise PreconditionError("test function exceeds its stated bound")
        object.__setattr__(self, "values", vals)


def donsker_varadhan(mu, dims=None):
    """Kinetic energy of the square root of the density; +inf on spikes.

    A jump of sqrt(density) bigger than sqrt(spacing) next to an empty cell
    means the measure has no grid-differentiable square root.
    """
    if dims is not None and dims != mu.grid.dim:
        raise PreconditionError("dims does not match the density's grid")
    s = np.sqrt(mu.values)
    h = mu.grid.spacing
    for axis in range(mu.grid.dim):
        a = np.moveaxis(s, axis, 0)
        jump = np.abs(a[1:] - a[:-1])
        edge = (a[1:] == 0) ^ (a[:-1] == 0)
        if np.any(edge & (jump > math.sqrt(h))):
            return math.inf
    return mu.grid.kinetic(s)


# ---------------------------------------------------------------------------
# Feynman-Kac cumulant by Strang splitting


@dataclass(frozen=True)
class CumulantValue:
    value: float
    beta: float
    initial_mode: str = "origin"


class _Propagator:
    """One Strang step u -> exp(f dt/2) . heat(dt) . exp(f dt/2) u.

    The heat half uses the spectral multiplier of the periodic grid; the mass
    that diffuses into the outermost cell ring is monitored, because there the
    periodic wrap differs from the intended whole-space evolution.
    """

    def __init__(self, grid, f_values, dt):
        self.grid = grid
        self.dt = dt
        self.half = np.exp(0.5 * dt * np.asarray(f_values, dtype=float))
        k = grid.wavenumbers()
        mesh = np.meshgrid(*([k] * grid.dim), indexing="ij")
        self.heat = np.exp(-dt * sum(m ** 2 for m in mesh))
        edge = np.zeros(grid.shape, dtype=bool)
        for axis in range(grid.dim):
            e = np.moveaxis(edge, axis, 0)
            e[0] = True
            e[-1] = True
        self.edge = edge

    def step(self, u):
        u = self.half * u
        u = np.fft.ifftn(np.fft.fftn(u) * self.heat).real
        np.maximum(u, 0.0, out=u)
        return self.half * u


def _origin_mass(grid):
    """Unit mass split over the cells nearest the origin."""
    dist = np.zeros(grid.shape)
    for axis in range(grid.dim):
        shaped = [1] * grid.dim
        shaped[axis] = grid.n
        dist = dist + np.abs(grid.axis).reshape(shaped) ** 2
    sel = np.isclose(dist, dist.min())
    u = np.zeros(grid.shape)
    u[sel] = 1.0
    return u / (float(np.sum(u)) * grid.cell_volume)


def _evolve(grid, f_values, beta, steps, keep_states):
    """Run the splitting; returns (log Z, states, log-scales, worst leak)."""
    dt = beta / steps
    prop = _Propagator(grid, f_values, dt)
    w = grid.cell_volume
    u = _origin_mass(grid)
    states = [u.copy()] if keep_states else None
    scales = [0.0] if keep_states else None
    log_mass = 0.0
    leak = 0.0
    for _ in range(steps):
        u = prop.step(u)
        total = float(np.sum(u)) * w
        if not total > 0:
            raise NumericalError("evolution lost all mass")
        leak = max(leak, float(np.sum(u[prop.edge])) * w / total)
        u /= total
        log_mass += math.log(total)
        if keep_states:
            states.append(u.copy())
            scales.append(log_mass)
    if leak > _LEAK_TOL:
        raise EnlargeGridError(
            f"boundary holds {leak:.2e} of the mass; enlarge the grid"
        )
    return log_mass, states, scales, leak


def cumulant(f, beta, grid=None, steps=None):
    """(1/beta) log E[exp(int_0^beta f(B_s) ds)] for paths from the origin."""
    if isinstance(f, TestFunction):
        grid = f.grid
        f_values = f.values
    else:
        if grid is None:
            raise PreconditionError("grid required for raw test-function values")
        f_values = np.asarray(f, dtype=float)
    if beta <= 0:
        raise PreconditionError("need beta > 0")
    if steps is None:
        steps = max(16, int(round(beta / _TIME_STEP)))
    log_mass, _, _, _ = _evolve(grid, f_values, beta, steps, False)
    return CumulantValue(log_mass / beta, float(beta))


def _backward_density(grid, f_values, beta, steps, states):
    """Exact gradient d Lambda / df as a density, given the forward states.

    Trapezoid in time of forward*backward products; every time slice is
    normalized on its own, so no overflow bookkeeping is needed.
    """
    w = grid.cell_volume
    m = len(states) - 1
    back = np.ones(grid.shape)
    back /= float(np.sum(back)) * w
    prop = _Propagator(grid, f_values, beta / steps)
    rho = np.zeros(grid.shape)
    for j in range(m, -1, -1):
        slice_ = states[j] * back
        denom = float(np.sum(slice_)) * w
        weight = 0.5 if j in (0, m) else 1.0
        rho += weight * slice_ / denom
        if j > 0:
            back = prop.step(back)
            back /= float(np.sum(back)) * w
    rho /= steps
    return rho


def _occupation_density(grid, f_values, beta, steps):
    """Cumulant value and the exact gradient d Lambda / df as a density."""
    log_mass, states, _, _ = _evolve(grid, f_values, beta, steps, True)
    rho = _backward_density(grid, f_values, beta, steps, states)
    return log_mass / beta, rho


@dataclass
class TransformResult:
    value: float
    maximizer: TestFunction
    converged: bool
    gradient_norm: float
    iterations: int


def j_beta(mu, beta, bound=_DEFAULT_BOUND, iterations=400, tol=1e-6,
           f_init=None, steps=None):
    """Legendre-Fenchel transform sup_f <mu, f> - Lambda_beta(f) by ascent.

    The objective is concave; ascent from f_init (or a spectral guess) with
    backtracking never decreases it, so the result is always a valid lower
    bound, flagged converged only when the gradient norm passes tol.
    """
    grid = mu.grid
    if mu.has_spike():
        return TransformResult(math.inf, TestFunction(grid, np.zeros(grid.shape),
                                                      bound), True, 0.0, 0)
    if steps is None:
        steps = max(16, int(round(beta / _TIME_STEP)))
    w = grid.cell_volume

    if f_init is not None:
        f = np.clip(np.asarray(
            f_init.values if isinstance(f_init, TestFunction) else f_init,
            dtype=float), -bound, bound)
    else:
        # large-beta guess: f whose ground state is sqrt(mu); the formula is
        # meaningless where mu carries no mass (ghost cells dominate), so
        # those cells get the most repulsive bulk value instead
        s = np.sqrt(mu.values)
        good = mu.values > 1e-13 * float(np.max(mu.values))
        lap = grid.laplacian(s)
        f = np.where(good, -np.divide(lap, s, out=np.zeros_like(s),
                                      where=good), 0.0)
        f[~good] = min(0.0, float(np.min(f[good])))
        f = np.clip(f - np.sum(f * mu.values * w), -bound, bound)

    lam, rho = _occupation_density(grid, f, beta, steps)
    value = float(np.sum(mu.values * f) * w) - lam
    eta = 1.0
    it = 0
    grad_norm = math.inf
    stalled = 0
    floor = 1e-290
    for it in range(1, iterations + 1):
        grad = mu.values - rho
        grad_norm = math.sqrt(float(np.sum(grad ** 2)) * w)
        if grad_norm < tol:
            break
        # mirror step: rho responds multiplicatively to f, so log(mu/rho)
        # equalizes progress between bulk and tails
        direction = np.log((mu.values + floor) / (rho + floor)) / beta
        direction = np.clip(direction, -2.0 * bound, 2.0 * bound)
        accepted = False
        while eta > 1e-12:
            f_try = np.clip(f + eta * direction, -bound, bound)
            # trial keeps the forward states; the gradient's backward half
            # runs only on acceptance
            try:
                log_mass, states, _, _ = _evolve(grid, f_try, beta, steps,
                                                 True)
            except EnlargeGridError:
                eta *= 0.5
                continue
            val_try = float(np.sum(mu.values * f_try) * w) - log_mass / beta
            if val_try >= value:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        stalled = stalled + 1 if val_try - value < 1e-11 * max(1.0, abs(value)) \
            else 0
        f, value = f_try, val_try
        rho = _backward_density(grid, f, beta, steps, states)
        eta = min(eta * 1.5, 1e3)
        if stalled >= 3:
            break
    converged = grad_norm < tol or stalled >= 3
    return TransformResult(value, TestFunction(grid, f, bound),
                           converged, grad_norm, it)


# ---------------------------------------------------------------------------
# composite rate functions


def _pairing(density_values, potential_values, grid):
    """<density, potential> with conventions 0*inf = 0; +inf if mass meets inf."""
    w = density_values * grid.cell_volume
    if np.any((w > 0) & np.isinf(potential_values)):
        return math.inf
    return float(np.sum(ext_mul(w, potential_values)))


def _check_rate(raw, label):
    if raw < -1e-6:
        raise NumericalError(
            f"{label} came out {raw:.3e} < -1e-6; the reference minimum is "
            "inconsistent with this discretization"
        )
    return max(raw, 0.0)


def canonical_rate(mu, trap, v, n_particles, chi, dim=None):
    """I(mu) + <trap sum + pair sum, mu> - N*chi on the configuration grid."""
    grid = mu.grid
    if dim is None:
        if grid.dim % n_particles:
            raise PreconditionError("grid dimension is not N * particle dim")
        dim = grid.dim // n_particles
    if grid.dim != n_particles * dim:
        raise PreconditionError("grid dimension is not N * particle dim")
    ival = donsker_varadhan(mu)
    if math.isinf(ival):
        return math.inf
    lifted = LiftedPotentials(trap, v, n_particles)
    config = mu.grid.points().reshape(grid.shape + (n_particles, dim))
    pot = lifted.trap_sum(config) + lifted.pair_sum(config)
    pairing = _pairing(mu.values, pot, grid)
    if math.isinf(pairing):
        return math.inf
    return _check_rate(ival + pairing - n_particles * chi, "canonical rate")


def hartree_rate(mus, trap, v, chi_product):
    """Sum of one-particle rates plus cross interactions minus N*chi_product."""
    n = len(mus)
    grid = mus[0].grid
    if any(m.grid is not grid and m.grid != grid for m in mus):
        raise PreconditionError("all densities must share one grid")
    vext = trap_on_grid(trap, grid)
    total = 0.0
    for m in mus:
        ival = donsker_varadhan(m)
        if math.isinf(ival):
            return math.inf
        pairing = _pairing(m.values, vext, grid)
        if math.isinf(pairing):
            return math.inf
        total += ival + pairing
    inter = PairInteraction(v, grid)
    for i in range(n):
        for j in range(i + 1, n):
            pij = inter.pairing(mus[i].values, mus[j].values)
            if math.isinf(pij):
                return math.inf
            total += pij
    return _check_rate(total - n * chi_product, "product-state rate")


def coupling_from_pair(v):
    """Half the full-space integral of v, written as 4 pi times its first-order
    scattering approximation."""
    return 4.0 * math.pi * born_length(v, dim=3)


@dataclass
class MeanFieldResult:
    value: float
    minimizer: np.ndarray  # normalized phi on the grid
    maximizer: TestFunction
    converged: bool
    iterations: int


def _waterfill(cost, g, w):
    """Minimize <mu, cost> + g int mu^2 over densities mu >= 0 of mass one.

    Stationarity gives mu = (lam - cost)_+ / (2g) with lam fixed by the mass
    constraint; cells with infinite cost stay empty.  g = 0 degenerates to
    uniform mass on the argmin cells.
    """
    flat = cost.ravel()
    finite = np.isfinite(flat)
    if not np.any(finite):
        raise PreconditionError("no admissible cells for the density")
    if g == 0:
        lo = float(np.min(flat[finite]))
        mu = np.where(flat <= lo, 1.0, 0.0)
        mu /= float(np.sum(mu)) * w
        return mu.reshape(cost.shape), lo
    c = np.sort(flat[finite])
    prefix = np.cumsum(c)
    # lam in (c[m-1], c[m]] supports exactly m cells
    target = 2.0 * g / w
    m = np.arange(1, len(c) + 1)
    lam_cand = (target + prefix) / m
    ok = lam_cand > c
    if len(c) > 1:
        ok[:-1] &= lam_cand[:-1] <= c[1:]
    m_star = int(np.nonzero(ok)[0][-1]) + 1
    lam = (target + prefix[m_star - 1]) / m_star
    mu = np.clip(lam - flat, 0.0, None) / (2.0 * g)
    mu[~finite] = 0.0
    return mu.reshape(cost.shape), lam


def chi_otimes_beta(g, trap, beta, grid, tol=1e-6, iterations=400,
                    bound=_DEFAULT_BOUND, steps=None):
    """Positive-temperature variational energy: the minimum over normalized
    phi of J_beta(phi^2) + <W, phi^2> + g ||phi||_4^4.

    The functional is convex in the density phi^2, so the minimum equals the
    concave dual max_f [ min_mu (<mu, f+W> + g int mu^2) - Lambda_beta(f) ],
    whose inner minimum is exact water-filling.  Ascent on f with the exact
    gradient (water-filling mass minus Feynman-Kac occupation) never
    overshoots the true value, and the duality gap at the returned pair is
    controlled by the gradient norm.
    """
    if g < 0:
        raise PreconditionError("coupling must be nonnegative")
    vext = trap_on_grid(trap, grid)
    w = grid.cell_volume
    if steps is None:
        steps = max(16, int(round(beta / _TIME_STEP)))

    def dual(f_values):
        log_mass, states, _, _ = _evolve(grid, f_values, beta, steps, True)
        mu, _ = _waterfill(f_values + vext, g, w)
        val = (float(np.sum(ext_mul(mu * w, f_values + vext)))
               + g * float(np.sum(mu ** 2) * w) - log_mass / beta)
        return val, mu, states

    f = np.clip(np.where(np.isfinite(vext), -vext, -math.inf), -bound, bound)
    value, mu, states = dual(f)
    rho = _backward_density(grid, f, beta, steps, states)
    eta = 1.0
    grad_norm = math.inf
    it = 0
    stalled = 0
    for it in range(1, iterations + 1):
        direction = mu - rho
        grad_norm = math.sqrt(float(np.sum(direction ** 2)) * w)
        if grad_norm < tol:
            break
        accepted = False
        while eta > 1e-12:
            f_try = np.clip(f + eta * direction, -bound, bound)
            try:
                val_try, mu_try, states_try = dual(f_try)
            except EnlargeGridError:
                eta *= 0.5
                continue
            if val_try >= value:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        stalled = stalled + 1 if val_try - value < 1e-12 * max(1.0, abs(value)) \
            else 0
        f, value, mu = f_try, val_try, mu_try
        rho = _backward_density(grid, f, beta, steps, states_try)
        eta = min(eta * 2.0, 1e3)
        if stalled >= 4:
            break
    phi = np.sqrt(mu)
    norm = math.sqrt(float(np.sum(phi ** 2)) * w)
    return MeanFieldResult(value, phi / norm, TestFunction(grid, f, bound),
                           grad_norm < tol or stalled >= 4, it)


def meanfield_rate(mu, trap, g, beta, chi_b, steps=None, f_init=None):
    """J_beta(mu) + <W, mu> + g int mu^2 - chi_b; +inf when mu has no density."""
    if mu.has_spike():
        return math.inf
    grid = mu.grid
    vext = trap_on_grid(trap, grid)
    jb = j_beta(mu, beta, iterations=600, tol=1e-7, f_init=f_init, steps=steps)
    w = grid.cell_volume
    raw = (jb.value + _pairing(mu.values, vext, grid)
           + g * float(np.sum(mu.values ** 2) * w) - chi_b)
    if math.isinf(raw):
        return math.inf
    return _check_rate(raw, "mean-field rate")
