"""Hartree (product-state) energies and minimizers.

The N-body product energy per particle is

    (1/N) [ sum_i T(h_i) + <W, h_i^2>  +  sum_{i<j} <h_i^2, V h_j^2> ],

with <rho, V sigma> the pair interaction of two one-particle densities.  The
minimizer alternates linear ground-state solves with the other factors frozen,
reusing the GP descent kernel, so the total energy never increases.  The
symmetric ansatz replaces the pair sum by ((N-1)/2) <h^2, V h^2> and descends
directly on the common factor.

Pair kernels carry hard cores explicitly: a configuration whose densities put
mass on cells closer than the core radius has energy +inf.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.signal import fftconvolve
from scipy.sparse.linalg import splu

from .errors import NonConvergenceError, PreconditionError
from .gp import _Descent, trap_on_grid, _weights
from .grids import RadialGrid, UniformGrid, WaveFunction, gaussian_wave, sphere_area
from .potentials import RadialPairPotential


# ---------------------------------------------------------------------------
# discrete pair interaction <rho, V sigma>


class PairInteraction:
    """Kernel machinery for one grid and one pair potential."""

    def __init__(self, v, grid):
        self.v = v
        self.grid = grid
        if isinstance(grid, UniformGrid):
            self._init_cartesian()
        elif isinstance(grid, RadialGrid):
            if grid.dim == 2:
                self._init_radial_2d()
            else:
                self._init_radial_3d()
        else:
            raise PreconditionError("unsupported grid type")

    # -- cartesian: translation-invariant kernel, FFT convolution
    def _init_cartesian(self):
        g = self.grid
        off = np.arange(-(g.n - 1), g.n) * g.spacing
        mesh = np.meshgrid(*([off] * g.dim), indexing="ij")
        radius = np.sqrt(sum(m ** 2 for m in mesh))
        kernel = np.asarray(self.v(radius), dtype=float)
        self._forbidden = ~np.isfinite(kernel)
        self._kernel = np.where(self._forbidden, 0.0, kernel)

    def _init_radial_3d(self):
        # (V sigma)(r) = (2 pi / r) * int sigma(s) s [T(r+s) - T(|r-s|)] ds
        # with T(t) = int_core^t v(tau) tau dtau
        g = self.grid
        r = g.radii
        fine = np.linspace(
            self.v.core_radius, 2.0 * g.extent + g.spacing, 8 * g.n + 1
        )
        vals = np.asarray(self.v(np.minimum(fine, fine[-1])), dtype=float)
        vals = np.where(np.isfinite(vals), vals, 0.0)
        cum = np.concatenate(
            ([0.0], np.cumsum(0.5 * np.diff(fine) * (vals[:-1] * fine[:-1] + vals[1:] * fine[1:])))
        )

        def bigt(t):
            return np.interp(t, fine, cum)

        rr, ss = np.meshgrid(r, r, indexing="ij")
        band = bigt(rr + ss) - bigt(np.abs(rr - ss))
        mat = (2.0 * math.pi / rr) * ss * g.spacing * band
        self._forbidden_matrix = sp.csr_matrix(
            (np.abs(rr - ss) < self.v.core_radius).astype(float)
        )
        self._matrix = sp.csr_matrix(np.where(np.abs(mat) > 1e-300, mat, 0.0))

    def _init_radial_2d(self):
        # angular reduction: (V sigma)(r) = int sigma(s) s A(r, s) ds with
        # A(r,s) = 2 int_0^thetamax v(sqrt(r^2+s^2-2 r s cos t)) dt restricted
        # to the band |r-s| <= reach where v can be nonzero
        g = self.grid
        r = g.radii
        reach = self.v.support_radius
        if reach is None:
            reach = 2.0 * g.extent  # dense fallback
        core = self.v.core_radius
        nodes, wts = np.polynomial.legendre.leggauss(48)
        rows, cols, vals = [], [], []
        frows, fcols = [], []
        for i, ri in enumerate(r):
            js = np.nonzero(np.abs(r - ri) <= reach)[0]
            if len(js) == 0:
                continue
            sj = r[js]
            with np.errstate(invalid="ignore"):
                cos_hi = (ri ** 2 + sj ** 2 - reach ** 2) / (2.0 * ri * sj)
                theta_hi = np.arccos(np.clip(cos_hi, -1.0, 1.0))
                if core > 0:
                    cos_lo = (ri ** 2 + sj ** 2 - core ** 2) / (2.0 * ri * sj)
                    theta_lo = np.arccos(np.clip(cos_lo, -1.0, 1.0))
                else:
                    theta_lo = np.zeros_like(sj)
            half = 0.5 * (theta_hi - theta_lo)
            mid = 0.5 * (theta_hi + theta_lo)
            theta = mid[:, None] + half[:, None] * nodes[None, :]
            dist = np.sqrt(
                np.maximum(
                    ri ** 2 + sj[:, None] ** 2 - 2.0 * ri * sj[:, None] * np.cos(theta),
                    0.0,
                )
            )
            vv = np.asarray(self.v(np.maximum(dist, core)), dtype=float)
            vv = np.where(np.isfinite(vv), vv, 0.0)
            angular = 2.0 * half * np.sum(vv * wts[None, :], axis=1)
            contrib = angular * sj * g.spacing
            keep = np.abs(contrib) > 1e-300
            rows.extend([i] * int(np.sum(keep)))
            cols.extend(js[keep])
            vals.extend(contrib[keep])
            if core > 0:
                over = js[np.abs(sj - ri) < core]
                frows.extend([i] * len(over))
                fcols.extend(over)
        n = g.n
        self._matrix = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        self._forbidden_matrix = sp.csr_matrix(
            (np.ones(len(frows)), (frows, fcols)), shape=(n, n)
        )

    def apply(self, sigma):
        """(V sigma) on the grid, finite part of the kernel only."""
        if isinstance(self.grid, UniformGrid):
            return (
                fftconvolve(sigma, self._kernel, mode="valid") * self.grid.cell_volume
            )
        return self._matrix @ sigma

    def forbidden_overlap(self, rho, sigma):
        """True when mass of rho sits within the core radius of mass of sigma."""
        if self.v.core_radius <= 0:
            return False
        if isinstance(self.grid, UniformGrid):
            hit = fftconvolve((sigma > 0).astype(float), self._forbidden.astype(float),
                              mode="valid")
            return bool(np.any((rho > 0) & (hit > 0.5)))
        hit = self._forbidden_matrix @ (sigma > 0).astype(float)
        return bool(np.any((rho > 0) & (hit > 0.5)))

    def pairing(self, rho, sigma):
        """<rho, V sigma>; +inf when hard cores force overlap."""
        if self.forbidden_overlap(rho, sigma):
            return math.inf
        w = _weights(self.grid)
        return float(np.sum(rho * w * self.apply(sigma)))


def pair_term(rho, sigma, v, grid):
    """Convenience wrapper: <rho, V sigma> for densities on a shared grid."""
    rho = np.asarray(rho, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if rho.shape != grid.shape or sigma.shape != grid.shape:
        raise PreconditionError("densities must live on the given grid")
    return PairInteraction(v, grid).pairing(rho, sigma)


# ---------------------------------------------------------------------------
# product states and energies


@dataclass
class ProductState:
    """N one-particle factors on a common grid, each L2-normalized."""

    grid: object
    factors: list
    multipliers: list = field(default_factory=list)

    @property
    def n_particles(self):
        return len(self.factors)


@dataclass
class HartreeResult:
    energy: float
    state: ProductState
    residual: float
    sweeps: int
    symmetric: bool = False


def hartree_energy(state, trap, v, interaction=None):
    """Product energy per particle; +inf on hard-core overlap."""
    grid = state.grid
    vext = trap_on_grid(trap, grid)
    w = _weights(grid)
    inter = interaction or PairInteraction(v, grid)
    n = state.n_particles
    total = 0.0
    for h in state.factors:
        dens = h ** 2
        if np.any((dens > 0) & np.isinf(vext)):
            return math.inf
        total += grid.kinetic(h) + float(
            np.sum(np.where(np.isfinite(vext), vext, 0.0) * dens * w)
        )
    for i in range(n):
        for j in range(i + 1, n):
            pij = inter.pairing(state.factors[i] ** 2, state.factors[j] ** 2)
            if math.isinf(pij):
                return math.inf
            total += pij
    return total / n


def _seed_factors(grid, n, vext, perturb):
    """Distinct positive starts: common Gaussian times factor-dependent bumps."""
    base = gaussian_wave(grid).values
    if isinstance(grid, RadialGrid):
        coords = grid.radii
    else:
        coords = grid.radii()
    out = []
    for i in range(n):
        if perturb and n > 1:
            bump = 1.0 + 0.05 * np.cos((i + 1) * coords)
        else:
            bump = 1.0
        vals = np.where(np.isfinite(vext), base * bump, 0.0)
        m = np.sum(vals ** 2 * _weights(grid))
        if not m > 0:
            raise PreconditionError("initial factor vanished on admissible cells")
        out.append(vals / math.sqrt(m))
    return out


def _stationarity(grid, vext_list, factors, weights):
    """Max residual of -lap h_i + (W + U_i) h_i = lam_i h_i; returns lams too."""
    worst = 0.0
    lams = []
    for h, veff in zip(factors, vext_list):
        mask = np.isfinite(veff)
        hv = np.where(mask, h, 0.0)
        op = np.where(mask, -grid.laplacian(hv) + np.where(mask, veff, 0.0) * hv, 0.0)
        lam = float(np.sum(hv * op * weights))
        grad = op - lam * hv
        worst = max(worst, math.sqrt(float(np.sum(grad ** 2 * weights))))
        lams.append(lam)
    return worst, lams


def hartree_minimize(
    trap,
    v,
    n_particles,
    grid,
    tol=1e-6,
    max_sweeps=50,
    inner_tol=None,
    initial_factors=None,
):
    """Cyclic coordinate descent over the factors of a product state."""
    if n_particles < 1:
        raise PreconditionError("need n_particles >= 1")
    vext = trap_on_grid(trap, grid)
    w = _weights(grid)
    inter = PairInteraction(v, grid)
    if initial_factors is not None:
        factors = [np.asarray(f, dtype=float).copy() for f in initial_factors]
        if len(factors) != n_particles:
            raise PreconditionError("wrong number of initial factors")
        factors = [f / math.sqrt(float(np.sum(f ** 2 * w))) for f in factors]
    else:
        if v.core_radius > 0 and n_particles > 1:
            raise PreconditionError(
                "hard-core pair potentials need disjoint-support initial factors"
            )
        factors = _seed_factors(grid, n_particles, vext, perturb=True)

    state = ProductState(grid, factors)
    energy = hartree_energy(state, trap, v, inter)
    if math.isinf(energy):
        raise PreconditionError("initial factors already overlap a hard core")

    inner = tol / 5.0 if inner_tol is None else inner_tol
    dens = [f ** 2 for f in factors]
    applied = [inter.apply(d) for d in dens]

    residual = math.inf
    for sweep in range(1, max_sweeps + 1):
        for i in range(n_particles):
            ueff = np.zeros(grid.shape)
            for j in range(n_particles):
                if j != i:
                    ueff = ueff + applied[j]
            if v.core_radius > 0:
                blocked = np.zeros(grid.shape)
                for j in range(n_particles):
                    if j != i:
                        if isinstance(grid, UniformGrid):
                            blocked = blocked + fftconvolve(
                                (dens[j] > 0).astype(float),
                                inter._forbidden.astype(float),
                                mode="valid",
                            )
                        else:
                            blocked = blocked + (
                                inter._forbidden_matrix @ (dens[j] > 0).astype(float)
                            )
                ueff = np.where(blocked > 0.5, np.inf, ueff)
            veff = vext + ueff
            solver = _Descent(grid, veff)
            try:
                phi, lam, res_i, iters, e_i = solver.run(factors[i], inner)
            except NonConvergenceError as err:
                phi, lam, res_i, iters, e_i = err.best
            factors[i] = phi
            dens[i] = phi ** 2
            applied[i] = inter.apply(dens[i])
        vexts = []
        for i in range(n_particles):
            ueff = np.zeros(grid.shape)
            for j in range(n_particles):
                if j != i:
                    ueff = ueff + applied[j]
            vexts.append(vext + ueff)
        residual, lams = _stationarity(grid, vexts, factors, w)
        new_energy = hartree_energy(ProductState(grid, factors), trap, v, inter)
        if new_energy > energy + 1e-10 * max(abs(energy), 1.0):
            raise NonConvergenceError(
                f"energy increased across sweep {sweep}", best=(factors, new_energy)
            )
        energy = new_energy
        if residual < tol:
            return HartreeResult(
                energy, ProductState(grid, factors, lams), residual, sweep
            )
    raise NonConvergenceError(
        f"stationarity {residual:.3g} after {max_sweeps} sweeps",
        best=HartreeResult(energy, ProductState(grid, factors, lams), residual,
                           max_sweeps),
    )


def symmetric_hartree(trap, v, n_particles, grid, tol=1e-6, max_iter=None,
                      phi0=None):
    """Minimize T(h) + <W,h^2> + ((N-1)/2) <h^2, V h^2> over one common factor."""
    if n_particles < 1:
        raise PreconditionError("need n_particles >= 1")
    if v.core_radius > 0 and n_particles > 1:
        raise PreconditionError("symmetric ansatz is for soft-core potentials")
    vext = trap_on_grid(trap, grid)
    inter = PairInteraction(v, grid)
    w = _weights(grid)
    c = float(n_particles - 1)

    def nonlinear(values):
        dens = values ** 2
        vh = inter.apply(dens)
        return c * vh, 0.5 * c * float(np.sum(dens * vh * w))

    solver = _Descent(grid, vext, nonlinear if c > 0 else None)
    start = gaussian_wave(grid).values if phi0 is None else np.asarray(phi0, float)
    phi, lam, residual, iters, _ = solver.run(
        start, tol, max_iter or 400_000
    )
    state = ProductState(grid, [phi] * n_particles, [lam] * n_particles)
    energy = hartree_energy(state, trap, v, inter)
    return HartreeResult(energy, state, residual, iters, symmetric=True)


# ---------------------------------------------------------------------------
# two-particle reference eigensolver (d = 1)


@dataclass
class TwoBodyResult:
    energy_per_particle: float
    state: WaveFunction
    iterations: int


def two_body_oracle(trap, v, grid, tol=1e-12, max_iter=200):
    """Ground state of -lap + W(x1) + W(x2) + v(|x1-x2|) on a 2-cell grid.

    The grid is the 2-dimensional configuration grid of two particles on a
    line; inverse power iteration with a sparse factorization, Dirichlet
    boundary, and hard-core cells removed.
    """
    if not isinstance(grid, UniformGrid) or grid.dim != 2:
        raise PreconditionError("two-body oracle runs on a dim-2 uniform grid")
    pts = grid.points()
    x1 = pts[..., 0]
    x2 = pts[..., 1]
    pot = (
        np.asarray(trap.evaluate(x1[..., None]), dtype=float)
        + np.asarray(trap.evaluate(x2[..., None]), dtype=float)
        + np.asarray(v(np.abs(x1 - x2)), dtype=float)
    )
    keep = np.isfinite(pot).ravel()
    if not np.any(keep):
        raise PreconditionError("no admissible cells on this grid")
    n = grid.n
    h2 = grid.spacing ** 2
    lap1 = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n)) / h2
    eye = sp.identity(n)
    a = sp.kron(lap1, eye) + sp.kron(eye, lap1) + sp.diags(
        np.where(keep, pot.ravel(), 0.0)
    )
    a = a.tocsr()[keep][:, keep].tocsc()
    lu = splu(a)
    rng = np.random.default_rng(0)
    x = np.abs(rng.normal(size=a.shape[0])) + 1.0
    x /= np.linalg.norm(x)
    lam_prev = math.inf
    for it in range(1, max_iter + 1):
        y = lu.solve(x)
        y /= np.linalg.norm(y)
        lam = float(y @ (a @ y))
        if abs(lam - lam_prev) < tol * max(1.0, abs(lam)):
            x = y
            break
        x, lam_prev = y, lam
    full = np.zeros(grid.size)
    full[keep] = x * np.sign(np.sum(x))
    wf = WaveFunction(grid, full.reshape(grid.shape)).normalize()
    return TwoBodyResult(lam / 2.0, wf, it)
