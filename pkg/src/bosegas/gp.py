"""Gross-Pitaevskii energy and its normalized gradient-flow minimizer.

The energy is T(phi) + <W, phi^2> + 4 pi alpha ||phi||_4^4 over L2-normalized
phi, with T the discrete kinetic form of the grid.  Differentiating that
functional gives the stationarity operator -lap + W + 8 pi alpha phi^2; the
descent direction below is its exact discrete gradient, so stationarity and
gradient checks hold to rounding, not just to O(h^2).

Infinite trap values are handled by masking: phi is pinned to 0 wherever
W = inf and those cells drop out of the descent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergenceError, PreconditionError
from .grids import RadialGrid, UniformGrid, WaveFunction, gaussian_wave
from .potentials import ext_mul

_STEP_FACTOR = 0.4
_MAX_ITER = 400_000


@dataclass
class GpResult:
    energy: float
    minimizer: WaveFunction
    multiplier: float
    residual: float
    iterations: int


def trap_on_grid(trap, grid):
    """Trap values at cell centres (radial reduction when the grid is radial)."""
    if isinstance(grid, RadialGrid):
        if not getattr(trap, "is_radial", False):
            raise PreconditionError("radial grid needs a radial trap")
        return np.asarray(trap.radial(grid.radii), dtype=float)
    return np.asarray(trap.evaluate(grid.points()), dtype=float)


def _weights(grid):
    if isinstance(grid, RadialGrid):
        return grid.weights
    return np.full(grid.shape, grid.cell_volume)


def gp_energy(phi, trap, alpha):
    """Energy of a (normalized) state; +inf if phi charges a forbidden cell."""
    grid = phi.grid
    w = trap_on_grid(trap, grid)
    dens = phi.density()
    if np.any((dens > 0) & np.isinf(w)):
        return math.inf
    pot = float(np.sum(ext_mul(dens * _weights(grid), w)))
    return phi.kinetic() + pot + 4.0 * math.pi * alpha * phi.quartic_norm()


class _Descent:
    """Normalized gradient flow shared by the GP and Hartree solvers.

    `nonlinear(phi)` returns (potential-like term entering the operator,
    its energy contribution); for GP that is (8 pi alpha phi^2,
    4 pi alpha ||phi||_4^4).
    """

    def __init__(self, grid, vext, nonlinear=None):
        self.grid = grid
        self.mask = np.isfinite(vext)
        self.vext = np.where(self.mask, vext, 0.0)
        self.nonlinear = nonlinear
        self.weights = _weights(grid)
        cap = 0.9 / (grid.kinetic_diag() + float(np.max(self.vext)) + 1e-30)
        self.step0 = min(_STEP_FACTOR * grid.spacing ** 2, cap)

    def project(self, values):
        values = np.where(self.mask, values, 0.0)
        m = float(np.sum(values ** 2 * self.weights))
        if not m > 0:
            raise PreconditionError("state vanished on the admissible region")
        return values / math.sqrt(m)

    def apply(self, values):
        """(H phi, energy): operator uses the frozen nonlinearity at phi."""
        lap = self.grid.laplacian(values)
        if self.nonlinear is None:
            nl_pot = 0.0
            nl_energy = 0.0
        else:
            nl_pot, nl_energy = self.nonlinear(values)
        h = np.where(self.mask, -lap + (self.vext + nl_pot) * values, 0.0)
        kinetic = self.grid.kinetic(values)
        pot = float(np.sum(self.vext * values ** 2 * self.weights))
        return h, kinetic + pot + nl_energy

    def run(self, phi0, tol, max_iter=_MAX_ITER):
        phi = self.project(phi0)
        tau = self.step0
        h, energy = self.apply(phi)
        lam = float(np.sum(phi * h * self.weights))
        for it in range(1, max_iter + 1):
            grad = h - lam * phi
            residual = math.sqrt(float(np.sum(grad ** 2 * self.weights)))
            if residual < tol:
                return phi, lam, residual, it - 1, energy
            while True:
                trial = self.project(phi - tau * grad)
                h_t, e_t = self.apply(trial)
                if e_t <= energy + 1e-13 * max(abs(energy), 1.0):
                    break
                tau *= 0.5
                if tau < 1e-18:
                    raise NonConvergenceError(
                        "descent step underflow",
                        best=(phi, lam, residual, it, energy),
                    )
            if np.min(trial) < -1e-9 * np.max(np.abs(trial)):
                raise NonConvergenceError(
                    "descent produced a sign change; internal step fault",
                    best=(trial, lam, residual, it, e_t),
                )
            phi, h, energy = trial, h_t, e_t
            lam = float(np.sum(phi * h * self.weights))
        raise NonConvergenceError(
            f"no convergence in {max_iter} iterations (residual {residual:.3g})",
            best=(phi, lam, residual, max_iter, energy),
        )


def gp_minimize(trap, alpha, grid, tol=1e-7, max_iter=_MAX_ITER, phi0=None):
    """Minimize the GP energy over normalized states on the grid."""
    if alpha < 0:
        raise PreconditionError("coupling alpha must be nonnegative")
    vext = trap_on_grid(trap, grid)

    def nonlinear(values):
        sq = values ** 2
        quartic = float(np.sum(sq * sq * _weights(grid)))
        return 8.0 * math.pi * alpha * sq, 4.0 * math.pi * alpha * quartic

    solver = _Descent(grid, vext, nonlinear if alpha > 0 else None)
    if phi0 is None:
        phi0 = gaussian_wave(grid).values
    elif isinstance(phi0, WaveFunction):
        phi0 = phi0.values
    phi, lam, residual, iters, _ = solver.run(phi0, tol, max_iter)
    state = WaveFunction(grid, phi, normalized=True)
    return GpResult(gp_energy(state, trap, alpha), state, lam, residual, iters)


def gp_residual(phi, trap, alpha):
    """Stationarity residual ||(-lap + W + 8 pi alpha phi^2 - lam) phi||_2."""
    grid = phi.grid
    vext = trap_on_grid(trap, grid)
    mask = np.isfinite(vext)
    if np.any((np.abs(phi.values) > 0) & ~mask):
        raise PreconditionError("phi charges a cell with infinite trap value")
    w = _weights(grid)
    vals = np.where(mask, phi.values, 0.0)
    h = -grid.laplacian(vals) + (
        np.where(mask, vext, 0.0) + 8.0 * math.pi * alpha * vals ** 2
    ) * vals
    h = np.where(mask, h, 0.0)
    lam = float(np.sum(vals * h * w))
    grad = h - lam * vals
    return math.sqrt(float(np.sum(grad ** 2 * w)))
