"""Cell-centred grids, discrete integrals, and the kinetic quadratic form.

Every solver in the package shares the same discrete calculus.  The kinetic
form T(phi) is the sum of squared flux differences over cell edges with zero
ghost cells outside the box, which makes T and `laplacian` exact duals:
dT/dphi_k = 2 * w_k * (-lap phi)_k with w_k the quadrature weight of cell k.
Stationarity checks and the rate functions rely on that duality being exact,
not merely O(h^2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np


def sphere_area(dim):
    """Area of the unit sphere in R^dim (2*pi for dim=2, 4*pi for dim=3)."""
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


@dataclass(frozen=True)
class UniformGrid:
    """Cell-centred Cartesian grid on [-extent, extent]^dim, n cells per axis."""

    dim: int
    n: int
    extent: float

    def __post_init__(self):
        if self.dim < 1 or self.n < 2 or not self.extent > 0:
            raise ValueError("grid needs dim >= 1, n >= 2, extent > 0")

    @property
    def spacing(self):
        return 2.0 * self.extent / self.n

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def size(self):
        return self.n ** self.dim

    @property
    def cell_volume(self):
        return self.spacing ** self.dim

    @cached_property
    def axis(self):
        return -self.extent + (np.arange(self.n) + 0.5) * self.spacing

    @cached_property
    def edges(self):
        return -self.extent + np.arange(self.n + 1) * self.spacing

    def points(self):
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack(mesh, axis=-1)

    def radii(self):
        return np.sqrt(np.sum(self.points() ** 2, axis=-1))

    def integrate(self, values):
        return float(np.sum(values) * self.cell_volume)

    def laplacian(self, values):
        """Second-order Laplacian with zero (Dirichlet) ghost cells."""
        out = np.zeros_like(values, dtype=float)
        h2 = self.spacing ** 2
        for ax in range(self.dim):
            pad = [(0, 0)] * self.dim
            pad[ax] = (1, 1)
            p = np.pad(values, pad)
            lo = [slice(None)] * self.dim
            hi = [slice(None)] * self.dim
            mid = [slice(None)] * self.dim
            lo[ax] = slice(0, -2)
            hi[ax] = slice(2, None)
            mid[ax] = slice(1, -1)
            out += (p[tuple(lo)] - 2.0 * p[tuple(mid)] + p[tuple(hi)]) / h2
        return out

    def kinetic(self, values):
        """T(phi) = <phi, -lap phi>, summed over edges incl. boundary edges."""
        total = 0.0
        for ax in range(self.dim):
            pad = [(0, 0)] * self.dim
            pad[ax] = (1, 1)
            d = np.diff(np.pad(values, pad), axis=ax)
            total += float(np.sum(d * d))
        return total / self.spacing ** 2 * self.cell_volume

    def kinetic_diag(self):
        """Diagonal of -lap; bounds the stable descent step."""
        return 2.0 * self.dim / self.spacing ** 2

    def wavenumbers(self):
        """FFT wavenumber meshes (period 2*extent per axis)."""
        k = 2.0 * math.pi * np.fft.fftfreq(self.n, d=self.spacing)
        return np.meshgrid(*([k] * self.dim), indexing="ij")


@dataclass(frozen=True)
class RadialGrid:
    """Cell-centred radial grid on [0, extent] for rotation-invariant problems.

    Cells sit at r_k = (k + 1/2) h; flux edges at k h carry weight
    (k h)^(dim-1), so the edge at r = 0 carries none (natural Neumann) and a
    Dirichlet ghost cell sits beyond r = extent.
    """

    dim: int
    n: int
    extent: float

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("radial reduction is for dim 2 or 3")
        if self.n < 2 or not self.extent > 0:
            raise ValueError("grid needs n >= 2, extent > 0")

    @property
    def spacing(self):
        return self.extent / self.n

    @property
    def shape(self):
        return (self.n,)

    @property
    def size(self):
        return self.n

    @cached_property
    def radii(self):
        return (np.arange(self.n) + 0.5) * self.spacing

    @cached_property
    def edge_radii(self):
        return np.arange(1, self.n + 1) * self.spacing

    @cached_property
    def weights(self):
        return sphere_area(self.dim) * self.radii ** (self.dim - 1) * self.spacing

    def integrate(self, values):
        return float(np.sum(values * self.weights))

    def laplacian(self, values):
        e = self.edge_radii ** (self.dim - 1)
        flux = np.zeros(self.n + 1)
        flux[1:-1] = e[:-1] * np.diff(values)
        flux[-1] = e[-1] * (0.0 - values[-1])
        return np.diff(flux) / (self.radii ** (self.dim - 1) * self.spacing ** 2)

    def kinetic(self, values):
        e = self.edge_radii ** (self.dim - 1)
        d = np.append(np.diff(values), 0.0 - values[-1])
        return float(np.sum(e * d * d)) * sphere_area(self.dim) / self.spacing

    def kinetic_diag(self):
        e = self.edge_radii ** (self.dim - 1)
        left = np.concatenate(([0.0], e[:-1]))
        diag = (left + e) / (self.radii ** (self.dim - 1) * self.spacing ** 2)
        return float(np.max(diag))


@dataclass
class WaveFunction:
    """Amplitudes phi on a grid; the occupation density is phi^2."""

    grid: object
    values: np.ndarray
    normalized: bool = False

    def mass(self):
        return self.grid.integrate(self.values ** 2)

    def normalize(self):
        m = self.mass()
        if not m > 0:
            raise ValueError("cannot normalize the zero function")
        return WaveFunction(self.grid, self.values / math.sqrt(m), True)

    def density(self):
        return self.values ** 2

    def quartic_norm(self):
        """||phi||_4^4."""
        return self.grid.integrate(self.values ** 4)

    def kinetic(self):
        return self.grid.kinetic(self.values)


def gaussian_wave(grid, width=1.0):
    """Normalized positive Gaussian profile, the default descent seed."""
    if isinstance(grid, RadialGrid):
        r = grid.radii
    else:
        r = grid.radii()
    return WaveFunction(grid, np.exp(-(r / width) ** 2 / 2.0)).normalize()
