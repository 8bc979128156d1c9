"""Trap and pair potentials on the extended real line.

Values may be +inf (forbidden regions); the convention 0 * inf = 0 is applied
wherever a weight multiplies a potential value, via `ext_mul`.  Pair
potentials are radial: a profile on [core, inf) plus a hard-core radius below
which the value is +inf.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    IndeterminateClassificationError,
    PreconditionError,
)
from .grids import sphere_area

SOFT_CORE = "soft-core"
HARD_CORE = "hard-core"


def ext_mul(weight, value):
    """Extended-real product with 0 * inf = 0 (both arguments array-like)."""
    weight = np.asarray(weight, dtype=float)
    value = np.asarray(value, dtype=float)
    with np.errstate(invalid="ignore"):
        out = weight * value
    return np.where(weight == 0.0, 0.0, out)


# ---------------------------------------------------------------------------
# pair potentials


@dataclass(frozen=True)
class RadialPairPotential:
    """Radial pair potential v(r); +inf on [0, core_radius)."""

    profile: Callable[[np.ndarray], np.ndarray]
    core_radius: float = 0.0
    lower_bound: float = 0.0
    support_radius: Optional[float] = None
    label: str = "pair"

    def __post_init__(self):
        if self.core_radius < 0:
            raise PreconditionError("core_radius must be nonnegative")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        out = np.full(r.shape, np.inf)
        outside = r >= self.core_radius
        if np.any(outside):
            out[outside] = np.asarray(self.profile(r[outside]), dtype=float)
        if self.support_radius is not None:
            out[r > self.support_radius] = 0.0
        return float(out[0]) if scalar else out

    @property
    def effective_scale(self):
        """Length scale bounding core and support; 1.0 when neither is set."""
        scale = max(self.core_radius, self.support_radius or 0.0)
        return scale if scale > 0 else 1.0


def zero_pair():
    return RadialPairPotential(lambda r: np.zeros_like(r), 0.0, 0.0, 0.0, "zero")


def hard_core(radius):
    """v = inf on [0, radius), 0 beyond."""
    if radius <= 0:
        raise PreconditionError("hard core needs radius > 0")
    return RadialPairPotential(
        lambda r: np.zeros_like(r), radius, 0.0, radius, f"hardcore:{radius:g}"
    )


def square_well(height, radius=1.0):
    """v = height on [0, radius], 0 beyond."""
    if height < 0 or radius <= 0:
        raise PreconditionError("square well needs height >= 0, radius > 0")

    def prof(r):
        return np.where(r <= radius, float(height), 0.0)

    return RadialPairPotential(
        prof, 0.0, min(0.0, height), radius, f"squarewell:{height:g},{radius:g}"
    )


def gaussian_bump(height, width=1.0, cutoff=None):
    """v = height * exp(-(r/width)^2), truncated at cutoff (default 4*width)."""
    if height < 0 or width <= 0:
        raise PreconditionError("bump needs height >= 0, width > 0")
    cut = 4.0 * width if cutoff is None else cutoff

    def prof(r):
        return np.where(r <= cut, height * np.exp(-((r / width) ** 2)), 0.0)

    return RadialPairPotential(prof, 0.0, 0.0, cut, f"bump:{height:g},{width:g}")


def power_singularity(height, power, cutoff=1.0):
    """v = height * r^-power on (0, cutoff], 0 beyond; +inf at r = 0."""
    if height < 0 or power <= 0 or cutoff <= 0:
        raise PreconditionError("need height >= 0, power > 0, cutoff > 0")

    def prof(r):
        with np.errstate(divide="ignore"):
            vals = height * r ** (-float(power))
        return np.where(r <= cutoff, vals, 0.0)

    return RadialPairPotential(prof, 0.0, 0.0, cutoff, f"power:{height:g},{power:g}")


def tabulated_pair(radii, values, core_radius=0.0):
    """Linear interpolation of (r, v) samples; 0 beyond the last radius."""
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    if radii.ndim != 1 or radii.shape != values.shape or len(radii) < 2:
        raise PreconditionError("need matching 1d arrays with >= 2 samples")
    if np.any(np.diff(radii) <= 0):
        raise PreconditionError("radii must be strictly increasing")
    finite = np.isfinite(values)
    if not np.all(finite):
        # a leading inf block defines the hard core; interior infs are invalid
        k = int(np.argmax(finite))
        if not np.all(finite[k:]):
            raise PreconditionError("inf values allowed only as a leading core block")
        core_radius = max(core_radius, radii[k])
    support = float(radii[-1])
    lower = float(np.min(values[finite])) if np.any(finite) else 0.0

    def prof(r):
        return np.interp(r, radii, np.where(finite, values, 0.0), right=0.0)

    return RadialPairPotential(prof, core_radius, min(lower, 0.0), support, "tabulated")


def load_pair_csv(path):
    """Two-column CSV (radius, value); the token 'inf' is accepted."""
    data = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    if data.shape[1] != 2:
        raise PreconditionError(f"{path}: expected two columns (radius,value)")
    return tabulated_pair(data[:, 0], data[:, 1])


# ---------------------------------------------------------------------------
# classification

_REL_TOL = 1e-8
_BLOWUP = 1e12


def _shell_integral(v, lo, hi, power, samples=256):
    """Trapezoid of v(r) r^power over [lo, hi]; inf-safe at isolated nodes."""
    r = np.linspace(lo, hi, samples)
    vals = ext_mul(r ** power, np.asarray(v(r), dtype=float))
    if np.any(np.isinf(vals)):
        return math.inf
    return float(np.trapezoid(vals, r))


def unit_ball_integral(v, dim=3, rel_tol=_REL_TOL, blowup=_BLOWUP, max_levels=80):
    """Integral of v(|x|) over the unit ball of R^dim, by geometric refinement
    toward the origin.  Returns +inf when the partial sums pass `blowup`."""
    area = sphere_area(dim)
    total = 0.0
    sums = []
    shells = []
    for k in range(max_levels):
        lo, hi = 2.0 ** (-(k + 1)), 2.0 ** (-k)
        shell = _shell_integral(v, lo, hi, dim - 1)
        if math.isinf(shell):
            return math.inf
        total += shell
        sums.append(area * total)
        shells.append(shell)
        if area * total > blowup:
            return math.inf
        if k >= 2 and abs(shell) <= rel_tol * max(abs(total), 1e-300):
            # remaining mass bounded by a geometric tail of negligible shells
            return area * total
        # shells refusing to decay signal a (log-)divergent origin
        if k >= 10 and all(
            s > 0 and s >= 0.995 * p for s, p in zip(shells[-8:], shells[-9:-1])
        ):
            return math.inf
    raise IndeterminateClassificationError(
        "unit-ball quadrature neither converged nor blew up", partial_sums=sums
    )


def classify(v, dim=3):
    """SOFT_CORE iff no hard core and v is integrable near the origin in R^dim."""
    if v.core_radius > 0:
        return HARD_CORE
    return SOFT_CORE if math.isfinite(unit_ball_integral(v, dim)) else HARD_CORE


# ---------------------------------------------------------------------------
# rescalings

def rescale_gp(v, xi):
    """Dilute-limit family xi^-2 v(r/xi); scattering length scales by xi."""
    if xi <= 0:
        raise PreconditionError("scale xi must be positive")

    def prof(r):
        return np.asarray(v(r / xi), dtype=float) / xi ** 2

    return RadialPairPotential(
        prof,
        v.core_radius * xi,
        v.lower_bound / xi ** 2,
        None if v.support_radius is None else v.support_radius * xi,
        f"{v.label}|gp:{xi:g}",
    )


def rescale_hartree(v, n, dim=3):
    """Mean-field family N^(d-1) v(rN); hard core shrinks to core/N."""
    if n < 1:
        raise PreconditionError("particle number must be >= 1")
    amp = float(n) ** (dim - 1)

    def prof(r):
        return amp * np.asarray(v(r * n), dtype=float)

    return RadialPairPotential(
        prof,
        v.core_radius / n,
        amp * v.lower_bound,
        None if v.support_radius is None else v.support_radius / n,
        f"{v.label}|hartree:{n}",
    )


def validate_hartree_assumption(v, eps=1.0, envelope=None):
    """Check integrability of r * vtilde(r) near 0 (d=3 Green's function test),
    with vtilde a decreasing envelope of v on (0, eps).

    Returns (ok, value): value is the integral when finite, else the partial
    sum reached when the refinement blew up.
    """
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    if v.core_radius > 0:
        raise PreconditionError("envelope test applies to soft-core v only")
    if envelope is not None:
        probe = np.geomspace(eps * 1e-6, eps, 64)
        ev = np.asarray(envelope(probe), dtype=float)
        if np.any(np.diff(ev) > 1e-12 * np.maximum(np.abs(ev[:-1]), 1.0)):
            raise PreconditionError("supplied envelope is not decreasing")
        vv = np.asarray(v(probe), dtype=float)
        if np.any(ev + 1e-12 * np.maximum(np.abs(ev), 1.0) < vv):
            raise PreconditionError("supplied envelope does not dominate v")
        env = envelope
    else:
        # running max from the right on a dyadic grid dominates v on (0, eps)
        probe = np.geomspace(eps * 2.0 ** -60, eps, 2048)
        vv = np.asarray(v(probe), dtype=float)
        hull = np.maximum.accumulate(vv[::-1])[::-1]

        def env(r):
            idx = np.clip(np.searchsorted(probe, r), 0, len(probe) - 1)
            return hull[idx]

    total = 0.0
    converged = False
    for k in range(200):
        lo, hi = eps * 2.0 ** (-(k + 1)), eps * 2.0 ** (-k)
        shell = _shell_integral(env, lo, hi, 1)
        if math.isinf(shell):
            return False, math.inf
        total += shell
        if total > _BLOWUP:
            return False, total
        if k >= 2 and abs(shell) <= _REL_TOL * max(abs(total), 1e-300):
            converged = True
            break
    return converged, total


# ---------------------------------------------------------------------------
# traps


class HarmonicTrap:
    """W(x) = stiffness * |x|^2."""

    kind = "harmonic"
    is_radial = True

    def __init__(self, stiffness=1.0):
        if stiffness < 0:
            raise PreconditionError("stiffness must be nonnegative")
        self.stiffness = float(stiffness)

    def radial(self, r):
        return self.stiffness * np.asarray(r, dtype=float) ** 2

    def evaluate(self, points):
        points = np.asarray(points, dtype=float)
        return self.stiffness * np.sum(points ** 2, axis=-1)

    @property
    def confining(self):
        return self.stiffness > 0


class BallTrap:
    """Hard wall: 0 inside |x| < radius, +inf outside."""

    kind = "ball"
    is_radial = True

    def __init__(self, radius):
        if radius <= 0:
            raise PreconditionError("ball trap needs radius > 0")
        self.radius = float(radius)

    def radial(self, r):
        return np.where(np.asarray(r, dtype=float) < self.radius, 0.0, np.inf)

    def evaluate(self, points):
        return self.radial(np.sqrt(np.sum(np.asarray(points, float) ** 2, axis=-1)))

    confining = True


class TabulatedTrap:
    """Radial table with linear interpolation; extrapolates the last slope."""

    kind = "tabulated"
    is_radial = True

    def __init__(self, radii, values):
        radii = np.asarray(radii, dtype=float)
        values = np.asarray(values, dtype=float)
        if radii.ndim != 1 or radii.shape != values.shape or len(radii) < 2:
            raise PreconditionError("need matching 1d arrays with >= 2 samples")
        if np.any(np.diff(radii) <= 0):
            raise PreconditionError("radii must be strictly increasing")
        finite = np.isfinite(values)
        if np.any(values[finite] < 0):
            raise PreconditionError("trap values must be nonnegative")
        if not finite[0]:
            raise PreconditionError("trap must be finite at the origin")
        # a trailing inf block is a hard wall; interior infs are invalid
        if not np.all(finite):
            k = int(np.argmin(finite))
            if np.any(finite[k:]):
                raise PreconditionError("inf allowed only as a trailing wall block")
        self.radii = radii
        self.values = values
        self._finite = finite
        last = np.where(finite)[0][-1]
        self._slope = 0.0
        if last > 0:
            self._slope = (values[last] - values[last - 1]) / (
                radii[last] - radii[last - 1]
            )
        self._wall = None if np.all(finite) else radii[int(np.argmin(finite))]
        # confining envelope check: the running max must keep growing outward
        env = np.maximum.accumulate(np.where(finite, values, np.inf))
        self.confining = bool(env[-1] > env[0] or self._slope > 0 or self._wall)

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        fr = self.radii[self._finite]
        fv = self.values[self._finite]
        out = np.interp(r, fr, fv)
        beyond = r > fr[-1]
        out = np.where(beyond, fv[-1] + self._slope * (r - fr[-1]), out)
        if self._wall is not None:
            out = np.where(r >= self._wall, np.inf, out)
        return out

    def evaluate(self, points):
        return self.radial(np.sqrt(np.sum(np.asarray(points, float) ** 2, axis=-1)))


def load_trap_csv(path):
    data = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    if data.shape[1] != 2:
        raise PreconditionError(f"{path}: expected two columns (radius,value)")
    return TabulatedTrap(data[:, 0], data[:, 1])


# ---------------------------------------------------------------------------
# lifts to configuration space


@dataclass(frozen=True)
class LiftedPotentials:
    """Sums of a trap and a pair potential over an N-particle configuration."""

    trap: object
    pair: RadialPairPotential
    n_particles: int

    def trap_sum(self, config):
        """Sum_i W(x_i) for config shape (..., N, d)."""
        config = np.asarray(config, dtype=float)
        if config.shape[-2] != self.n_particles:
            raise PreconditionError("configuration has wrong particle count")
        return np.sum(self.trap.evaluate(config), axis=-1)

    def pair_sum(self, config):
        """Sum_{i<j} v(|x_i - x_j|) for config shape (..., N, d)."""
        config = np.asarray(config, dtype=float)
        if config.shape[-2] != self.n_particles:
            raise PreconditionError("configuration has wrong particle count")
        n = self.n_particles
        total = np.zeros(config.shape[:-2])
        for i in range(n):
            for j in range(i + 1, n):
                rij = np.sqrt(
                    np.sum((config[..., i, :] - config[..., j, :]) ** 2, axis=-1)
                )
                total = total + self.pair(rij)
        return total
