"""Zero-energy scattering lengths of radial pair potentials.

In d = 3 the reduced radial problem is u'' = (1/2) u v on [start, r_max] with
u = 0, u' = 1 at the start (start = hard-core radius, else 0); after scaling
to unit slope at r_max, the scattering length is the limit of r - u/u'.

In d = 2 the radial zero-energy equation keeps its angular term,
psi'' + psi'/r = (1/2) psi v, whose exterior solutions are multiples of
log(r/a); the length is read off from a log-profile fit.  Soft cores start
regular at the origin (psi' = 0), hard cores start at the core with slope 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    IncreaseRmaxError,
    InfiniteBornLengthError,
    NoAdmissibleSolutionError,
    PreconditionError,
    RDependenceError,
)
from .grids import sphere_area
from .potentials import RadialPairPotential, ext_mul

_DEFAULT_STEPS = 4096
_RMAX_FACTOR = 16.0


@dataclass
class ScatteringSolution:
    """Normalized zero-energy solution on [core, r_max] (d = 3 reduction)."""

    r: np.ndarray
    u: np.ndarray
    du: np.ndarray
    core_radius: float
    r_max: float
    v: RadialPairPotential
    normalized: bool = True

    def interp(self, radii):
        """u at arbitrary radii; identically 0 on [0, core]."""
        radii = np.asarray(radii, dtype=float)
        out = np.interp(radii, self.r, self.u, left=0.0)
        return np.where(radii < self.core_radius, 0.0, out)


@dataclass
class ScatteringReport:
    """Summary emitted by the CLI: lengths and their diagnostics."""

    length: float
    born_length: float
    dim: int
    tail_estimate: float
    unit_sphere_area: float
    label: str = ""


@dataclass
class PlanarLengthDetails:
    value: float
    degenerate: bool
    fit_spread: float
    r_consistency: float


def _guarded(g, u):
    # 0 * inf = 0: the solution vanishes wherever v is infinite
    return 0.0 if u == 0.0 else g * u


def solve_scattering_ode(v, r_max=None, steps=_DEFAULT_STEPS):
    """Integrate u'' = (1/2) u v by classical RK4 on a uniform grid."""
    if r_max is None:
        r_max = _RMAX_FACTOR * v.effective_scale
    start = v.core_radius
    if r_max <= start:
        raise PreconditionError("r_max must exceed the hard-core radius")
    if steps < 8:
        raise PreconditionError("need at least 8 steps")

    h = (r_max - start) / steps
    r = start + h * np.arange(steps + 1)
    # one-sided samples: jumps of v aligned with a node (well edges, cores)
    # must not leak into the neighbouring step
    delta = h * 2.0 ** -30
    g_right = 0.5 * np.asarray(v(r[:-1] + delta), dtype=float)
    g_left = 0.5 * np.asarray(v(r[1:] - delta), dtype=float)
    g_mids = 0.5 * np.asarray(v(r[:-1] + 0.5 * h), dtype=float)

    u = np.empty(steps + 1)
    p = np.empty(steps + 1)
    u[0], p[0] = 0.0, 1.0
    ui, pi = 0.0, 1.0
    for i in range(steps):
        g0, gm, g1 = g_right[i], g_mids[i], g_left[i]
        k1u, k1p = pi, _guarded(g0, ui)
        k2u = pi + 0.5 * h * k1p
        k2p = _guarded(gm, ui + 0.5 * h * k1u)
        k3u = pi + 0.5 * h * k2p
        k3p = _guarded(gm, ui + 0.5 * h * k2u)
        k4u = pi + h * k3p
        k4p = _guarded(g1, ui + h * k3u)
        ui = ui + h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        pi = pi + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        if ui < 0.0 or pi <= 0.0:
            raise NoAdmissibleSolutionError(
                f"solution lost positivity at r = {r[i + 1]:.6g}; v too attractive"
            )
        u[i + 1], p[i + 1] = ui, pi
    # impose unit slope at r_max
    u /= pi
    p /= pi
    return ScatteringSolution(r, u, p, start, float(r_max), v)


def _richardson_tail(values):
    """Accelerate g(R 2^-k) -> limit assuming error orders 1, 2, 3."""
    x = list(values)
    t1 = [2.0 * x[k] - x[k + 1] for k in range(3)]
    t2 = [(4.0 * t1[k] - t1[k + 1]) / 3.0 for k in range(2)]
    t3 = (8.0 * t2[0] - t2[1]) / 7.0
    spread = max(abs(t3 - t2[0]), abs(t2[0] - t2[1]))
    return t3, spread


def tail_limit_3d(solution, tol=1e-6):
    """Limit of r - u/u' over the last decade of the grid, Richardson-accelerated.

    Returns (length, tail_estimate); raises when the tail has not settled.
    """
    r, u, du = solution.r, solution.u, solution.du
    targets = [solution.r_max / 2.0 ** k for k in range(4)]
    idx = [min(len(r) - 1, int(np.searchsorted(r, t))) for t in targets]
    g = [r[i] - u[i] / du[i] for i in idx]
    value, spread = _richardson_tail(g)
    if spread > tol * max(1.0, abs(value)):
        raise IncreaseRmaxError(
            f"tail estimate {spread:.3g} above tolerance; raise r_max"
        )
    return float(value), float(spread)


def scattering_length_3d(solution, tol=1e-6):
    """Scattering length read off a solved radial problem."""
    return tail_limit_3d(solution, tol)[0]


def scattering_moment(solution):
    """Integral of v(|x|) u(|x|) / |x|^(d-2) over R^3 on the solution grid.

    Equals 2 * (unit sphere area) * scattering length for the normalized u.
    """
    r, u = solution.r, solution.u
    h = r[1] - r[0]
    delta = h * 2.0 ** -30
    # interval-wise trapezoid with one-sided v samples, so that jumps of v
    # sitting on a node do not leak half a cell into the neighbouring interval
    v_right = np.asarray(solution.v(r[:-1] + delta), dtype=float)
    v_left = np.asarray(solution.v(r[1:] - delta), dtype=float)
    lo = ext_mul(u[:-1] * r[:-1], v_right)
    hi = ext_mul(u[1:] * r[1:], v_left)
    return sphere_area(3) * float(np.sum(0.5 * h * (lo + hi)))


def _solve_planar(v, r_fit, steps):
    """RK4 for psi' = w/r, w' = (1/2) r v psi; returns nodes and psi/psi(R)."""
    start = v.core_radius
    h = (r_fit - start) / steps
    r = start + h * np.arange(steps + 1)
    delta = h * 2.0 ** -30
    v_right = np.asarray(v(r[:-1] + delta), dtype=float)
    v_left = np.asarray(v(r[1:] - delta), dtype=float)
    v_mids = np.asarray(v(r[:-1] + 0.5 * h), dtype=float)

    if start > 0:
        psi, w = 0.0, start  # slope 1 at the core edge
    else:
        psi, w = 1.0, 0.0  # regular at the origin

    def dpsi(rr, ww):
        return 0.0 if rr == 0.0 else ww / rr

    def dw(rr, vv, pp):
        return 0.0 if (rr == 0.0 or pp == 0.0) else 0.5 * rr * vv * pp

    out = np.empty(steps + 1)
    out[0] = psi
    for i in range(steps):
        r0, rm, r1 = r[i], r[i] + 0.5 * h, r[i + 1]
        v0, vm, v1 = v_right[i], v_mids[i], v_left[i]
        k1p, k1w = dpsi(r0, w), dw(r0, v0, psi)
        k2p = dpsi(rm, w + 0.5 * h * k1w)
        k2w = dw(rm, vm, psi + 0.5 * h * k1p)
        k3p = dpsi(rm, w + 0.5 * h * k2w)
        k3w = dw(rm, vm, psi + 0.5 * h * k2p)
        k4p = dpsi(r1, w + h * k3w)
        k4w = dw(r1, v1, psi + h * k3p)
        psi = psi + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        w = w + h / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        if psi < 0.0:
            raise NoAdmissibleSolutionError(
                f"planar solution lost positivity at r = {r1:.6g}"
            )
        out[i + 1] = psi
    if out[-1] <= 0.0:
        raise NoAdmissibleSolutionError("planar solution vanished at the boundary")
    return r, out / out[-1]


def _planar_fit(v, r_fit, steps):
    r, u = _solve_planar(v, r_fit, steps)
    scale = max(v.effective_scale, v.core_radius)
    lo = max(1.25 * scale, 0.05 * r_fit)
    hi = 0.6 * r_fit
    window = (r >= lo) & (r <= hi)
    if not np.any(window):
        raise PreconditionError("fit window empty; raise the truncation radius")
    uw, rw = u[window], r[window]
    if np.max(np.abs(1.0 - uw)) < 1e-9:
        return 0.0, True, 0.0  # v has no scattering effect at all
    log_a = (np.log(rw) - uw * math.log(r_fit)) / (1.0 - uw)
    a = float(np.exp(np.median(log_a)))
    spread = float(np.max(np.abs(np.exp(log_a) - a)))
    return a, False, spread


def scattering_length_2d(v, r_fit=None, steps=_DEFAULT_STEPS, check=True):
    """Planar scattering length via the log-profile fit; see module docstring."""
    return planar_length_details(v, r_fit, steps, check).value


def planar_length_details(v, r_fit=None, steps=_DEFAULT_STEPS, check=True):
    if v.support_radius is None:
        return _planar_truncated(v, steps)
    if r_fit is None:
        r_fit = _RMAX_FACTOR * v.effective_scale
    if r_fit <= max(v.core_radius, v.support_radius or 0.0):
        raise PreconditionError("fit radius must exceed core and support")
    a, degenerate, spread = _planar_fit(v, r_fit, steps)
    consistency = 0.0
    if check and not degenerate:
        a2, _, _ = _planar_fit(v, 2.0 * r_fit, steps)
        consistency = abs(a2 - a) / max(abs(a), 1e-12)
        if consistency > 1e-4:
            raise RDependenceError(
                f"planar length moved by {consistency:.3g} when doubling the radius"
            )
    return PlanarLengthDetails(a, degenerate, spread, consistency)


def _planar_truncated(v, steps):
    """Non-compact v: truncate at growing radii until the length settles."""
    scale = v.effective_scale
    prev = None
    for level in range(2, 9):
        cut = scale * 2.0 ** level
        vt = RadialPairPotential(
            lambda r: np.asarray(v(r), dtype=float),
            v.core_radius,
            v.lower_bound,
            cut,
            f"{v.label}|trunc:{cut:g}",
        )
        det = planar_length_details(vt, None, steps, check=False)
        if prev is not None and abs(det.value - prev) <= 1e-4 * max(abs(det.value), 1.0):
            return det
        prev = det.value
    raise RDependenceError("planar length did not settle under truncation growth")


def born_length(v, dim=3):
    """First Born approximation (1/8 pi) * integral of v over R^dim."""
    if dim not in (2, 3):
        raise PreconditionError("born length defined for dim 2 or 3")
    if v.core_radius > 0:
        raise InfiniteBornLengthError("hard core makes the integral infinite")
    scale = v.effective_scale
    total = 0.0
    # refine toward the origin on [0, scale]
    shells = []
    converged_in = False
    for k in range(200):
        lo, hi = scale * 2.0 ** (-(k + 1)), scale * 2.0 ** (-k)
        rr = np.linspace(lo, hi, 128)
        shell = float(np.trapezoid(ext_mul(rr ** (dim - 1), v(rr)), rr))
        if math.isinf(shell):
            raise InfiniteBornLengthError("v not integrable at the origin")
        total += shell
        shells.append(shell)
        if total > 1e12:
            raise InfiniteBornLengthError("integral of v diverges at the origin")
        if k >= 2 and abs(shell) <= 1e-10 * max(abs(total), 1e-300):
            converged_in = True
            break
        if k >= 10 and all(
            s > 0 and s >= 0.995 * p for s, p in zip(shells[-8:], shells[-9:-1])
        ):
            raise InfiniteBornLengthError("integral of v diverges at the origin")
    if not converged_in:
        raise InfiniteBornLengthError("origin quadrature did not settle")
    # outward part
    if v.support_radius is not None:
        if v.support_radius > scale:
            rr = np.linspace(scale, v.support_radius, 4096)
            total += float(np.trapezoid(rr ** (dim - 1) * np.asarray(v(rr)), rr))
    else:
        for k in range(60):
            lo, hi = scale * 2.0 ** k, scale * 2.0 ** (k + 1)
            rr = np.linspace(lo, hi, 512)
            shell = float(np.trapezoid(rr ** (dim - 1) * np.asarray(v(rr)), rr))
            total += shell
            if total > 1e12:
                raise InfiniteBornLengthError("integral of v diverges at infinity")
            if abs(shell) <= 1e-10 * max(abs(total), 1e-300):
                break
        else:
            raise InfiniteBornLengthError("tail quadrature did not settle")
    return sphere_area(dim) * total / (8.0 * math.pi)


def scattering_report(v, dim=3, r_max=None, steps=_DEFAULT_STEPS):
    """Full single-potential summary used by the command line."""
    if dim == 3:
        sol = solve_scattering_ode(v, r_max, steps)
        length, tail = tail_limit_3d(sol)
    elif dim == 2:
        det = planar_length_details(v, r_max, steps)
        length, tail = det.value, det.fit_spread
    else:
        raise PreconditionError("scattering supported in dim 2 and 3")
    try:
        born = born_length(v, dim)
    except InfiniteBornLengthError:
        born = math.inf
    return ScatteringReport(length, born, dim, tail, sphere_area(dim), v.label)
