"""Brownian ensembles and Monte Carlo free energies for the two path models.

Paths have generator -Laplacian, so increments carry per-coordinate variance
2*dt.  That constant lives in _INCREMENT_VARIANCE_RATE and nowhere else.

All time integrals are left-endpoint Riemann sums over the nodes t_0..t_{M-1};
hard-core contacts are detected at those nodes only, so contact misses between
nodes bias acceptance upward by O(sqrt(dt)).  Free energies come from direct
importance sampling (no MCMC): replica r draws its own generator seeded by
(seed, r), which makes every estimate reproducible replica-by-replica and
embarrassingly parallel.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError, ZeroAcceptanceError
from .grids import UniformGrid
from .potentials import validate_hartree_assumption

_INCREMENT_VARIANCE_RATE = 2.0  # Var of one coordinate over time t is 2t
_JACKKNIFE_BLOCKS = 50
_CHUNK = 256  # replicas per vectorized batch; fixed so reductions are stable


@dataclass
class PathEnsemble:
    """One replica: n_particles discrete Brownian paths over [0, horizon]."""

    n_particles: int
    horizon: float
    steps: int
    positions: np.ndarray  # (N, steps+1, dim)
    start_mode: str = "origin"
    seed: object = None

    @property
    def dt(self):
        return self.horizon / self.steps

    @property
    def dim(self):
        return self.positions.shape[-1]

    def nodes(self, i=None):
        """Left-endpoint time nodes, all particles or just particle i."""
        if i is None:
            return self.positions[:, : self.steps, :]
        return self.positions[i, : self.steps, :]


@dataclass
class OccupationHistogram:
    grid: UniformGrid
    weights: np.ndarray
    label: str
    effective_samples: float = None
    low_sample_warning: bool = False


@dataclass
class FreeEnergyEstimate:
    value: float
    std_error: float
    replica_count: int
    effective_samples: float
    model: str = "canonical"


def sample_paths(n_particles, beta, steps, start="origin", seed=0, dim=1,
                 rng=None):
    """Independent discrete Brownian motions, variance 2*dt per coordinate.

    start is "origin", an (n_particles, dim) array of fixed starting points,
    or a callable (rng, n_particles, dim) -> array drawing random starts.
    """
    if steps < 16:
        raise PreconditionError("need steps >= 16")
    if beta <= 0:
        raise PreconditionError("need beta > 0")
    if rng is None:
        rng = np.random.default_rng(seed)
    dt = beta / steps
    incr = rng.normal(
        scale=math.sqrt(_INCREMENT_VARIANCE_RATE * dt),
        size=(n_particles, steps, dim),
    )
    if isinstance(start, str):
        if start != "origin":
            raise PreconditionError(f"unknown start mode {start!r}")
        x0 = np.zeros((n_particles, dim))
        mode = "origin"
    elif callable(start):
        x0 = np.asarray(start(rng, n_particles, dim), dtype=float)
        mode = "sampled"
    else:
        x0 = np.broadcast_to(np.asarray(start, dtype=float),
                             (n_particles, dim)).copy()
        mode = "fixed"
    pos = np.empty((n_particles, steps + 1, dim))
    pos[:, 0, :] = x0
    np.cumsum(incr, axis=1, out=pos[:, 1:, :])
    pos[:, 1:, :] += x0[:, None, :]
    return PathEnsemble(n_particles, float(beta), int(steps), pos, mode, seed)


def trap_hamiltonian(ensemble, trap):
    """sum_i int_0^beta W(B^i_s) ds, left-endpoint; +inf on forbidden cells."""
    vals = np.asarray(trap.evaluate(ensemble.nodes()), dtype=float)
    if np.any(np.isinf(vals)):
        return math.inf
    return float(np.sum(vals)) * ensemble.dt


def interaction_G(ensemble, v):
    """Common-time pair interaction; +inf on any hard-core contact."""
    n = ensemble.n_particles
    if n < 2:
        return 0.0
    nodes = ensemble.nodes()
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dist = np.sqrt(np.sum((nodes[i] - nodes[j]) ** 2, axis=-1))
            vals = np.asarray(v(dist), dtype=float)
            if np.any(np.isinf(vals)):
                return math.inf
            total += float(np.sum(vals))
    return total * ensemble.dt


def interaction_K(ensemble, v, stride=1):
    """Time-averaged pair interaction: double Riemann sum over a strided grid.

    Cost is O(N^2 (M/stride)^2) kernel evaluations; stride > 1 trades an
    O(dt*stride) quadrature bias for speed.
    """
    if ensemble.steps % stride != 0:
        raise PreconditionError("stride must divide the step count")
    n = ensemble.n_particles
    if n < 2:
        return 0.0
    nodes = ensemble.positions[:, : ensemble.steps : stride, :]
    w = (ensemble.dt * stride) ** 2 / ensemble.horizon
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            diff = nodes[i][:, None, :] - nodes[j][None, :, :]
            dist = np.sqrt(np.sum(diff ** 2, axis=-1))
            vals = np.asarray(v(dist), dtype=float)
            if np.any(np.isinf(vals)):
                return math.inf
            total += float(np.sum(vals))
    return total * w


def occupation(ensemble, i, grid):
    """Histogram of particle i's time nodes; each node carries mass 1/M."""
    pts = ensemble.nodes(i)
    if np.any(np.abs(pts) > grid.extent):
        raise PreconditionError("grid does not cover the ensemble")
    hist, _ = np.histogramdd(pts, bins=[grid.edges] * grid.dim)
    return OccupationHistogram(grid, hist / ensemble.steps, f"particle-{i}")


@dataclass
class LocalTimeEstimate:
    value: float
    refined: float  # same estimator at half the bandwidth
    bandwidth: float


def intersection_local_time(ensemble, i, j, bandwidth=None):
    """Kernel estimate of the mutual intersection local time at the origin.

    Smooths the empirical distribution of B^i_s - B^j_t with a Gaussian
    kernel; reports the estimate at the bandwidth and at half of it so the
    caller can judge convergence.
    """
    if ensemble.dim not in (2, 3):
        raise PreconditionError("intersection local time needs dim 2 or 3")
    if i == j:
        raise PreconditionError("need two distinct particles")
    h = bandwidth
    if h is None:
        h = math.sqrt(_INCREMENT_VARIANCE_RATE * ensemble.horizon * ensemble.dt)
    nodes = ensemble.nodes()
    diff = nodes[i][:, None, :] - nodes[j][None, :, :]
    sq = np.sum(diff ** 2, axis=-1)
    d = ensemble.dim
    scale = (ensemble.dt / ensemble.horizon) ** 2

    def kernel_total(width):
        norm = (2.0 * math.pi * width ** 2) ** (-d / 2.0)
        return float(np.sum(norm * np.exp(-sq / (2.0 * width ** 2)))) * scale

    return LocalTimeEstimate(kernel_total(h), kernel_total(0.5 * h), h)


# ---------------------------------------------------------------------------
# free energy estimation


def _log_weight(ensemble, trap, v, model, stride):
    h = trap_hamiltonian(ensemble, trap)
    if model == "canonical":
        inter = interaction_G(ensemble, v)
    else:
        inter = interaction_K(ensemble, v, stride)
    total = h + inter
    return -total if not math.isinf(total) else -math.inf


def _replica_histogram(ensemble, grid):
    pts = ensemble.nodes().reshape(-1, ensemble.dim)
    if np.any(np.abs(pts) > grid.extent):
        raise PreconditionError("occupation grid does not cover the paths")
    hist, _ = np.histogramdd(pts, bins=[grid.edges] * grid.dim)
    return hist / (ensemble.steps * ensemble.n_particles)


def _chunk_pass(args):
    (lo, hi, n, beta, steps, trap, v, model, stride, seed, dim, start,
     grid) = args
    logw = np.empty(hi - lo)
    hist = None
    shift = -math.inf
    for r in range(lo, hi):
        e = sample_paths(n, beta, steps, start=start, seed=None, dim=dim,
                         rng=np.random.default_rng((seed, r)))
        lw = _log_weight(e, trap, v, model, stride)
        logw[r - lo] = lw
        if grid is not None and lw > -math.inf:
            hr = _replica_histogram(e, grid)
            if hist is None:
                shift = lw
                hist = hr.astype(float)
            else:
                if lw > shift:
                    hist *= math.exp(shift - lw)
                    shift = lw
                hist += math.exp(lw - shift) * hr
    return logw, hist, shift


def _estimate(n_particles, beta, steps, replicas, trap, v, model, stride,
              seed, dim, start, grid, threads):
    chunks = [
        (lo, min(lo + _CHUNK, replicas), n_particles, beta, steps, trap, v,
         model, stride, seed, dim, start, grid)
        for lo in range(0, replicas, _CHUNK)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_chunk_pass, chunks))
    else:
        parts = [_chunk_pass(c) for c in chunks]

    logw = np.concatenate([p[0] for p in parts])
    hist = None
    shift = -math.inf
    for _, hr, s in parts:  # ordered reduction: same bits for any thread count
        if hr is None:
            continue
        if hist is None:
            hist, shift = hr.copy(), s
        else:
            if s > shift:
                hist *= math.exp(shift - s)
                shift = s
            hist += math.exp(s - shift) * hr
    return logw, hist, shift


def _jackknife(logw, n_particles, beta):
    """Headline value and blocked jackknife error from per-replica log weights."""
    r = len(logw)
    finite = logw > -math.inf
    if not np.any(finite):
        raise ZeroAcceptanceError(
            "all replicas rejected; reduce beta or the hard-core radius"
        )
    scale = float(np.max(logw[finite]))
    w = np.exp(logw - scale, where=finite, out=np.zeros_like(logw))
    total = float(np.sum(w))
    value = -(scale + math.log(total) - math.log(r)) / (n_particles * beta)
    ess = total ** 2 / float(np.sum(w ** 2))

    blocks = min(_JACKKNIFE_BLOCKS, r)
    edges = np.linspace(0, r, blocks + 1).astype(int)
    sums = np.add.reduceat(w, edges[:-1])
    counts = np.diff(edges)
    keep = (total - sums) > 0
    if np.sum(keep) < 2:
        return value, math.inf, ess
    loo = -(scale + np.log(total - sums[keep])
            - np.log(r - counts[keep])) / (n_particles * beta)
    b = len(loo)
    err = math.sqrt((b - 1) / b * float(np.sum((loo - np.mean(loo)) ** 2)))
    return value, err, ess


def free_energy_canonical(n_particles, beta, steps, replicas, trap, v,
                          seed=0, dim=1, start="origin", threads=1):
    """-(1/(N beta)) log of the replica-averaged exp(-H-G)."""
    if replicas < 100:
        raise PreconditionError("need at least 100 replicas")
    logw, _, _ = _estimate(n_particles, beta, steps, replicas, trap, v,
                           "canonical", 1, seed, dim, start, None, threads)
    value, err, ess = _jackknife(logw, n_particles, beta)
    return FreeEnergyEstimate(value, err, replicas, ess, "canonical")


def free_energy_hartree(n_particles, beta, steps, replicas, trap, v,
                        stride=1, seed=0, dim=1, start="origin", threads=1):
    """Same estimator with the time-averaged interaction K in place of G."""
    if replicas < 100:
        raise PreconditionError("need at least 100 replicas")
    if dim == 3:
        ok, _ = validate_hartree_assumption(v)
        if not ok:
            raise PreconditionError(
                "pair potential fails the integrability assumption in dim 3"
            )
    logw, _, _ = _estimate(n_particles, beta, steps, replicas, trap, v,
                           "hartree", stride, seed, dim, start, None, threads)
    value, err, ess = _jackknife(logw, n_particles, beta)
    return FreeEnergyEstimate(value, err, replicas, ess, "hartree")


def weighted_occupation(n_particles, beta, steps, replicas, trap, v, grid,
                        model="canonical", stride=1, seed=0, dim=1,
                        start="origin", threads=1):
    """Free energy plus the importance-weighted mean occupation histogram.

    Streams replicas in fixed-size chunks so the replica count can be large
    without holding all paths; returns (FreeEnergyEstimate, histogram).
    """
    if replicas < 100:
        raise PreconditionError("need at least 100 replicas")
    logw, hist, shift = _estimate(n_particles, beta, steps, replicas, trap, v,
                                  model, stride, seed, dim, start, grid,
                                  threads)
    value, err, ess = _jackknife(logw, n_particles, beta)
    est = FreeEnergyEstimate(value, err, replicas, ess, model)
    norm = float(np.sum(hist))
    if not norm > 0:
        raise ZeroAcceptanceError("no replica carried weight onto the grid")
    return est, OccupationHistogram(grid, hist / norm, f"mean-{model}", ess,
                                    ess < 10)


def weighted_mean_occupation(ensembles, model, grid, trap, v, stride=1):
    """Importance-weighted mean occupation of a list of sampled ensembles."""
    logw = np.array([_log_weight(e, trap, v, model, stride)
                     for e in ensembles])
    finite = logw > -math.inf
    if not np.any(finite):
        raise ZeroAcceptanceError(
            "all replicas rejected; reduce beta or the hard-core radius"
        )
    scale = float(np.max(logw[finite]))
    w = np.exp(logw - scale, where=finite, out=np.zeros_like(logw))
    hist = np.zeros(grid.shape)
    for wi, e in zip(w, ensembles):
        if wi > 0:
            hist += wi * _replica_histogram(e, grid)
    hist /= float(np.sum(w))
    ess = float(np.sum(w)) ** 2 / float(np.sum(w ** 2))
    return OccupationHistogram(grid, hist, f"mean-{model}", ess, ess < 10)
