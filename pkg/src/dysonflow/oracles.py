"""Independent references: matrix-model eigenvalue dynamics, Bessel running-max
moments, and a bulk-GUE surrogate of the sine process.

Normalisation of the matrix model: the diagonal entries are real Brownian
motions with variance ``t``; each off-diagonal entry has ``E|h_ij|^2 = t`` in
the Hermitian case (``beta = 2``) and ``t/2`` in the real symmetric case
(``beta = 1``).  Second-order perturbation then gives the eigenvalue
drift ``(beta/2) sum_j 1/(l_i - l_j)``, i.e. the particle system with
unit-variance Brownian motions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .configspace import ConfigError, ParticleConfig, SpaceParams
from .noise import NoiseSource, _split64
from .sde import repulsion_root


class CoverageError(ValueError):
    """The requested window is too wide for the sample size."""


class PreconditionError(ValueError):
    """An input falls outside the hypotheses of the statistic."""


# ---------------------------------------------------------------- matrix model

@dataclass(frozen=True)
class MatrixEnsembleSpec:
    beta: int = 2
    N: int = 8
    dt: float = 0.05
    T: float = 0.5
    seed: int = 0
    replicas: int = 1
    max_N: int = 64

    def __post_init__(self):
        if self.beta not in (1, 2):
            raise ConfigError("matrix oracle supports beta in {1, 2}")
        if not 1 <= self.N <= self.max_N:
            raise ConfigError(f"N must be in [1, {self.max_N}]")
        if not self.dt > 0 or self.T < 0:
            raise ConfigError("need dt > 0 and T >= 0")


@dataclass
class EigenTrajectory:
    times: np.ndarray
    eigenvalues: np.ndarray  # (replicas, times, N), sorted along the last axis


def _rng(seed: int, replica_block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(
        key=np.random.SeedSequence(_split64(seed) + _split64(replica_block) + [11, 0x5EED]).generate_state(2, np.uint64)))


def matrix_increment(rng: np.random.Generator, beta: int, N: int, dt: float, size: int) -> np.ndarray:
    """Symmetric (beta=1) or Hermitian (beta=2) Gaussian increments, shape ``(size, N, N)``."""
    off = 0.5 * dt
    if beta == 1:
        a = rng.normal(0.0, math.sqrt(off), (size, N, N))
        h = np.triu(a, 1)
        h = h + np.swapaxes(h, -1, -2)
    else:
        re = rng.normal(0.0, math.sqrt(off), (size, N, N))
        im = rng.normal(0.0, math.sqrt(off), (size, N, N))
        h = np.triu(re + 1j * im, 1)
        h = h + np.conj(np.swapaxes(h, -1, -2))
    d = rng.normal(0.0, math.sqrt(dt), (size, N))
    idx = np.arange(N)
    h[:, idx, idx] = d
    return h


def matrix_dbm_sample(spec: MatrixEnsembleSpec, initial: Optional[Sequence[float]] = None,
                      record_times: Optional[Sequence[float]] = None, block: int = 1000) -> EigenTrajectory:
    """Evolve ``H(t) = diag(initial) + (matrix Brownian motion)`` and record its spectrum.

    Increments are added step by step on the ``dt`` grid; eigenvalues are
    computed only at the recorded grid times (default: every step).
    """
    n_steps = int(round(spec.T / spec.dt))
    grid = np.arange(n_steps + 1) * spec.dt
    if record_times is None:
        rec = list(range(n_steps + 1))
    else:
        rec = sorted({int(np.argmin(np.abs(grid - s))) for s in record_times})
    rec_pos = {k: j for j, k in enumerate(rec)}
    init = np.zeros(spec.N) if initial is None else np.asarray(initial, dtype=float)
    dtype = float if spec.beta == 1 else complex
    out = np.empty((spec.replicas, len(rec), spec.N))
    for b0 in range(0, spec.replicas, block):
        size = min(block, spec.replicas - b0)
        rng = _rng(spec.seed, b0 // block)
        H = np.zeros((size, spec.N, spec.N), dtype=dtype)
        H[:, np.arange(spec.N), np.arange(spec.N)] = init
        for k in range(n_steps + 1):
            if k > 0:
                H += matrix_increment(rng, spec.beta, spec.N, spec.dt, size)
            j = rec_pos.get(k)
            if j is not None:
                out[b0:b0 + size, j] = np.linalg.eigvalsh(H)
    return EigenTrajectory(grid[rec], out)


def eigen_residual(H: np.ndarray) -> float:
    """``max ||H v - l v|| / ||H||`` over the eigenpairs of a batch of matrices."""
    w, v = np.linalg.eigh(H)
    r = H @ v - v * w[..., None, :]
    scale = np.linalg.norm(H, axis=(-2, -1))
    return float(np.max(np.linalg.norm(r, axis=-2).max(axis=-1) / np.where(scale > 0, scale, 1.0)))


# ---------------------------------------------------------------- Bessel moments

@dataclass(frozen=True)
class BesselMomentEntry:
    t: float
    p: float
    estimate: float
    ci_half_width: float
    samples: int


@lru_cache(maxsize=8)
def _unit_running_max(samples: int, beta: float, seed: int, n_steps: int) -> np.ndarray:
    # In units of sqrt(dt) the step reads u <- root(u + Z, beta): t drops out.
    noise = NoiseSource(seed)
    u = np.zeros(samples)
    top = np.zeros(samples)
    for n in range(n_steps):
        z = noise.normals(0, 2 * samples - 1, n)
        u = repulsion_root(u + (z[1::2] - z[0::2]), beta)
        np.maximum(top, u, out=top)
    top.flags.writeable = False
    return top


def bessel_running_max(t: float, samples: int, beta: float, seed: int,
                       n_steps: int = 1000) -> np.ndarray:
    """``sup_{[0,t]} Q`` on the grid for independent Bessel paths started at 0.

    Sample ``s`` is driven by the gap noise ``W_a`` with ``a = 2s + 1/2``;
    these gaps share no particle, so the samples are independent.  The grid
    has ``n_steps`` steps whatever ``t`` is, so the scheme commutes with
    Brownian scaling and one unit-scale run serves every ``t``.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    return math.sqrt(t / n_steps) * _unit_running_max(samples, float(beta), seed, n_steps)


def q_estimate(t: float, p: float, samples: int, beta: float = 1.0, seed: int = 0,
               n_steps: int = 1000) -> BesselMomentEntry:
    """Monte Carlo ``q(t, p) = E (sup_{[0,t]} Q)^p`` with a 95% normal CI."""
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    m = bessel_running_max(t, samples, beta, seed, n_steps) ** p
    half = 1.959963984540054 * float(np.std(m, ddof=1)) / math.sqrt(samples)
    return BesselMomentEntry(t, p, float(np.mean(m)), half, samples)


@dataclass
class BesselMomentTable:
    """``(t, p) -> BesselMomentEntry``."""
    entries: dict

    def __getitem__(self, key) -> BesselMomentEntry:
        return self.entries[key]

    def _axes(self):
        ts = sorted({t for t, _ in self.entries})
        ps = sorted({p for _, p in self.entries})
        return ts, ps

    def monotone_in_t(self) -> bool:
        ts, ps = self._axes()
        return all(self.entries[(a, p)].estimate < self.entries[(b, p)].estimate
                   for p in ps for a, b in zip(ts[:-1], ts[1:]))

    def monotone_in_p(self) -> bool:
        ts, ps = self._axes()
        return all(self.entries[(t, a)].estimate < self.entries[(t, b)].estimate
                   for t in ts for a, b in zip(ps[:-1], ps[1:]))


def q_table(ts: Sequence[float], ps: Sequence[float], samples: int, beta: float = 1.0,
            seed: int = 0, n_steps: int = 1000) -> BesselMomentTable:
    """All entries reuse one noise realisation."""
    out = {}
    for t in ts:
        top = bessel_running_max(t, samples, beta, seed, n_steps)
        for p in ps:
            m = top ** p
            half = 1.959963984540054 * float(np.std(m, ddof=1)) / math.sqrt(samples)
            out[(t, p)] = BesselMomentEntry(t, p, float(np.mean(m)), half, samples)
    return BesselMomentTable(out)


@dataclass(frozen=True)
class TauResult:
    tau: float
    estimate: BesselMomentEntry
    target: float
    iterations: int

    @property
    def residual(self) -> float:
        return abs(self.estimate.estimate - self.target)


def solve_tau(target: float, samples: int = 10**5, beta: float = 1.0, seed: int = 0,
              n_steps: int = 1000, rel_tol: float = 1e-10, max_iter: int = 200) -> TauResult:
    """Bisection (in log t) for ``q(tau, 1) = target`` on a fixed noise realisation.

    Common random numbers make the estimate a monotone function of ``tau``,
    so the bisection is well posed.
    """
    if not target > 0:
        raise ValueError("target must be positive")

    def f(t):
        return q_estimate(t, 1.0, samples, beta, seed, n_steps)

    lo, hi = 1e-12, 1.0
    while f(hi).estimate < target:
        hi *= 4.0
    it = 0
    while hi / lo - 1 > rel_tol and it < max_iter:
        mid = math.sqrt(lo * hi)
        if f(mid).estimate < target:
            lo = mid
        else:
            hi = mid
        it += 1
    tau = math.sqrt(lo * hi)
    return TauResult(tau, f(tau), target, it)


# ---------------------------------------------------------------- sine surrogate

def _semicircle_cdf(lam: np.ndarray, N: int) -> np.ndarray:
    r = 2.0 * math.sqrt(N)
    u = np.clip(lam / r, -1.0, 1.0)
    return 0.5 + (u * np.sqrt(1 - u * u) + np.arcsin(u)) / math.pi


def gue_spectrum(N: int, rng: np.random.Generator) -> np.ndarray:
    """Eigenvalues of an ``N x N`` GUE matrix (diagonal variance 1, ``E|h_ij|^2 = 1``)."""
    H = matrix_increment(rng, 2, N, 1.0, 1)[0]
    return np.linalg.eigvalsh(H)


def sine_like_sample(N: int, window: float, seed: int = 0, replica: int = 0) -> ParticleConfig:
    """Unit-density point configuration from the bulk of a GUE spectrum.

    Eigenvalues are unfolded with the semicircle distribution function,
    centred, and the points within ``±window`` are kept; particle 0 is the
    first point at or right of the origin.
    """
    if N < 16 * window:
        raise CoverageError(f"N={N} is too small for window {window} (need N >= 16 window)")
    lam = gue_spectrum(N, _rng(seed, replica))
    xi = N * _semicircle_cdf(lam, N) - 0.5 * N
    keep = xi[np.abs(xi) <= window]
    first = -int(np.sum(keep < 0))
    return ParticleConfig(first, keep)


def counting(positions: np.ndarray, a: float, b: float, closed: bool = True) -> int:
    """Number of points in ``[a, b]`` (or ``[a, b)`` when ``closed`` is False)."""
    right = "right" if closed else "left"
    return int(np.searchsorted(positions, b, side=right) - np.searchsorted(positions, a, side="left"))


def number_variance(samples: Sequence[ParticleConfig], lengths: Sequence[float],
                    starts: int = 16) -> np.ndarray:
    """Variance of ``N([x, x + L])`` over samples and ``starts`` offsets ``x`` per sample."""
    out = []
    for L in lengths:
        counts = []
        for s in samples:
            pos = s.positions
            span = pos[-1] - pos[0] - L
            for x in np.linspace(pos[0] + 1, pos[0] + max(span - 1, 1), starts):
                counts.append(counting(pos, x, x + L))
        out.append(np.var(np.asarray(counts, dtype=float) - L))
    return np.asarray(out)


def gap_around(sample: ParticleConfig, x: float = 0.0) -> float:
    """Length of the gap of the configuration that contains ``x``."""
    pos = sample.positions
    k = np.searchsorted(pos, x, side="right")
    if k == 0 or k == pos.size:
        raise CoverageError("point is outside the sampled window")
    return float(pos[k] - pos[k - 1])


@dataclass(frozen=True)
class SineMembership:
    count_deviation: float  # sup_r |N([0, r]) - |r|| |r|^(alpha - 1) over r_min <= |r| <= r_max
    gap_moment: float  # sup_m average |I|^p over gaps I inside [0, m] or [m, 0]


def _count_deviation(pos: np.ndarray, alpha: float, r_min: float, r_max: float) -> float:
    """Exact sup of ``|N([0,r]) - r| r^(alpha-1)`` over ``r`` in ``[r_min, r_max]``.

    Between points the expression is monotone on each side of its zero, so
    the sup is attained at ``r_min``, ``r_max`` or at a point from the left or
    the right.
    """
    pos = np.sort(pos[pos >= 0])
    pts = pos[(pos >= r_min) & (pos <= r_max)]
    r = np.concatenate([[r_min, r_max], pts, pts])
    closed = np.searchsorted(pos, r, side="right")
    left = np.searchsorted(pos, pts, side="left")
    n = np.concatenate([closed[:2], closed[2:2 + pts.size], left])
    return float(np.max(np.abs(n - r) * r ** (alpha - 1)))


def _gap_moment(pos: np.ndarray, p: float, m_max: int) -> float:
    pos = np.sort(pos[pos >= 0])
    best = 0.0
    for m in range(1, m_max + 1):
        inside = pos[pos <= m]
        if inside.size >= 2:
            best = max(best, float(np.mean(np.diff(inside) ** p)))
    return best


def membership_stats_sine(sample: ParticleConfig, params: SpaceParams, m_max: int,
                          r_min: float = 1.0) -> SineMembership:
    """Finite-window counting-deviation and gap-moment statistics on both sides of 0.

    ``|r| >= r_min`` excludes the origin, where a point sitting at 0 would
    make ``|r|^(alpha-1)`` blow up for counting reasons alone.
    """
    if not params.alpha < 0.5:
        raise PreconditionError("alpha must be < 1/2")
    pos = sample.positions
    dev = max(_count_deviation(pos, params.alpha, r_min, m_max),
              _count_deviation(-pos, params.alpha, r_min, m_max))
    mom = max(_gap_moment(pos, params.p, m_max), _gap_moment(-pos, params.p, m_max))
    return SineMembership(dev, mom)
