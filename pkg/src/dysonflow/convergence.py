"""Finite-to-infinite window experiments and the uniqueness diagnostics.

The "infinite" system is represented by the largest window of a ladder;
all windows of one replica are driven by the same particle noise streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Sequence

import numpy as np

from .configspace import ConfigError, ParticleConfig
from .sde import CHUNK, PathBundle, SchemeSpec, simulate_particles


class WindowExhaustedError(IndexError):
    """The initial configuration does not reach past a requested radius."""


class DegeneratePartitionError(ValueError):
    """Some mesoscopic cell is empty; a larger k is needed."""


# ---------------------------------------------------------------- windows

@dataclass(frozen=True)
class WindowLadder:
    n_values: tuple
    windows: dict  # n -> (i_minus, i_plus)

    def __post_init__(self):
        ns = list(self.n_values)
        for a, b in zip(ns[:-1], ns[1:]):
            lo_a, hi_a = self.windows[a]
            lo_b, hi_b = self.windows[b]
            if not (lo_b <= lo_a and hi_a <= hi_b):
                raise ConfigError(f"windows for n={a} and n={b} are not nested")


def make_windows(x_in: ParticleConfig, n_values: Sequence[float]) -> WindowLadder:
    """``i_n^+ = max{i : x_i < n}`` and ``i_n^- = min{i : x_i > -n}`` per radius ``n``."""
    ns = tuple(sorted(n_values))
    pos = x_in.positions
    win = {}
    for n in ns:
        if not (pos[0] <= -n and pos[-1] >= n):
            raise WindowExhaustedError(f"positions do not extend past ±{n}")
        hi = int(np.nonzero(pos < n)[0][-1]) + x_in.offset
        lo = int(np.nonzero(pos > -n)[0][0]) + x_in.offset
        if lo > hi:
            raise WindowExhaustedError(f"window for n={n} is empty")
        win[n] = (lo, hi)
    return WindowLadder(ns, win)


# ---------------------------------------------------------------- coupled errors

@dataclass
class ErrorTable:
    """Per-window sup errors of a tracked particle against the reference window."""

    n_values: tuple
    reference: float
    tracked: int
    p_prime: float
    sup_errors: dict  # n -> array over replicas, or None when not applicable
    replicas: tuple

    def median(self, n) -> float:
        e = self.sup_errors[n]
        return math.nan if e is None else float(np.median(e))

    def mean_power(self, n) -> float:
        e = self.sup_errors[n]
        return math.nan if e is None else float(np.mean(e ** self.p_prime))

    def rows(self):
        """``(n, replica, sup_error)`` rows; ``nan`` marks a window without the particle."""
        for n in self.n_values:
            e = self.sup_errors[n]
            for r, rep in enumerate(self.replicas):
                yield n, rep, (math.nan if e is None else float(e[r]))


def coupled_errors(x_in: ParticleConfig, ladder: WindowLadder, beta: float, spec: SchemeSpec,
                   T: float, seed: int, replicas: Sequence[int], tracked: int = 0,
                   p_prime: float = 2.0, threads: int = 1) -> ErrorTable:
    """``sup_{s<=T} |X^n_i(s) - X^ref_i(s)|`` for every window of the ladder.

    The reference is the largest window.  Replicas run in chunks; every
    window of a replica is driven by the same particle streams.
    """
    ref_n = ladder.n_values[-1]
    reps = list(replicas)
    applicable = {n: ladder.windows[n][0] <= tracked <= ladder.windows[n][1] for n in ladder.n_values}
    if not applicable[ref_n]:
        raise WindowExhaustedError(f"tracked particle {tracked} not in the reference window")
    cols = {n: [] for n in ladder.n_values}
    for c0 in range(0, len(reps), CHUNK):
        chunk = reps[c0:c0 + CHUNK]
        for n in ladder.n_values:
            if not applicable[n]:
                continue
            lo, hi = ladder.windows[n]
            p = simulate_particles(x_in.restrict(lo, hi), beta, spec, T, seed, chunk, threads=threads)
            cols[n].append(p.column(tracked))
    traj = {n: np.concatenate(v, axis=0) for n, v in cols.items() if v}
    ref = traj[ref_n]
    errs = {n: (np.max(np.abs(traj[n] - ref), axis=1) if n in traj else None) for n in ladder.n_values}
    return ErrorTable(ladder.n_values, ref_n, tracked, p_prime, errs, tuple(reps))


def nested_gap_violation(small: PathBundle, large: PathBundle) -> float:
    """Largest amount by which a larger-window gap exceeds the smaller-window gap.

    Adding particles adds compression, so the larger window should have
    the smaller gaps on common keys.
    """
    gs, gl = small.gaps(), large.gaps()
    lo = max(small.offset, large.offset)
    hi = min(small.offset + gs.shape[2], large.offset + gl.shape[2])
    a = gs[:, :, lo - small.offset: hi - small.offset]
    b = gl[:, :, lo - large.offset: hi - large.offset]
    return float(max(0.0, np.max(b - a)))


# ---------------------------------------------------------------- correlation counts

def correlation_counts(paths: PathBundle, opens: Sequence[tuple]) -> np.ndarray:
    """Per replica ``prod_j |O_j ∩ {X_i(s_j)}|`` for open intervals ``O_j = (a, b)``.

    Times are snapped to the nearest grid point.
    """
    x = paths.positions()
    out = np.ones(x.shape[0])
    for (a, b), s in opens:
        k = int(np.argmin(np.abs(paths.times - s)))
        xs = x[:, k, :]
        out *= np.sum((xs > a) & (xs < b), axis=1)
    return out


# ---------------------------------------------------------------- uniqueness diagnostics

@dataclass
class DiagnosticSeries:
    times: np.ndarray
    E: np.ndarray  # (replicas, times)
    L: dict  # (i, sign) -> (replicas, times)
    L_short: dict  # (i, sign) -> short-range part
    L_long: dict  # (i, sign) -> long-range part
    i1: int
    i2: int
    m: int

    def boundary_flux(self) -> np.ndarray:
        L = self.L
        return L[(self.i2, 1)] - L[(self.i2, -1)] - L[(self.i1, 1)] + L[(self.i1, -1)]


def _cumulative_trapezoid(f: np.ndarray, t: np.ndarray) -> np.ndarray:
    inc = 0.5 * (f[..., 1:] + f[..., :-1]) * np.diff(t)
    return np.concatenate([np.zeros(f.shape[:-1] + (1,)), np.cumsum(inc, axis=-1)], axis=-1)


def _boundary_interaction(pu, pl, d, i_col, sign, cut_col):
    """Split ``1/2 sum_j (U - V)/(U V)`` at particle column ``cut_col``."""
    n = pu.shape[-1]
    if sign > 0:
        js = np.arange(i_col + 1, n)
    else:
        js = np.arange(0, i_col)
    if js.size == 0:
        z = np.zeros(pu.shape[:2])
        return z, z, z
    U = sign * (pu[..., js] - pu[..., i_col, None])
    V = sign * (pl[..., js] - pl[..., i_col, None])
    D = sign * (d[..., js] - d[..., i_col, None])
    terms = 0.5 * D / (U * V)
    short = (js <= cut_col) if sign > 0 else (js >= cut_col)
    s = terms[..., short].sum(axis=-1)
    lg = terms[..., ~short].sum(axis=-1)
    return s + lg, s, lg


def uniqueness_diagnostics(paths_up: PathBundle, paths_lw: PathBundle, i1: int, i2: int,
                           m: int) -> DiagnosticSeries:
    """``E_(i1,i2)(t)`` and the boundary interactions ``L^±`` at ``i1`` and ``i2``.

    Sums run over the particles of the common window.  The short-range part
    of ``L^±_i`` takes ``j`` in ``(i, ±3m]``; the long-range part the rest.
    """
    if paths_up.offset != paths_lw.offset or paths_up.values.shape != paths_lw.values.shape:
        raise ValueError("paths must share window and grid")
    gu, gl = paths_up.gaps(), paths_lw.gaps()
    first = paths_up.offset
    lo, hi = min(i1, i2), max(i1, i2)
    E = np.sum(gu[:, :, lo - first: hi - first] - gl[:, :, lo - first: hi - first], axis=-1)
    pu, pl = paths_up.positions(), paths_lw.positions()
    zeros = np.zeros(gu.shape[:2] + (1,))
    d = np.concatenate([zeros, np.cumsum(gu - gl, axis=-1)], axis=-1)
    L, Ls, Ll = {}, {}, {}
    for i in (i1, i2):
        for sign in (1, -1):
            cut = sign * 3 * m - first
            tot, s, lg = _boundary_interaction(pu, pl, d, i - first, sign, cut)
            L[(i, sign)], Ls[(i, sign)], Ll[(i, sign)] = tot, s, lg
    return DiagnosticSeries(paths_up.times, E, L, Ls, Ll, i1, i2, m)


def balance_residuals(diag: DiagnosticSeries, beta: float, k0: int = 0) -> np.ndarray:
    """Per replica ``max_t |E(t) - E(t') - beta ∫_{t'}^t flux|`` (trapezoid rule, ``t' = times[k0]``)."""
    t = diag.times[k0:]
    E = diag.E[:, k0:]
    integral = _cumulative_trapezoid(diag.boundary_flux()[:, k0:], t)
    return np.max(np.abs(E - E[:, :1] - beta * integral), axis=1)


def balance_residual(diag: DiagnosticSeries, beta: float, k0: int = 0) -> float:
    """Worst balance residual over replicas."""
    return float(np.max(balance_residuals(diag, beta, k0)))


# ---------------------------------------------------------------- spacing conservation

@dataclass
class SpacingTable:
    m_values: tuple
    deviation: np.ndarray  # (replicas, len(m_values)): |avg_(-m,m) Y(t) - rho|
    time: float
    slope: float  # least-squares slope of log mean deviation against log m

    def mean(self) -> np.ndarray:
        return self.deviation.mean(axis=0)


def spacing_conservation(paths: PathBundle, m_values: Sequence[int], t: float,
                         rho: float = 1.0) -> SpacingTable:
    """``|avg_(-m, m)(Y(t)) - rho|`` per replica; the time is snapped to the grid."""
    k = int(np.argmin(np.abs(paths.times - t)))
    x = paths.positions()
    first = paths.offset
    ms = tuple(int(m) for m in m_values)
    dev = np.empty((x.shape[0], len(ms)))
    for c, m in enumerate(ms):
        if m - first >= x.shape[2] or -m - first < 0:
            raise WindowExhaustedError(f"window does not span ±{m}")
        dev[:, c] = np.abs((x[:, k, m - first] - x[:, k, -m - first]) / (2 * m) - rho)
    mean = dev.mean(axis=0)
    slope = float(np.polyfit(np.log(ms), np.log(mean), 1)[0]) if len(ms) > 1 and np.all(mean > 0) else math.nan
    return SpacingTable(ms, dev, float(paths.times[k]), slope)


def _phi_particle(x: np.ndarray, col: int) -> np.ndarray:
    d = x[..., col, None] - np.delete(x, col, axis=-1)
    return 0.5 * np.sum(1.0 / d, axis=-1)


def spacing_balance(paths: PathBundle, i1: int, i2: int, beta: float) -> np.ndarray:
    """Residual of the average-spacing identity on ``(i1, i2)``, per replica and time.

    Change of ``avg_(i1,i2) Y`` minus ``(B_i2 - B_i1)/(i2 - i1)`` minus
    ``beta ∫ (phi_i2 - phi_i1)/(i2 - i1)`` (trapezoid rule).
    """
    if paths.kind != "particles" or paths.brownian is None:
        raise ValueError("need particle paths with recorded Brownian motions")
    x = paths.values
    first = paths.offset
    c1, c2 = i1 - first, i2 - first
    span = i2 - i1
    avg = (x[:, :, c2] - x[:, :, c1]) / span
    lo = paths.noise_window[0]
    noise = (paths.brownian[:, :, i2 - lo] - paths.brownian[:, :, i1 - lo]) / span
    flux = (_phi_particle(x, c2) - _phi_particle(x, c1)) / span
    return (avg - avg[:, :1]) - noise - beta * _cumulative_trapezoid(flux, paths.times)


# ---------------------------------------------------------------- mesoscopic partition

def _alpha_fraction(alpha: float) -> Fraction:
    return Fraction(alpha).limit_denominator(10**6)


def mesoscopic_endpoint(i: int, alpha: float) -> int:
    """``m_i = floor(|i|^(1/alpha))`` with the sign of ``i``, computed exactly.

    The power is evaluated in 60-digit decimal arithmetic; when the result is
    within rounding of an integer it is settled by an exact integer test on
    ``alpha = p/q``.
    """
    if i == 0:
        return 0
    s = 1 if i > 0 else -1
    a = abs(int(i))
    fr = _alpha_fraction(alpha)
    p, q = fr.numerator, fr.denominator
    with localcontext() as ctx:
        ctx.prec = 60
        v = (Decimal(a).ln() * Decimal(q) / Decimal(p)).exp()
        r = int(v.to_integral_value())
        near = abs(v - r) < Decimal(10) ** -40
    if near and p <= 64:
        m = r if r ** p <= a ** q else r - 1
    else:
        m = int(v)  # floor for positive values
    return s * m


def partition_cells(alpha: float, k: int, b_keys: Sequence[int]) -> dict:
    """Cells ``A_{b,k}`` as gap-key ranges ``[lo, hi)`` for cell keys ``b`` (cell ``b + 1/2``)."""
    out = {}
    for b in b_keys:
        lo = mesoscopic_endpoint(k * b, alpha)
        hi = mesoscopic_endpoint(k * (b + 1), alpha)
        out[int(b)] = (lo, hi)
    return out


def neighbour_ratio(alpha: float, k: int, b_max: int) -> Fraction:
    """Largest ``|A_{b±1,k}| / |A_{b,k}|`` over cell keys ``-b_max..b_max-1`` (exact)."""
    cells = partition_cells(alpha, k, range(-b_max - 1, b_max + 1))
    size = {b: hi - lo for b, (lo, hi) in cells.items()}
    if min(size.values()) <= 0:
        raise DegeneratePartitionError(f"empty cell for alpha={alpha}, k={k}")
    worst = Fraction(0)
    for b in range(-b_max, b_max):
        for nb in (b - 1, b + 1):
            worst = max(worst, Fraction(size[nb], size[b]))
    return worst


@dataclass
class DensityReport:
    min_average: float
    threshold: float
    cells: dict
    worst_cell: int
    worst_time: float

    @property
    def passed(self) -> bool:
        return self.min_average >= self.threshold


def density_partition_check(paths: PathBundle, alpha: float, k: int, rho: float = 1.0) -> DensityReport:
    """Minimum over covered cells and grid times of the cell averages, against ``rho/2``."""
    g = paths.gaps()
    first, stop = paths.offset, paths.offset + g.shape[2]
    b_hi = 0
    while mesoscopic_endpoint(k * (b_hi + 1), alpha) <= stop:
        b_hi += 1
    b_lo = 0
    while mesoscopic_endpoint(k * (b_lo - 1), alpha) >= first:
        b_lo -= 1
    cells = partition_cells(alpha, k, range(b_lo, b_hi))
    if not cells:
        raise WindowExhaustedError("no partition cell fits inside the window")
    best = (math.inf, None, None)
    for b, (lo, hi) in cells.items():
        if hi <= lo:
            raise DegeneratePartitionError(f"cell {b} is empty; increase k")
        avg = g[:, :, lo - first: hi - first].mean(axis=-1)
        r, t = np.unravel_index(np.argmin(avg), avg.shape)
        if avg[r, t] < best[0]:
            best = (float(avg[r, t]), b, float(paths.times[t]))
    return DensityReport(best[0], rho / 2, cells, best[1], best[2])
