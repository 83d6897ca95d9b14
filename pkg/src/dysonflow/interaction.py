"""Drift functionals of the particle and gap systems.

Scalar functions here are the reference implementations: every sum is
accumulated with ``math.fsum`` (exactly rounded), and the symmetric
particle interaction pairs ``j = i - d`` with ``j = i + d`` before
accumulating.  The ``*_batch`` kernels at the bottom are the vectorised
versions used by the integrators; they agree with the scalar versions to
rounding and are tested against them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .configspace import ConfigError, GapConfig, ParticleConfig


class SingularDriftError(ZeroDivisionError):
    """Coincident particles or a zero gap where ``1/y`` is required."""


@dataclass(frozen=True)
class InteractionParams:
    beta: float = 2.0
    truncation_k: int = 10**6
    tail_tol: float = 1e-3

    def __post_init__(self):
        if self.beta < 1:
            raise ConfigError("beta must be >= 1")
        if self.truncation_k < 1:
            raise ConfigError("truncation_k must be >= 1")


def _window(y: GapConfig, window) -> tuple[int, int]:
    """Particle range ``(lo, hi)`` inclusive; defaults to the stored window."""
    return y.particle_range if window is None else (int(window[0]), int(window[1]))


def _running_sums(vals) -> list[float]:
    """Exactly rounded prefix sums ``s_k = vals[0] + ... + vals[k-1]``, k >= 1."""
    out, acc = [], []
    for v in vals:
        acc.append(float(v))
        out.append(math.fsum(acc))
    return out


# ---------------------------------------------------------------- particles

def phi_sym(x: ParticleConfig, i: int, k: Optional[int] = None) -> float:
    """``1/2 sum_{0<|j-i|<=k} 1/(x_i - x_j)``, summed ring by ring.

    ``k=None`` (or ``k`` past the window edge) gives the full-window drift.
    """
    return phi_sym_tail(x, i, k)[0]


def phi_sym_tail(x: ParticleConfig, i: int, k: Optional[int] = None) -> tuple[float, float]:
    """Partial sum and the magnitude of its last ring, as a remainder estimate."""
    if i not in x:
        raise IndexError(f"particle {i} outside window")
    xi = x.x(i)
    reach = max(i - x.first, x.last - i)
    k = reach if k is None else min(int(k), reach)
    rings = []
    for d in range(1, k + 1):
        pair = []
        for j in (i - d, i + d):
            if j in x:
                diff = xi - x.x(j)
                if diff == 0:
                    raise SingularDriftError(f"particles {i} and {j} coincide")
                pair.append(1.0 / diff)
        rings.append(math.fsum(pair))
    last = abs(rings[-1]) / 2 if rings else 0.0
    return 0.5 * math.fsum(rings), last


# ---------------------------------------------------------------- gaps

def psi_a(yval: float, y: GapConfig, a: int, window=None) -> float:
    """Compression term ``1/2 sum_{|i-a|>1} yval / (z (yval + z))``.

    ``a`` is the gap key (half-integer ``a + 1/2``), ``z`` the total gap between
    gap ``a`` and particle ``i``, and ``i`` runs over the particle window.
    Infinite ``z`` contributes 0.
    """
    if yval < 0:
        raise ValueError("yval must be >= 0")
    if yval == 0:
        return 0.0
    lo, hi = _window(y, window)
    terms = []
    # particles right of the gap: a + 2 .. hi
    if hi >= a + 2:
        for z in _running_sums(y.values(a + 1, hi)):
            if not math.isinf(z):
                terms.append(yval / (z * (yval + z)))
    # particles left of the gap: lo .. a - 1
    if lo <= a - 1:
        for z in _running_sums(y.values(lo, a)[::-1]):
            if not math.isinf(z):
                terms.append(yval / (z * (yval + z)))
    return 0.5 * math.fsum(terms)


def eta_a(y: GapConfig, a: int, window=None) -> float:
    """Gap drift ``1/y_a - psi_a(y_a, y)`` restricted to the particle window."""
    ya = y.y(a)
    if ya == 0:
        raise SingularDriftError(f"gap {a} is zero")
    if math.isinf(ya):
        raise ValueError(f"gap {a} is infinite")
    return 1.0 / ya - psi_a(ya, y, a, window)


def _inv_half_sums(vals) -> list[float]:
    """Terms ``1/(2 s_k)`` for the prefix sums of ``vals``, dropping infinite ones."""
    return [0.5 / s for s in _running_sums(vals) if not math.isinf(s)]


def eta_lw_external(z: float, y: GapConfig, i1: int, i2: int, window=None) -> float:
    """Outer interaction of the block ``(i1, i2)`` carrying an external mass ``z``.

    ``sum_{i' beyond the block} z / (2 (z + w) w)`` with ``w`` the gap from the
    nearer block end to ``i'``, taken on both sides within the window.
    """
    if z < 0:
        raise ValueError("z must be >= 0")
    if z == 0:
        return 0.0
    lo, hi = _window(y, window)
    im, ip = min(i1, i2), max(i1, i2)
    ws = []
    if hi > ip:
        ws += _running_sums(y.values(ip, hi))
    if lo < im:
        ws += _running_sums(y.values(lo, im)[::-1])
    return math.fsum(z / (2.0 * (z + w) * w) for w in ws if not math.isinf(w))


def eta_window_sum(y: GapConfig, i1: int, i2: int, window=None) -> tuple[float, float, float]:
    """``(sum_{a in (i1,i2)} eta_a, eta_up, eta_lw)`` for the block ``(i1, i2)``.

    The resummation identity says ``lhs == up - lw``.
    """
    if i1 == i2:
        return 0.0, 0.0, 0.0
    im, ip = min(i1, i2), max(i1, i2)
    lhs = math.fsum(eta_a(y, a, window) for a in range(im, ip))
    inner = y.values(im, ip)
    up = math.fsum(_inv_half_sums(inner) + _inv_half_sums(inner[::-1]))
    z = math.fsum(inner)
    lw = eta_lw_external(z, y, im, ip, window)
    return lhs, up, lw


def phi_zero_from_gaps(y: GapConfig, anchor: int = 0, window=None) -> float:
    """Interaction of particle ``anchor`` written through the gaps alone."""
    lo, hi = _window(y, window)
    left = _inv_half_sums(y.values(lo, anchor)[::-1]) if lo < anchor else []
    right = _inv_half_sums(y.values(anchor, hi)) if hi > anchor else []
    return math.fsum(left + [-t for t in right])


# ---------------------------------------------------------------- batched kernels

def _inverse_distances(x: np.ndarray) -> np.ndarray:
    """``1/(x_i - x_j)`` with zero diagonal, shape ``(..., N, N)``."""
    d = x[..., :, None] - x[..., None, :]
    n = x.shape[-1]
    d[..., np.arange(n), np.arange(n)] = np.inf
    with np.errstate(divide="raise"):
        return 1.0 / d


def phi_batch(x: np.ndarray) -> np.ndarray:
    """Full-window particle interaction for sorted rows of ``x``."""
    return 0.5 * _inverse_distances(x).sum(axis=-1)


def psi_batch(x: np.ndarray) -> np.ndarray:
    """Compression terms of all gaps of the particle rows ``x``, shape ``(..., N-1)``.

    Uses ``y/(z(y+z)) = y / |x_j - x_l| / |x_j - x_r|`` for the gap ``(l, r)``.
    """
    p = np.abs(_inverse_distances(x))
    y = np.diff(x, axis=-1)
    s = np.einsum("...kj,...kj->...k", p[..., :-1, :], p[..., 1:, :])
    return 0.5 * y * s


def psi_external_batch(y: np.ndarray, z_pos: np.ndarray) -> np.ndarray:
    """``psi_a(y_a, z)`` for every gap, with ``z`` frozen as particle rows ``z_pos``.

    ``y`` has shape ``(..., G)`` and ``z_pos`` shape ``(..., G + 1)``.
    """
    g = y.shape[-1]
    j = np.arange(g + 1)[None, :]
    k = np.arange(g)[:, None]
    right = z_pos[..., None, :] - z_pos[..., 1:, None]
    left = z_pos[..., :-1, None] - z_pos[..., None, :]
    zz = np.where(j > k + 1, right, np.where(j < k, left, np.inf))
    yy = y[..., :, None]
    with np.errstate(invalid="ignore"):
        t = yy / (zz * (yy + zz))
    t = np.where(np.isinf(zz), 0.0, t)
    return 0.5 * t.sum(axis=-1)
