"""Particle and gap configurations, averages, norms and the counting lemmas.

Indexing convention used throughout the package: particle ``i`` is an
integer, and the gap between particles ``i`` and ``i + 1`` (the half-integer
``a = i + 1/2``) is stored under the integer key ``i``.  An interval ``(i, j)``
of gaps is the set of half-integers strictly between the integers ``i`` and
``j``, i.e. keys ``min(i, j), ..., max(i, j) - 1``; its orientation is
irrelevant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

import numpy as np


class AnchorMissingError(ValueError):
    """The particle window does not contain the anchor index 0."""


class NotInvertibleError(ValueError):
    """A gap configuration with an infinite gap has no particle preimage."""


class ConfigError(ValueError):
    """A configuration violates its type invariant."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ParticleConfig:
    """Ordered particle positions ``x[offset], ..., x[offset + n - 1]``."""

    offset: int
    positions: np.ndarray

    def __post_init__(self):
        pos = _frozen(self.positions)
        if pos.ndim != 1:
            raise ConfigError("positions must be one-dimensional")
        if not np.all(np.isfinite(pos)):
            raise ConfigError("positions must be finite")
        if pos.size > 1 and not np.all(np.diff(pos) > 0):
            raise ConfigError("positions must be strictly increasing")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "offset", int(self.offset))

    @property
    def first(self) -> int:
        return self.offset

    @property
    def last(self) -> int:
        return self.offset + self.positions.size - 1

    def __len__(self) -> int:
        return self.positions.size

    def __contains__(self, i: int) -> bool:
        return self.first <= i <= self.last

    def indices(self) -> np.ndarray:
        return np.arange(self.first, self.last + 1)

    def x(self, i: int) -> float:
        if i not in self:
            raise IndexError(f"particle {i} outside window [{self.first}, {self.last}]")
        return float(self.positions[i - self.offset])

    def restrict(self, lo: int, hi: int) -> "ParticleConfig":
        """Sub-window of particles ``lo..hi`` inclusive."""
        if lo < self.first or hi > self.last or lo > hi:
            raise IndexError(f"[{lo}, {hi}] not inside [{self.first}, {self.last}]")
        return ParticleConfig(lo, self.positions[lo - self.offset: hi - self.offset + 1])

    @classmethod
    def lattice(cls, lo: int, hi: int, spacing: float = 1.0) -> "ParticleConfig":
        idx = np.arange(lo, hi + 1)
        return cls(lo, spacing * idx.astype(float))


@dataclass(frozen=True)
class GapConfig:
    """Gaps ``y[offset + k]`` for ``k = 0..n-1`` (key ``i`` holds gap ``i + 1/2``).

    With ``infinite_outside`` every key outside the stored window reads as
    ``+inf`` and contributes ``1/inf = 0`` to interaction sums.
    """

    offset: int
    gaps: np.ndarray
    infinite_outside: bool = False

    def __post_init__(self):
        g = _frozen(self.gaps)
        if g.ndim != 1:
            raise ConfigError("gaps must be one-dimensional")
        if np.any(np.isnan(g)) or np.any(g < 0):
            raise ConfigError("gaps must be non-negative")
        if np.any(np.isinf(g)) and not self.infinite_outside:
            raise ConfigError("infinite gaps require infinite_outside semantics")
        object.__setattr__(self, "gaps", g)
        object.__setattr__(self, "offset", int(self.offset))

    @property
    def first(self) -> int:
        return self.offset

    @property
    def stop(self) -> int:
        return self.offset + self.gaps.size

    def __len__(self) -> int:
        return self.gaps.size

    def keys(self) -> np.ndarray:
        return np.arange(self.first, self.stop)

    @property
    def particle_range(self) -> tuple[int, int]:
        """Particles bounding the stored gaps: ``(first, stop)``."""
        return self.first, self.stop

    def y(self, key: int) -> float:
        if self.first <= key < self.stop:
            return float(self.gaps[key - self.offset])
        if self.infinite_outside:
            return math.inf
        raise IndexError(f"gap key {key} outside [{self.first}, {self.stop})")

    def values(self, lo: int, hi: int) -> np.ndarray:
        """Gaps with keys ``lo..hi-1``, padding with inf when allowed."""
        if lo >= hi:
            return np.empty(0)
        if lo >= self.first and hi <= self.stop:
            return self.gaps[lo - self.offset: hi - self.offset]
        if not self.infinite_outside:
            raise IndexError(f"keys [{lo}, {hi}) outside [{self.first}, {self.stop})")
        out = np.full(hi - lo, math.inf)
        a, b = max(lo, self.first), min(hi, self.stop)
        if a < b:
            out[a - lo: b - lo] = self.gaps[a - self.offset: b - self.offset]
        return out

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.gaps)))

    @classmethod
    def constant(cls, lo: int, hi: int, value: float = 1.0) -> "GapConfig":
        """Gaps with keys ``lo..hi-1`` all equal to ``value``."""
        return cls(lo, np.full(hi - lo, float(value)))


@dataclass(frozen=True)
class AnchoredGapConfig:
    x0: float
    gaps: GapConfig


@dataclass(frozen=True)
class SpaceParams:
    alpha: float = 0.3
    rho: float = 1.0
    p: float = 2.0
    gamma: float = 1.0

    def __post_init__(self):
        errs = []
        if not 0 < self.alpha < 1:
            errs.append("alpha must lie in (0, 1)")
        if not self.rho > 0:
            errs.append("rho must be positive")
        if not self.p > 1:
            errs.append("p must exceed 1")
        if not self.gamma > 0:
            errs.append("gamma must be positive")
        if errs:
            raise ConfigError("; ".join(errs))


def gap_interval(i: int, j: int) -> tuple[int, int]:
    """Key range ``[lo, hi)`` of the half-integer interval ``(i, j)``."""
    return (i, j) if i <= j else (j, i)


# ---------------------------------------------------------------- bijection

def to_gaps(x: ParticleConfig) -> AnchoredGapConfig:
    if 0 not in x:
        raise AnchorMissingError(f"window [{x.first}, {x.last}] does not contain particle 0")
    return AnchoredGapConfig(x.x(0), GapConfig(x.offset, np.diff(x.positions)))


def from_gaps(g: AnchoredGapConfig) -> ParticleConfig:
    y = g.gaps
    if not y.is_finite():
        raise NotInvertibleError("infinite gap present")
    if np.any(y.gaps <= 0):
        raise ConfigError("gaps must be strictly positive to define particles")
    lo, hi = y.particle_range
    if not lo <= 0 <= hi:
        raise AnchorMissingError(f"gap window with particles [{lo}, {hi}] misses particle 0")
    right = g.x0 + np.cumsum(y.values(0, hi))
    left = g.x0 - np.cumsum(y.values(lo, 0)[::-1])[::-1]
    return ParticleConfig(lo, np.concatenate([left, [g.x0], right]))


# ---------------------------------------------------------------- averages

def _as_keys(interval) -> tuple[int, int]:
    i, j = interval
    return gap_interval(int(i), int(j))


def avg_power(y: GapConfig, interval, p: float = 1.0) -> float:
    """``|I|^{-1} sum_{a in I} y_a^p`` over the gap interval ``(i, j)``.

    The empty interval has average 0; an infinite gap makes the average inf.
    """
    lo, hi = _as_keys(interval)
    if lo == hi:
        return 0.0
    vals = y.values(lo, hi)
    if np.any(np.isinf(vals)):
        return math.inf
    return math.fsum(vals ** p) / (hi - lo)


def _prefix(y: GapConfig) -> np.ndarray:
    """``S[k] = sum of stored gaps with keys < first + k``."""
    return np.concatenate([[0.0], np.cumsum(y.gaps)])


def _origin_averages(y: GapConfig, m_max: int, p: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Averages over ``(0, m)`` and ``(0, -m)`` for ``m = 1..m_max``."""
    if y.first > -m_max or y.stop < m_max:
        raise IndexError(f"window [{y.first}, {y.stop}) does not span (-{m_max}, {m_max})")
    right = y.values(0, m_max) ** p
    left = y.values(-m_max, 0)[::-1] ** p
    m = np.arange(1, m_max + 1)
    return np.cumsum(right) / m, np.cumsum(left) / m


def alpha_norm(y: GapConfig, params: SpaceParams, m_max: int) -> float:
    """Truncated norm ``max_{0<|m|<=m_max} |avg_(0,m) y - rho| |m|^alpha``.

    A finite-window proxy for the supremum over all ``m``.
    """
    r, l = _origin_averages(y, m_max)
    w = np.arange(1, m_max + 1) ** params.alpha
    return float(max(np.max(np.abs(r - params.rho) * w), np.max(np.abs(l - params.rho) * w)))


@dataclass(frozen=True)
class MembershipReport:
    alpha_norm: float
    sup_power_avg: float
    min_gap: float
    max_gap: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.alpha_norm, self.sup_power_avg, self.min_gap, self.max_gap)


def membership_report(y: GapConfig, params: SpaceParams, m_max: int) -> MembershipReport:
    """Finite-window diagnostics for the norm ball and the ``p``-regularity class.

    Only gaps with keys in ``(-m_max, m_max)`` are examined, so infinite
    gaps outside that range are ignored.
    """
    rp, lp = _origin_averages(y, m_max, params.p)
    inner = y.values(-m_max, m_max)
    return MembershipReport(
        alpha_norm=alpha_norm(y, params, m_max),
        sup_power_avg=float(max(rp.max(), lp.max())),
        min_gap=float(inner.min()),
        max_gap=float(inner.max()),
    )


# ---------------------------------------------------------------- counting lemmas

def _window_edge(y: GapConfig, j: float, sign: int) -> int:
    lo, hi = y.particle_range
    if math.isinf(j):
        return hi if sign > 0 else lo
    return int(j)


def prefix_averages(y: GapConfig, i: int, j: int) -> np.ndarray:
    """Averages ``avg_(i, i')`` for ``i'`` running through ``(i, j]`` away from ``i``."""
    if j == i:
        return np.empty(0)
    if j > i:
        vals = y.values(i, j)
    else:
        vals = y.values(j, i)[::-1]
    with np.errstate(invalid="ignore"):
        return np.cumsum(vals) / np.arange(1, vals.size + 1)


def h_stat(y: GapConfig, i: int, j) -> float:
    """``inf_{i' in (i, j]} avg_(i, i')``; ``j = +-inf`` stops at the window edge."""
    j = _window_edge(y, j, 1 if j > i else -1)
    if j == i:
        raise ValueError("h_stat needs i != j")
    return float(np.min(prefix_averages(y, i, j)))


def goodset_find(y: GapConfig, i1: int, i2: int, i3, gamma: float) -> Optional[int]:
    """Return the last-touch index ``i*`` with ``h_(i*, i3) >= gamma``.

    Works for ``i1 < i2 <= i3`` (rightward) or ``i3 <= i2 < i1`` (leftward);
    ``i3`` may be ``+-inf``, meaning the edge of the stored window.  Returns
    None when some ``i`` in ``[i2, i3]`` has ``avg_(i1, i) <= gamma``.

    The counting function ``f(i)`` is the gap mass between ``i1`` and ``i``;
    ``i*`` is the index in ``[i1, i2]`` farthest from ``i1`` whose graph point
    is not above the line of slope ``gamma`` through ``(i1, 0)``.  With exactly
    representable data (e.g. dyadic gaps) every comparison is exact.
    """
    sign = 1 if i2 > i1 else -1
    if i2 == i1:
        raise ValueError("need i1 != i2")
    i3 = _window_edge(y, i3, sign)
    if (i3 - i2) * sign < 0:
        raise ValueError("need i2 between i1 and i3")
    span = abs(i3 - i1)
    f = np.concatenate([[0.0], np.cumsum(
        y.values(i1, i3) if sign > 0 else y.values(i3, i1)[::-1])])
    d = np.arange(span + 1)
    k2 = abs(i2 - i1)
    # hypothesis: f(i) > gamma * |i - i1| on [i2, i3]
    if not np.all(f[k2:] > gamma * d[k2:]):
        return None
    not_above = np.nonzero(f[: k2 + 1] <= gamma * d[: k2 + 1])[0]
    return i1 + sign * int(not_above[-1])


def _key_counts(A: Iterable[int], lo: int, hi: int) -> np.ndarray:
    """``C[k] = #{a in A : a < lo + k}`` for ``k = 0..hi-lo`` (A as integer keys)."""
    marks = np.zeros(hi - lo, dtype=np.int64)
    for a in A:
        if lo <= a < hi:
            marks[a - lo] += 1
    return np.concatenate([[0], np.cumsum(marks)])


def g_freq(A: Iterable[int], i: int, i_end, window: Optional[tuple[int, int]] = None) -> float:
    """``sup_{j in (i, i_end]} |(i, j) ∩ A| / |j - i|`` with A given as gap keys.

    An infinite ``i_end`` is capped at the edge of ``window`` (particle range).
    """
    A = set(int(a) for a in A)
    if math.isinf(i_end):
        if window is None:
            if not A:
                return 0.0
            window = (min(A), max(A) + 1)
        i_end = window[1] if i_end > 0 else window[0]
        if (i_end - i) * (1 if i_end > i else -1) <= 0:
            return 0.0
    i_end = int(i_end)
    if i_end == i:
        return 0.0
    best = Fraction(0)
    if i_end > i:
        C = _key_counts(A, i, i_end)
        for k in range(1, i_end - i + 1):
            best = max(best, Fraction(int(C[k]), k))
    else:
        C = _key_counts(A, i_end, i)
        n = i - i_end
        for k in range(1, n + 1):
            best = max(best, Fraction(int(C[n] - C[n - k]), k))
    return float(best)


def topple_set(A: Iterable[int], n: int, direction: int, window: tuple[int, int]) -> set[int]:
    """Indices ``i`` in the particle window with ``g_(i, edge)(A) > 1/n``.

    ``direction`` is +1 (look right, up to ``window[1]``) or -1 (look left).
    The toppling bound ``|result| <= n |A|`` is asserted.  All comparisons
    are in integers: ``g > 1/n`` iff some ``j`` has ``n |(i,j) ∩ A| > |j - i|``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    A = set(int(a) for a in A)
    lo, hi = window
    C = _key_counts(A, lo, hi)
    pos = np.arange(lo, hi + 1)
    if direction > 0:
        score = n * C - pos
        # best score among j > i
        suffix = np.maximum.accumulate(score[::-1])[::-1]
        better = np.concatenate([suffix[1:], [np.iinfo(np.int64).min]])
        hit = better > score
    elif direction < 0:
        score = n * C - pos
        # smallest score among j < i
        prefix = np.minimum.accumulate(score)
        before = np.concatenate([[np.iinfo(np.int64).max], prefix[:-1]])
        hit = before < score
    else:
        raise ValueError("direction must be +1 or -1")
    out = set(int(i) for i in pos[hit])
    assert len(out) <= n * len(A), "toppling bound violated"
    return out


# ---------------------------------------------------------------- serialization

def _encode(v: float):
    return "inf" if math.isinf(v) else float(v)


def _decode(v) -> float:
    return math.inf if v == "inf" else float(v)


def config_to_json(cfg) -> str:
    if isinstance(cfg, ParticleConfig):
        d = {"offset": cfg.offset, "positions": [float(v) for v in cfg.positions]}
    elif isinstance(cfg, AnchoredGapConfig):
        d = {"offset": cfg.gaps.offset, "gaps": [_encode(v) for v in cfg.gaps.gaps], "x0": cfg.x0}
    elif isinstance(cfg, GapConfig):
        d = {"offset": cfg.offset, "gaps": [_encode(v) for v in cfg.gaps]}
    else:
        raise TypeError(type(cfg))
    return json.dumps(d)


def config_from_json(text: str):
    d = json.loads(text) if isinstance(text, str) else dict(text)
    if "positions" in d:
        return ParticleConfig(d["offset"], [float(v) for v in d["positions"]])
    vals = [_decode(v) for v in d["gaps"]]
    g = GapConfig(d["offset"], vals, infinite_outside=any(math.isinf(v) for v in vals))
    if "x0" in d and d["x0"] is not None:
        return AnchoredGapConfig(float(d["x0"]), g)
    return g


def config_to_csv_rows(cfg) -> list[tuple[int, float]]:
    """One ``(index, value)`` row per stored particle or gap."""
    if isinstance(cfg, ParticleConfig):
        return [(int(i), float(v)) for i, v in zip(cfg.indices(), cfg.positions)]
    g = cfg.gaps if isinstance(cfg, AnchoredGapConfig) else cfg
    return [(int(i), float(v)) for i, v in zip(g.keys(), g.gaps)]
