"""Deterministic invariant suites: gap identities, counting lemmas, round trips.

Random configurations use dyadic positions (integers times 2**-16), so all
position differences are exact and only the drift sums carry rounding.
Relative errors are measured against the sum of the absolute values of
the terms involved, which is the scale that rounding actually acts on.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import interaction
from .configspace import (
    GapConfig, ParticleConfig, config_from_json, config_to_csv_rows, config_to_json,
    from_gaps, goodset_find, h_stat, to_gaps, topple_set,
)

DYADIC = 2.0 ** -16
IDENTITY_TOL = 1e-12


@dataclass
class SuiteResult:
    name: str
    passed: bool
    cases: int
    worst: float  # worst relative error, or number of failing cases for exact suites
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.cases} cases, worst={self.worst:.3g}, {self.seconds:.2f}s"


def random_particles(rng: np.random.Generator, max_n: int = 20) -> ParticleConfig:
    """Ordered dyadic configuration with 2..max_n particles around 0, some nearly touching."""
    n = int(rng.integers(2, max_n + 1))
    steps = rng.integers(1, 1 << 18, size=n - 1)
    tiny = rng.random(n - 1) < 0.1
    steps[tiny] = rng.integers(1, 64, size=int(tiny.sum()))
    start = int(rng.integers(-(1 << 20), 1 << 20))
    pos = (start + np.concatenate([[0], np.cumsum(steps)])) * DYADIC
    return ParticleConfig(-int(rng.integers(0, n)), pos)


def _gaps_of(x: ParticleConfig) -> GapConfig:
    return to_gaps(x).gaps


def _abs_phi(x: ParticleConfig, i: int) -> float:
    xi = x.x(i)
    return 0.5 * math.fsum(1.0 / abs(xi - x.x(j)) for j in x.indices() if j != i)


def phifs_case(x: ParticleConfig) -> float:
    """Worst relative error of ``eta_a = phi_(a+1) - phi_a`` over the gaps of ``x``."""
    y = _gaps_of(x)
    worst = 0.0
    for a in range(x.first, x.last):
        lhs = interaction.eta_a(y, a)
        rhs = interaction.phi_sym(x, a + 1) - interaction.phi_sym(x, a)
        scale = _abs_phi(x, a + 1) + _abs_phi(x, a)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def resum1_case(x: ParticleConfig, rng: np.random.Generator) -> float:
    """Relative error of ``sum eta = eta_up - eta_lw`` on a random block."""
    y = _gaps_of(x)
    i1, i2 = sorted(int(v) for v in rng.choice(np.arange(x.first, x.last + 1), 2, replace=False))
    lhs, up, lw = interaction.eta_window_sum(y, i1, i2)
    scale = up + lw + math.fsum(1.0 / y.y(a) + interaction.psi_a(y.y(a), y, a) for a in range(i1, i2))
    return abs(lhs - (up - lw)) / scale


def _identity_suite(name: str, case: Callable, cases: int, seed: int) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 1 if name == "phifS" else 2])
    worst = 0.0
    for _ in range(cases):
        x = random_particles(rng)
        worst = max(worst, case(x, rng))
    return SuiteResult(name, worst <= IDENTITY_TOL, cases, worst, time.perf_counter() - t0)


def suite_phifs(cases: int = 200, seed: int = 0) -> SuiteResult:
    return _identity_suite("phifS", lambda x, rng: phifs_case(x), cases, seed)


def suite_resum1(cases: int = 200, seed: int = 0) -> SuiteResult:
    return _identity_suite("resum1", resum1_case, cases, seed)


# ---------------------------------------------------------------- counting lemmas

def goodset_case(rng: np.random.Generator) -> tuple[bool, bool]:
    """``(ok, hypothesis_held)`` for one random instance of the counting lemma.

    Gaps are multiples of 1/8 and the slope is a multiple of 1/8, so every
    average comparison is exact.
    """
    n = int(rng.integers(3, 40))
    gaps = rng.integers(0, 17, size=n) / 8.0
    y = GapConfig(int(rng.integers(-10, 10)), gaps)
    lo, hi = y.particle_range
    gamma = int(rng.integers(1, 9)) / 8.0
    i1 = int(rng.integers(lo, hi + 1))
    if (i1 < hi and rng.random() < 0.5) or i1 == lo:
        i2 = int(rng.integers(i1 + 1, hi + 1))
        i3 = math.inf if rng.random() < 0.2 else int(rng.integers(i2, hi + 1))
        sign = 1
    else:
        i2 = int(rng.integers(lo, i1))
        i3 = -math.inf if rng.random() < 0.2 else int(rng.integers(lo, i2 + 1))
        sign = -1
    end = (hi if sign > 0 else lo) if math.isinf(i3) else i3
    found = goodset_find(y, i1, i2, i3, gamma)
    # independent hypothesis check: avg_(i1, i) > gamma for i in [i2, end]
    held = all(y.values(min(i1, i), max(i1, i)).sum() > gamma * abs(i - i1)
               for i in range(i2, end + sign, sign))
    if found is None:
        return not held, held
    if not held or not min(i1, i2) <= found <= max(i1, i2):
        return False, held
    if found == end:
        return True, held
    return h_stat(y, found, i3) >= gamma, held


def topple_case(rng: np.random.Generator) -> bool:
    """Compare ``topple_set`` with a brute-force integer count and check the bound."""
    lo = int(rng.integers(-20, 5))
    hi = lo + int(rng.integers(1, 40))
    density = rng.random() * 0.5
    A = {int(k) for k in range(lo, hi) if rng.random() < density}
    n = int(rng.integers(1, 6))
    below = [0]  # below[k] = #{a in A : a < lo + k}
    for k in range(lo, hi):
        below.append(below[-1] + (k in A))
    ok = True
    for direction in (1, -1):
        got = topple_set(A, n, direction, (lo, hi))
        want = set()
        for i in range(lo, hi + 1):
            js = range(i + 1, hi + 1) if direction > 0 else range(lo, i)
            for j in js:
                count = abs(below[j - lo] - below[i - lo])
                if n * count > abs(j - i):
                    want.add(i)
                    break
        ok &= got == want and len(got) <= n * len(A)
    return ok


def suite_goodset(cases: int = 2000, seed: int = 0) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 3])
    fails = held = 0
    for _ in range(cases):
        ok, h = goodset_case(rng)
        fails += not ok
        held += h
    # the suite is only meaningful when the hypothesis is exercised
    passed = fails == 0 and held >= cases // 10
    return SuiteResult("goodset", passed, cases, float(fails), time.perf_counter() - t0)


def suite_topple(cases: int = 1000, seed: int = 0) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 4])
    fails = sum(not topple_case(rng) for _ in range(cases))
    return SuiteResult("topple", fails == 0, cases, float(fails), time.perf_counter() - t0)


# ---------------------------------------------------------------- round trips

def suite_roundtrip(cases: int = 200, seed: int = 0) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, 5])
    fails = 0
    for _ in range(cases):
        x = random_particles(rng)
        g = to_gaps(x)
        back = from_gaps(g)
        fails += not (back.offset == x.offset and np.array_equal(back.positions, x.positions))
        for cfg in (x, g, g.gaps):
            again = config_from_json(config_to_json(cfg))
            fails += config_to_csv_rows(again) != config_to_csv_rows(cfg)
        inf_cfg = GapConfig(x.first, np.append(g.gaps.gaps, math.inf), infinite_outside=True)
        fails += config_to_csv_rows(config_from_json(config_to_json(inf_cfg))) != config_to_csv_rows(inf_cfg)
    return SuiteResult("round-trips", fails == 0, cases, float(fails), time.perf_counter() - t0)


SUITES = {
    "resum1": suite_resum1,
    "phifS": suite_phifs,
    "goodset": suite_goodset,
    "topple": suite_topple,
    "round-trips": suite_roundtrip,
}


def run_all(seed: int = 0) -> list[SuiteResult]:
    return [fn(seed=seed) for fn in SUITES.values()]
