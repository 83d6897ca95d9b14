import math
from fractions import Fraction

import numpy as np
import pytest

from dysonflow.configspace import GapConfig, ParticleConfig
from dysonflow.convergence import (
    WindowExhaustedError, balance_residual, balance_residuals, correlation_counts, coupled_errors,
    density_partition_check, make_windows, mesoscopic_endpoint, nested_gap_violation,
    neighbour_ratio, partition_cells, spacing_balance, spacing_conservation,
    uniqueness_diagnostics,
)
from dysonflow.sde import SchemeSpec, simulate_gaps, simulate_particles

SPEC = SchemeSpec(dt=1e-3)


# ---------------------------------------------------------------- windows

def test_windows_on_integers():
    ladder = make_windows(ParticleConfig.lattice(-40, 40), [4, 8, 16])
    assert ladder.windows == {4: (-3, 3), 8: (-7, 7), 16: (-15, 15)}


def test_windows_match_scan_on_random_config():
    rng = np.random.default_rng(0)
    pos = np.cumsum(rng.uniform(0.1, 2.0, 200))
    pos -= pos[100]
    x = ParticleConfig(-100, pos)
    ladder = make_windows(x, [3, 7.5, 20])
    for n, (lo, hi) in ladder.windows.items():
        inside = [i for i in range(-100, 100) if -n < x.x(i) < n]
        assert (lo, hi) == (min(inside), max(inside))


def test_windows_on_even_integers():
    x = ParticleConfig(-20, 2.0 * np.arange(-20, 21))
    assert make_windows(x, [5, 6]).windows == {5: (-2, 2), 6: (-2, 2)}


def test_windows_need_coverage():
    with pytest.raises(WindowExhaustedError):
        make_windows(ParticleConfig.lattice(-5, 5), [8])


# ---------------------------------------------------------------- coupled errors

def test_coupled_errors_reference_is_zero_and_errors_shrink():
    x = ParticleConfig.lattice(-32, 32)
    ladder = make_windows(x, [4, 8, 32])
    tab = coupled_errors(x, ladder, 2.0, SPEC, 0.2, 1, range(8))
    assert np.all(tab.sup_errors[32] == 0)
    assert tab.median(4) > tab.median(8) > 0
    rows = list(tab.rows())
    assert len(rows) == 3 * 8 and rows[-1] == (32, 7, 0.0)


def test_coupled_errors_mark_missing_particle():
    x = ParticleConfig.lattice(-16, 16)
    tab = coupled_errors(x, make_windows(x, [2, 16]), 2.0, SPEC, 0.01, 0, range(2), tracked=5)
    assert tab.sup_errors[2] is None and math.isnan(tab.median(2))


def test_larger_window_has_smaller_gaps():
    small = simulate_particles(ParticleConfig.lattice(-4, 4), 2.0, SPEC, 0.2, 3, range(4))
    large = simulate_particles(ParticleConfig.lattice(-12, 12), 2.0, SPEC, 0.2, 3, range(4))
    assert nested_gap_violation(small, large) <= 10 * SPEC.dt
    assert nested_gap_violation(large, small) > 0.01


# ---------------------------------------------------------------- correlation counts

def test_correlation_counts_lattice_and_disjoint():
    p = simulate_particles(ParticleConfig.lattice(-10, 10), 2.0, SPEC, 0.01, 0, range(3))
    assert list(correlation_counts(p, [((-3, 3), 0.0)])) == [5, 5, 5]
    assert list(correlation_counts(p, [((-3, 3), 0.0), ((50, 60), 0.01)])) == [0, 0, 0]


# ---------------------------------------------------------------- uniqueness diagnostics

def gap_pair(beta, dt, replicas=range(16)):
    spec = SchemeSpec(dt=dt)
    up = simulate_gaps(GapConfig.constant(-16, 16, 1.0), beta, spec, 0.5, 3, replicas)
    lw = simulate_gaps(GapConfig.constant(-16, 16, 0.9), beta, spec, 0.5, 3, replicas)
    return up, lw


def test_diagnostics_vanish_for_identical_paths():
    up, _ = gap_pair(2.0, 1e-3, (0,))
    d = uniqueness_diagnostics(up, up, -4, 4, 2)
    assert np.all(d.E == 0)
    assert all(np.all(v == 0) for v in d.L.values())


def test_diagnostics_split_and_sign():
    up, lw = gap_pair(2.0, 1e-3, range(4))
    d = uniqueness_diagnostics(up, lw, -4, 4, 2)
    assert d.E.min() > 0
    for key in d.L:
        assert np.allclose(d.L[key], d.L_short[key] + d.L_long[key], rtol=0, atol=1e-12)


@pytest.mark.parametrize("beta", [1.0, 2.0])
def test_balance_residual_is_a_discretisation_error(beta):
    # the residual is a scheme error: it shrinks as the step shrinks
    res, worst = {}, {}
    for dt in (2e-3, 5e-4):
        d = uniqueness_diagnostics(*gap_pair(beta, dt), -4, 4, 2)
        res[dt] = float(np.mean(balance_residuals(d, beta)))
        worst[dt] = balance_residual(d, beta)
    print(f"beta={beta} mean residual {res} worst {worst}")
    assert res[5e-4] < 0.75 * res[2e-3]
    assert worst[5e-4] < 0.05


# ---------------------------------------------------------------- spacing

def test_spacing_deviation_at_time_zero():
    p = simulate_particles(ParticleConfig.lattice(-20, 20), 2.0, SPEC, 0.05, 0, range(2))
    tab = spacing_conservation(p, [4, 8, 16], 0.0)
    assert np.all(tab.deviation == 0) and math.isnan(tab.slope)
    later = spacing_conservation(p, [4, 8, 16], 0.05)
    assert later.time == pytest.approx(0.05)
    with pytest.raises(WindowExhaustedError):
        spacing_conservation(p, [32], 0.05)


def test_spacing_balance_residual_small():
    p = simulate_particles(ParticleConfig.lattice(-40, 40), 2.0, SPEC, 0.25, 2, range(4),
                           record_brownian=True)
    r = spacing_balance(p, -8, 8, 2.0)
    assert np.all(r[:, 0] == 0)
    assert np.max(np.abs(r)) <= 5 * SPEC.dt
    with pytest.raises(ValueError):
        spacing_balance(simulate_particles(ParticleConfig.lattice(-2, 2), 2.0, SPEC, 0.01, 0), -1, 1, 2.0)


# ---------------------------------------------------------------- mesoscopic partition

def brute_endpoint(i, alpha):
    # largest m with m**p <= |i|**q for alpha = p/q
    fr = Fraction(alpha).limit_denominator(10**6)
    p, q = fr.numerator, fr.denominator
    m = 0
    while (m + 1) ** p <= abs(i) ** q:
        m += 1
    return m if i >= 0 else -m


def test_mesoscopic_endpoint_exact_powers():
    assert mesoscopic_endpoint(5, 1 / 3) == 125
    assert mesoscopic_endpoint(-7, 0.5) == -49
    assert mesoscopic_endpoint(0, 0.3) == 0
    assert mesoscopic_endpoint(8, 0.75) == 16


@pytest.mark.parametrize("alpha", [0.25, 0.3, 0.4, 0.5, 2 / 3, 0.75, 0.9])
def test_mesoscopic_endpoint_matches_integer_search(alpha):
    for i in range(-12, 13):
        assert mesoscopic_endpoint(i, alpha) == brute_endpoint(i, alpha)


def test_partition_cells_tile_the_keys():
    cells = partition_cells(0.5, 2, range(-3, 3))
    keys = sorted(cells)
    for a, b in zip(keys[:-1], keys[1:]):
        assert cells[a][1] == cells[b][0]
    assert cells[0] == (0, 4) and cells[-1] == (-4, 0)


def test_neighbour_ratio_by_enumeration():
    for alpha, k in [(0.5, 1), (0.3, 2), (0.8, 3)]:
        cells = partition_cells(alpha, k, range(-6, 6))
        size = {b: hi - lo for b, (lo, hi) in cells.items()}
        brute = max(Fraction(size[nb], size[b]) for b in range(-5, 5) for nb in (b - 1, b + 1))
        assert neighbour_ratio(alpha, k, 5) == brute


def test_neighbour_ratio_bound_and_its_edge():
    # the innermost ratio is about 2**(1/alpha) - 1
    assert neighbour_ratio(0.25, 1, 8) <= 16
    assert neighbour_ratio(0.2, 1, 8) > 16


def test_density_check_on_constant_and_lattice_paths():
    p = simulate_gaps(GapConfig.constant(-64, 64, 1.5), 2.0, SPEC, 0.0, 0)
    rep = density_partition_check(p, 0.5, 2, rho=1.5)
    assert rep.min_average == 1.5 and rep.passed
    assert rep.threshold == 0.75
    assert rep.cells[0] == (0, 4)
    with pytest.raises(WindowExhaustedError):
        density_partition_check(simulate_gaps(GapConfig.constant(-1, 1), 2.0, SPEC, 0.0, 0), 0.3, 4)
