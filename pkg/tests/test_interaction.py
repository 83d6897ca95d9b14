import math
from fractions import Fraction as F

import numpy as np
import pytest

from dysonflow import interaction
from dysonflow.configspace import GapConfig, ParticleConfig, to_gaps
from dysonflow.interaction import (
    InteractionParams, SingularDriftError, eta_a, eta_lw_external, eta_window_sum, phi_batch,
    phi_sym, phi_sym_tail, phi_zero_from_gaps, psi_a, psi_batch, psi_external_batch,
)

# positions 0, 1, 3, 4, 7 for particles 0..4; gaps (1, 2, 1, 3)
POS = [0, 1, 3, 4, 7]
Y = GapConfig(0, [1.0, 2.0, 1.0, 3.0])
X = ParticleConfig(0, [float(p) for p in POS])


def exact_phi(pos, i):
    """Half the sum of 1/(x_i - x_j) in exact rational arithmetic."""
    return F(1, 2) * sum(F(1, pos[i] - pos[j]) for j in range(len(pos)) if j != i)


def test_params_validation():
    with pytest.raises(ValueError):
        InteractionParams(beta=0.5)


def test_phi_lattice_cancels():
    x = ParticleConfig.lattice(-10, 10)
    for k in (1, 3, 10, None):
        assert phi_sym(x, 0, k) == 0.0


def test_phi_three_particles():
    assert phi_sym(ParticleConfig(-1, [-1.0, 0.0, 2.0]), 0) == 0.25


def test_phi_matches_exact_sum():
    for i in range(5):
        assert phi_sym(X, i) == pytest.approx(float(exact_phi(POS, i)), rel=1e-15)


def test_phi_tail_estimate_shrinks():
    rng = np.random.default_rng(0)
    x = ParticleConfig(-200, np.arange(-200, 201) + rng.uniform(-0.3, 0.3, 401))
    tails = [phi_sym_tail(x, 0, k)[1] for k in (10, 40, 160)]
    assert tails[0] > tails[1] > tails[2]
    assert tails[2] < 1e-3


def test_coinciding_particles_are_rejected():
    with pytest.raises(ValueError):
        ParticleConfig(0, [0.0, 0.0])
    with pytest.raises(FloatingPointError):
        phi_batch(np.array([[0.0, 0.0, 1.0]]))


def test_psi_frozen_value():
    # gap 3/2 (key 1): particles 0, 3, 4 at gap distances 1, 1, 4 -> (2/3 + 2/3 + 1/12) / 2
    assert psi_a(2.0, Y, 1) == pytest.approx(17 / 24, rel=1e-15)


def test_psi_zero_gap_value():
    assert psi_a(0.0, Y, 1) == 0.0


def test_eta_three_gap_window():
    y = GapConfig(0, [1.0, 1.0, 1.0])
    # middle gap: two outer particles at distance 1, psi = (1/2 + 1/2) / 2
    assert eta_a(y, 1) == pytest.approx(0.5)
    x = ParticleConfig(0, [0.0, 1.0, 2.0, 3.0])
    assert eta_a(y, 1) == pytest.approx(phi_sym(x, 2) - phi_sym(x, 1))


def test_eta_single_gap_window():
    assert eta_a(Y, 1, window=(1, 2)) == 0.5


def test_eta_is_phi_difference_exact():
    for a in range(4):
        assert eta_a(Y, a) == pytest.approx(float(exact_phi(POS, a + 1) - exact_phi(POS, a)), rel=1e-14)


def test_eta_zero_gap_raises():
    with pytest.raises(SingularDriftError):
        eta_a(GapConfig(0, [1.0, 0.0]), 1)


def test_psi_monotone_in_gap_value_and_antitone_in_config():
    rng = np.random.default_rng(1)
    for _ in range(300):
        n = int(rng.integers(3, 15))
        y = GapConfig(0, rng.uniform(0.1, 3.0, n))
        a = int(rng.integers(0, n))
        assert psi_a(1.0, y, a) <= psi_a(2.0, y, a)
        bigger = GapConfig(0, y.gaps * rng.uniform(1.0, 2.0, n))
        assert psi_a(1.0, bigger, a) <= psi_a(1.0, y, a)


def test_window_sum_frozen_values():
    lhs, up, lw = eta_window_sum(Y, 1, 3)
    assert up == pytest.approx(13 / 12, rel=1e-15)
    assert lw == pytest.approx(11 / 24, rel=1e-15)
    assert lhs == pytest.approx(5 / 8, rel=1e-14)


def test_window_sum_single_gap():
    lhs, up, lw = eta_window_sum(Y, 2, 3)
    assert lhs == eta_a(Y, 2)


def test_window_sum_unit_gaps_harmonic():
    # y = 1 on keys -6..5, block (-2, 2): up = 2 * (1/2)(1 + 1/2 + 1/3 + 1/4)
    y = GapConfig.constant(-6, 6)
    lhs, up, lw = eta_window_sum(y, -2, 2)
    assert up == pytest.approx(1 + 1 / 2 + 1 / 3 + 1 / 4)
    # outer particles at distance w = 1..4 on both sides, z = 4
    assert lw == pytest.approx(2 * sum(4 / (2 * (4 + w) * w) for w in range(1, 5)))
    assert lhs == pytest.approx(up - lw, rel=1e-13)


def test_lw_external_zero_and_cross_check():
    assert eta_lw_external(0.0, Y, 1, 3) == 0.0
    assert eta_lw_external(3.0, Y, 1, 3) == eta_window_sum(Y, 1, 3)[2]


def test_lw_external_large_mass_limit():
    # z -> inf: z / (2 (z + w) w) -> 1 / (2 w)
    limit = 1 / (2 * 3) + 1 / (2 * 1)
    assert eta_lw_external(1e12, Y, 1, 3) == pytest.approx(limit, rel=1e-9)


def test_phi_zero_from_gaps_frozen():
    assert phi_zero_from_gaps(Y, 0) == pytest.approx(-145 / 168, rel=1e-15)
    assert phi_zero_from_gaps(Y, 2) == pytest.approx(float(exact_phi(POS, 2)), rel=1e-14)


def test_infinite_gap_contributes_nothing():
    y = GapConfig(0, [1.0, 2.0, math.inf], infinite_outside=True)
    finite = GapConfig(0, [1.0, 2.0])
    assert psi_a(2.0, y, 1) == psi_a(2.0, finite, 1)


def test_batched_kernels_match_scalar():
    rng = np.random.default_rng(2)
    x = np.cumsum(rng.uniform(0.2, 2.0, size=(3, 9)), axis=-1)
    phis = phi_batch(x)
    psis = psi_batch(x)
    for r in range(3):
        cfg = ParticleConfig(0, x[r])
        y = to_gaps(cfg).gaps
        for i in range(9):
            assert phis[r, i] == pytest.approx(phi_sym(cfg, i), rel=1e-12)
        for a in range(8):
            assert psis[r, a] == pytest.approx(psi_a(y.y(a), y, a), rel=1e-12)


def test_external_batch_matches_scalar():
    rng = np.random.default_rng(3)
    z = np.cumsum(rng.uniform(0.2, 2.0, size=8))
    frozen = GapConfig(0, np.diff(z))
    yvals = rng.uniform(0.1, 2.0, size=7)
    got = psi_external_batch(yvals[None, :], (z - z[0])[None, :])[0]
    for a in range(7):
        assert got[a] == pytest.approx(psi_a(yvals[a], frozen, a), rel=1e-12)


def test_eta_uses_module_level_psi(monkeypatch):
    # the selftest mutation harness relies on this lookup
    monkeypatch.setattr(interaction, "psi_a", lambda yval, y, a, window=None: 0.0)
    assert interaction.eta_a(Y, 1) == 0.5
