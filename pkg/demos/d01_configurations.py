"""
Particle and gap configurations
===============================

A configuration is an ordered run of particles with integer labels.  The
gap between particles ``i`` and ``i + 1`` is stored under key ``i``.
"""

import numpy as np

from dysonflow.configspace import (
    GapConfig, ParticleConfig, SpaceParams, avg_power, from_gaps, h_stat, membership_report,
    to_gaps, topple_set,
)

# A perturbed lattice: particles -40..40 around the integers.
rng = np.random.default_rng(0)
x = ParticleConfig(-40, np.arange(-40, 41) + rng.uniform(-0.3, 0.3, 81))
x = ParticleConfig(-40, x.positions - x.x(0))  # put particle 0 at the origin

# Gaps plus the anchor position recover the particles.
g = to_gaps(x)
print("first gaps:", np.round(g.gaps.gaps[:5], 3))
print("round trip error:", np.max(np.abs(from_gaps(g).positions - x.positions)))

# Averages of powers of gaps over an index interval.
print("mean gap on (-10, 10):", avg_power(g.gaps, (-10, 10), 1))
print("mean squared gap on (-10, 10):", avg_power(g.gaps, (-10, 10), 2))

# Truncated membership statistics; these are diagnostics, not proofs.
print(membership_report(g.gaps, SpaceParams(alpha=0.3, rho=1.0, p=2.0), 32))

# Smallest running average of gaps between two particles.
y = GapConfig(0, [3.0, 1.0, 2.0, 0.5])
print("h statistic from 0 to 4:", h_stat(y, 0, 4))

# Toppling a pile of marked sites: at most n |A| sites are reached.
print("toppled set:", sorted(topple_set({2, 3}, 2, 1, (0, 12))))
