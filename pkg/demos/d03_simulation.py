"""
Simulating the particle and gap systems
=======================================

All integrators share one counter-based noise source, so two systems
run with the same seed see the same Brownian motions.
"""

import math

import numpy as np

from dysonflow.configspace import GapConfig, ParticleConfig
from dysonflow.noise import ZeroNoise
from dysonflow.sde import SchemeSpec, simulate_bessel, simulate_gaps, simulate_particles

spec = SchemeSpec(dt=1e-3)

# Without noise two particles separate like sqrt(1 + 2 beta t).
p = simulate_particles(ParticleConfig(0, [0.0, 1.0]), 2.0, spec, 1.0, 0, noise=ZeroNoise())
gap = p.values[0, -1, 1] - p.values[0, -1, 0]
print(f"noise-free gap at t=1: {gap:.5f}, exact {math.sqrt(5):.5f}")

# Eleven particles on the lattice, 8 replicas.
p = simulate_particles(ParticleConfig.lattice(-5, 5), 2.0, spec, 0.5, 1, range(8))
print("smallest gap seen:", p.gaps().min())
print("particle 0 at t=0.5 per replica:", np.round(p.column(0)[:, -1], 3))

# The gap system is the same dynamics written in gaps.
g = simulate_gaps(GapConfig.constant(-5, 5), 2.0, spec, 0.5, 1, range(8))
print("mean gap at t=0.5:", g.values[:, -1].mean())

# Bessel paths from 0: E Q(t)^2 = 2 (beta + 1) t.
q = simulate_bessel(GapConfig(0, np.zeros(2000)), 1.0, spec, 1.0, 3, record_every=1000)
print("E Q(1)^2:", np.mean(q.values[0, -1] ** 2), "expected 4")
