"""
From finite windows to the infinite system
==========================================

Runs started from the particles inside (-n, n) share noise.  The
trajectory of particle 0 settles as n grows.
"""

from dysonflow.configspace import ParticleConfig
from dysonflow.convergence import coupled_errors, make_windows, spacing_conservation
from dysonflow.sde import SchemeSpec, simulate_particles

spec = SchemeSpec(dt=1e-3)
x = ParticleConfig.lattice(-64, 64)
ladder = make_windows(x, [4, 8, 16, 64])
print("windows:", ladder.windows)

tab = coupled_errors(x, ladder, 2.0, spec, 0.5, 7, range(16))
for n in ladder.n_values:
    print(f"n={n:3d}: median sup error {tab.median(n):.4f}, mean square {tab.mean_power(n):.2e}")

# Average spacing over (-m, m) stays close to 1.
p = simulate_particles(x, 2.0, spec, 0.5, 7, range(8))
print("spacing deviation by m:", spacing_conservation(p, [4, 8, 16, 32], 0.5).mean())
