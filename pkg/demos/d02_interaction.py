"""
Drift functionals
=================

The particle drift is half the sum of inverse distances.  The gap drift
splits into a repulsion ``1/y`` and a compression from every other
particle, and sums of gap drifts over a block resum into an inner and an
outer part.
"""

from dysonflow.configspace import GapConfig, ParticleConfig
from dysonflow.interaction import eta_a, eta_window_sum, phi_sym, psi_a

x = ParticleConfig(0, [0.0, 1.0, 3.0, 4.0, 7.0])
y = GapConfig(0, [1.0, 2.0, 1.0, 3.0])

for i in range(5):
    print(f"particle {i}: drift {phi_sym(x, i):+.6f}")

# The gap drift equals the difference of the two particle drifts.
for a in range(4):
    direct = phi_sym(x, a + 1) - phi_sym(x, a)
    print(f"gap {a}: {eta_a(y, a):+.12f}  vs particle difference {direct:+.12f}")

# Compression on gap 1 when that gap takes the value 2.
print("compression:", psi_a(2.0, y, 1))

# Block sum on keys 1..2: inner part minus outer part.
total, inner, outer = eta_window_sum(y, 1, 3)
print(f"block sum {total:.12f} = {inner:.12f} - {outer:.12f}")
