"""
Independent reference models
============================

Eigenvalues of a matrix Brownian motion follow the same law as the
particle system, Bessel running maxima scale like sqrt(t), and bulk GUE
spectra serve as a stand-in for the sine process.
"""

import numpy as np
from scipy.stats import ks_2samp

from dysonflow.configspace import ParticleConfig, SpaceParams
from dysonflow.oracles import (
    MatrixEnsembleSpec, matrix_dbm_sample, membership_stats_sine, q_table, sine_like_sample,
    solve_tau,
)
from dysonflow.sde import SchemeSpec, simulate_particles

x0 = ParticleConfig(-2, np.arange(4) - 1.5)
mat = matrix_dbm_sample(MatrixEnsembleSpec(beta=2, N=4, dt=0.5, T=0.5, seed=1, replicas=1000),
                        initial=x0.positions).eigenvalues[:, -1]
sde = simulate_particles(x0, 2.0, SchemeSpec(dt=1e-3), 0.5, 2, range(1000), record_every=500).values[:, -1]
print("KS distance, matrix vs SDE:", ks_2samp(mat.ravel(), sde.ravel()).statistic)

# One noise realisation serves every t, so the ratio below is exactly 2.
tab = q_table([1.0, 4.0], [1.0], 10_000, n_steps=200)
print("q(4,1) / q(1,1):", tab[(4.0, 1.0)].estimate / tab[(1.0, 1.0)].estimate)
tau = solve_tau(0.01, samples=10_000, n_steps=200)
print(f"q(tau, 1) = 0.01 at tau = {tau.tau:.4e}")

s = sine_like_sample(1024, 64, seed=3)
print("points in the window:", s.positions.size)
print(membership_stats_sine(s, SpaceParams(alpha=0.3, p=2.0), 32))
