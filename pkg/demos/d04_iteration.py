"""
Monotone iteration
==================

Stage 0 runs each gap as a free Bessel process.  Each later stage feels
the compression computed from the previous stage, and the stages
decrease pathwise under shared noise.
"""

from dysonflow.configspace import GapConfig
from dysonflow.interaction import InteractionParams
from dysonflow.iteration import check_decreasing, iterate_stage, iterate_to_tolerance, stage_differences, start
from dysonflow.sde import SchemeSpec

spec = SchemeSpec(dt=1e-3)
params = InteractionParams(beta=2.0)

state = start(GapConfig.constant(-8, 8), 0.5, 4, range(8))
for _ in range(4):
    state = iterate_stage(state, params, spec)

report = check_decreasing(state, 10 * spec.dt)
print("largest rise between stages:", report.max_violation, "passed:", report.passed)
print("stage differences:", [round(d, 4) for d in stage_differences(state)])

res = iterate_to_tolerance(GapConfig.constant(-8, 8), 0.0, 20, 1e-3, params, spec, 0.5, 4, range(8))
print(f"converged={res.converged} after {res.n_used} stages")
