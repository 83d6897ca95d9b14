"""Monotone iteration for the gap system.

Stage 0 runs every gap as an independent Bessel process from its initial
value.  Stage ``n`` runs every gap as a one-dimensional SDE whose
compression ``psi_a(y, .)`` is evaluated against the frozen stage ``n - 1``
path, held constant over each step (left point).  All stages share the time
grid and the driving noise, so the stages decrease pathwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .configspace import ConfigError, GapConfig
from .interaction import InteractionParams, psi_external_batch
from .sde import PathBundle, SchemeSpec, simulate_oneD


class InvariantViolation(RuntimeError):
    """Stages failed to decrease beyond the comparison tolerance."""


@dataclass(frozen=True)
class IterationState:
    y_in: GapConfig
    T: float
    seed: int
    replicas: tuple = (0,)
    gamma: float = 0.0
    paths: tuple = ()

    @property
    def stage(self) -> int:
        """Index of the last computed stage (-1 before stage 0)."""
        return len(self.paths) - 1


def truncate(y_in: GapConfig, gamma: float) -> GapConfig:
    """Initial condition ``y_in ∨ gamma``."""
    if gamma < 0:
        raise ConfigError("gamma must be >= 0")
    return GapConfig(y_in.offset, np.maximum(y_in.gaps, gamma))


def start(y_in: GapConfig, T: float, seed: int, replicas: Sequence[int] = (0,),
          gamma: float = 0.0) -> IterationState:
    y = truncate(y_in, gamma) if gamma > 0 else y_in
    if np.any(y.gaps <= 0) or not y.is_finite():
        raise ConfigError("initial gaps must be finite and positive")
    return IterationState(y, T, seed, tuple(replicas), gamma)


def _compression_force(prev: PathBundle, beta: float):
    zpos = prev.positions()

    def force(y, n, rows):
        return -beta * psi_external_batch(y, zpos[rows, n])
    return force


def iterate_stage(state: IterationState, params: InteractionParams, spec: SchemeSpec,
                  threads: int = 1) -> IterationState:
    """Append the next stage to ``state``."""
    force = None
    if state.paths:
        force = _compression_force(state.paths[-1], params.beta)
    path = simulate_oneD(state.y_in, params.beta, spec, state.T, state.seed, state.replicas,
                         force=force, threads=threads)
    path.meta["stage"] = len(state.paths)
    return replace(state, paths=state.paths + (path,))


@dataclass
class DecreaseReport:
    max_violation: float
    per_pair: list
    coupled: bool
    tol: float

    @property
    def passed(self) -> bool:
        return self.coupled and self.max_violation <= self.tol


def _same_noise(a: PathBundle, b: PathBundle) -> bool:
    return (a.seed == b.seed and a.replicas == b.replicas and a.noise_window == b.noise_window
            and np.array_equal(a.times, b.times))


def check_decreasing(state_or_paths, tol: float) -> DecreaseReport:
    """Largest ``Y^(k+1) - Y^(k)`` over gaps, times and replicas.

    Input that was not driven by one noise realisation is flagged as
    uncoupled and never passes.
    """
    paths = state_or_paths.paths if isinstance(state_or_paths, IterationState) else tuple(state_or_paths)
    if len(paths) < 2:
        raise ValueError("need at least two stages")
    per_pair = [float(np.max(b.values - a.values)) for a, b in zip(paths[:-1], paths[1:])]
    coupled = all(_same_noise(paths[0], p) for p in paths[1:])
    return DecreaseReport(max(0.0, max(per_pair)), per_pair, coupled, tol)


def stage_differences(state: IterationState) -> list[float]:
    """``sup |Y^(n) - Y^(n-1)|`` over the grid, gaps and replicas, for n >= 1."""
    p = state.paths
    return [float(np.max(np.abs(b.values - a.values))) for a, b in zip(p[:-1], p[1:])]


@dataclass
class ToleranceResult:
    path: PathBundle
    n_used: int
    differences: list
    converged: bool
    state: IterationState = field(repr=False)


def iterate_to_tolerance(y_in: GapConfig, gamma: float, n_max: int, eps: float,
                         params: InteractionParams, spec: SchemeSpec, T: float, seed: int,
                         replicas: Sequence[int] = (0,), tol_cmp: Optional[float] = None,
                         threads: int = 1) -> ToleranceResult:
    """Run stages until consecutive stages differ by at most ``eps`` in sup norm.

    Returns the last stage as the surrogate for the decreasing limit.  Raises
    ``InvariantViolation`` when a stage rises above its predecessor by more
    than ``tol_cmp`` (default ``10 dt``).
    """
    tol = 10 * spec.dt if tol_cmp is None else tol_cmp
    state = iterate_stage(start(y_in, T, seed, replicas, gamma), params, spec, threads)
    diffs: list[float] = []
    converged = False
    while state.stage < n_max:
        state = iterate_stage(state, params, spec, threads)
        prev, cur = state.paths[-2], state.paths[-1]
        rise = float(np.max(cur.values - prev.values))
        if rise > tol:
            raise InvariantViolation(f"stage {state.stage} exceeds stage {state.stage - 1} by {rise:.3g}")
        diffs.append(float(np.max(np.abs(cur.values - prev.values))))
        if diffs[-1] <= eps:
            converged = True
            break
    return ToleranceResult(state.paths[-1], state.stage, diffs, converged, state)


def gamma_ladder(y_in: GapConfig, k_values: Sequence[int], n_max: int, eps: float,
                 params: InteractionParams, spec: SchemeSpec, T: float, seed: int,
                 replicas: Sequence[int] = (0,), threads: int = 1) -> list[ToleranceResult]:
    """Limits for truncation levels ``gamma_k = 2**-k`` under shared noise."""
    return [iterate_to_tolerance(y_in, 2.0 ** -k, n_max, eps, params, spec, T, seed, replicas,
                                 threads=threads) for k in k_values]
