"""Run specifications: one JSON object per experiment, validated as a whole."""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass
from typing import Optional

from .sde import IMPLICIT, TAMED, SchemeSpec

EXPERIMENTS = ("simulate", "iterate", "converge", "diagnose", "density", "spacing", "oracle", "membership")
ORACLES = ("matrix", "bessel", "sine")
SEED_ENV = "DYSONFLOW_SEED"


class RunSpecError(ValueError):
    """Invalid run specification; ``errors`` lists ``(field, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{f}: {m}" for f, m in self.errors))

    def report(self) -> dict:
        return {"status": "error", "kind": "validation",
                "errors": [{"field": f, "message": m} for f, m in self.errors]}


@dataclass(frozen=True)
class RunSpec:
    experiment: str
    # model
    beta: float = 2.0
    alpha: float = 0.3
    rho: float = 1.0
    p: float = 2.0
    # lattice initial data: N particles for simulate/oracle, particles -window..window otherwise
    N: int = 9
    window: int = 16
    ladder: Optional[tuple] = None
    # time stepping
    dt: float = 1e-3
    T: float = 0.5
    scheme: str = IMPLICIT
    substep_floor: float = 1e-4
    max_substep_depth: int = 12
    record_every: int = 1
    # replicas
    replicas: int = 1
    seed: int = 0
    threads: int = 1
    output: str = "out"
    # iterate
    stages: int = 3
    gamma: float = 0.0
    # converge
    tracked: int = 0
    p_prime: float = 2.0
    # diagnose
    i1: int = -4
    i2: int = 4
    m: int = 2
    delta: float = 0.1
    # spacing
    m_values: tuple = (8, 16, 32, 64)
    # density
    k: int = 4
    # oracle / membership
    oracle: str = "matrix"
    samples: int = 1000
    n_steps: int = 1000
    t_values: tuple = (1.0,)
    p_values: tuple = (1.0,)
    target: Optional[float] = None
    sine_window: int = 32
    m_max: int = 16
    r_min: float = 1.0

    def scheme_spec(self) -> SchemeSpec:
        return SchemeSpec(self.dt, self.scheme, self.substep_floor, self.max_substep_depth)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


_TUPLE_FIELDS = ("ladder", "m_values", "t_values", "p_values")


def _check(spec: RunSpec) -> list[tuple[str, str]]:
    errs = []

    def need(ok, name, msg):
        if not ok:
            errs.append((name, msg))

    need(spec.experiment in EXPERIMENTS, "experiment", f"must be one of {', '.join(EXPERIMENTS)}")
    need(spec.beta >= 1, "beta", "must be >= 1")
    need(0 < spec.alpha < 1, "alpha", "must be in (0, 1)")
    need(spec.rho > 0, "rho", "must be > 0")
    need(spec.p > 1, "p", "must be > 1")
    need(spec.N >= 2, "N", "must be >= 2")
    need(spec.window >= 1, "window", "must be >= 1")
    need(spec.dt > 0, "dt", "must be > 0")
    need(spec.T >= 0, "T", "must be >= 0")
    if spec.dt > 0 and spec.T >= 0:
        n = round(spec.T / spec.dt)
        need(abs(n * spec.dt - spec.T) <= 1e-9 * max(1.0, spec.T), "T", "must be a multiple of dt")
    need(spec.scheme in (IMPLICIT, TAMED), "scheme", f"must be {IMPLICIT!r} or {TAMED!r}")
    need(spec.substep_floor >= 0, "substep_floor", "must be >= 0")
    need(0 <= spec.max_substep_depth <= 30, "max_substep_depth", "must be in [0, 30]")
    need(spec.record_every >= 1, "record_every", "must be >= 1")
    need(spec.replicas >= 1, "replicas", "must be >= 1")
    need(spec.seed >= 0, "seed", "must be >= 0")
    need(spec.threads >= 1, "threads", "must be >= 1")
    need(bool(spec.output), "output", "must be a non-empty path")
    need(spec.stages >= 1, "stages", "must be >= 1")
    need(spec.gamma >= 0, "gamma", "must be >= 0")
    need(spec.p_prime > 0, "p_prime", "must be > 0")
    need(spec.m >= 1, "m", "must be >= 1")
    need(0 <= spec.delta < 1, "delta", "must be in [0, 1)")
    need(spec.k >= 1, "k", "must be >= 1")
    need(spec.oracle in ORACLES, "oracle", f"must be one of {', '.join(ORACLES)}")
    need(spec.samples >= 1000, "samples", "must be >= 1000")
    need(spec.n_steps >= 1, "n_steps", "must be >= 1")
    need(all(t > 0 for t in spec.t_values), "t_values", "must be positive")
    need(spec.target is None or spec.target > 0, "target", "must be > 0")
    need(spec.sine_window >= 1, "sine_window", "must be >= 1")
    need(spec.m_max >= 1, "m_max", "must be >= 1")
    need(spec.r_min > 0, "r_min", "must be > 0")
    need(len(spec.m_values) >= 1 and all(m >= 1 for m in spec.m_values), "m_values", "must be positive integers")
    if spec.experiment == "converge":
        lad = spec.ladder
        need(lad is not None and len(lad) >= 2 and all(a < b for a, b in zip(lad[:-1], lad[1:]))
             and lad[0] >= 1, "ladder", "converge needs a strictly increasing ladder of >= 2 window sizes")
    if spec.experiment == "diagnose":
        need(-spec.window <= min(spec.i1, spec.i2) and max(spec.i1, spec.i2) <= spec.window and spec.i1 != spec.i2,
             "i1", "i1 != i2 must lie in -window..window")
    if spec.experiment == "spacing":
        need(max(spec.m_values) <= spec.window, "m_values", "must not exceed window")
    if spec.experiment == "membership":
        need(spec.alpha < 0.5, "alpha", "membership statistics need alpha < 1/2")
        need(spec.m_max <= spec.sine_window, "m_max", "must not exceed sine_window")
    sine = spec.experiment == "membership" or (spec.experiment == "oracle" and spec.oracle == "sine")
    if sine:
        need(spec.N >= 16 * spec.sine_window, "N", "the sine sampler needs N >= 16 sine_window")
    if spec.experiment == "oracle" and spec.oracle == "matrix":
        need(spec.N <= 64, "N", "the matrix oracle allows N <= 64")
    return errs


def _coerce(name: str, ftype: str, v):
    if name in _TUPLE_FIELDS:
        if v is None:
            return None
        integral = name in ("ladder", "m_values")
        kinds = int if integral else (int, float)
        if not isinstance(v, list) or not all(isinstance(e, kinds) and not isinstance(e, bool) for e in v):
            raise TypeError("must be a list of " + ("integers" if integral else "numbers"))
        return tuple(v) if integral else tuple(float(e) for e in v)
    if ftype == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise TypeError("must be an integer")
        return v
    if ftype in ("float", "Optional[float]"):
        if v is None and ftype != "float":
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise TypeError("must be a finite number")
        return float(v)
    if not isinstance(v, str):
        raise TypeError("must be a string")
    return v


def from_dict(d: dict, env: Optional[dict] = None) -> RunSpec:
    """Build and validate a ``RunSpec``; every offending field is reported at once."""
    env = os.environ if env is None else env
    if not isinstance(d, dict):
        raise RunSpecError([("<root>", "spec must be a JSON object")])
    known = {f.name: f for f in dataclasses.fields(RunSpec)}
    errs = [(k, "unknown field") for k in d if k not in known]
    if "experiment" not in d:
        errs.append(("experiment", "required"))
    kwargs = {}
    for k, v in d.items():
        if k not in known:
            continue
        try:
            kwargs[k] = _coerce(k, known[k].type, v)
        except (TypeError, ValueError) as exc:
            errs.append((k, str(exc)))
    if SEED_ENV in env:
        try:
            kwargs["seed"] = int(env[SEED_ENV])
        except ValueError:
            errs.append(("seed", f"{SEED_ENV} must be an integer"))
    # range checks run on the well-typed fields so that all problems surface together
    spec = RunSpec(**{"experiment": "", **kwargs})
    errs += [e for e in _check(spec) if e[0] not in {f for f, _ in errs}]
    if errs:
        raise RunSpecError(errs)
    return spec


def load(path: str, env: Optional[dict] = None) -> RunSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise RunSpecError([("<file>", str(exc))]) from exc
    return from_dict(d, env)
