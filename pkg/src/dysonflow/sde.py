"""Positivity-preserving integrators for the particle, gap, one-dimensional and Bessel SDEs.

Every scheme uses the same Lie splitting per step:

1. add the noise and every non-singular drift explicitly, giving ``b``;
2. resolve the repulsion ``beta / y`` implicitly, i.e. take the positive root
   of ``y**2 - b*y - beta*dt = 0``.

Step 2 always returns a strictly positive gap, whatever the sign of ``b``.
The particle system is advanced through its gaps plus one anchor particle
that moves by its own explicit equation.  If a step leaves a gap below
``substep_floor``, that replica redoes the step as two half steps, splitting
the Brownian increment with a deterministic bridge sample.

All simulators are batched over replicas.  Replicas are processed in fixed
chunks, so the thread count never changes the arithmetic.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .configspace import ConfigError, GapConfig, ParticleConfig
from .interaction import InteractionParams, _inverse_distances, psi_batch
from .noise import NoiseSource, split_increment

IMPLICIT = "implicit-repulsion-splitting"
TAMED = "tamed-explicit"
CHUNK = 16


class StabilityError(RuntimeError):
    """Positivity or ordering could not be restored by step refinement."""

    def __init__(self, msg, step=None, state=None):
        super().__init__(msg if step is None else f"{msg} (step {step})")
        self.step = step
        self.state = state


@dataclass(frozen=True)
class SchemeSpec:
    dt: float = 1e-3
    scheme: str = IMPLICIT
    substep_floor: float = 1e-4
    max_substep_depth: int = 12

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.substep_floor < 0:
            raise ConfigError("substep_floor must be >= 0")
        if self.scheme not in (IMPLICIT, TAMED):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.max_substep_depth < 0:
            raise ConfigError("max_substep_depth must be >= 0")

    def n_steps(self, T: float) -> int:
        n = round(T / self.dt)
        if n < 0 or abs(n * self.dt - T) > 1e-9 * max(1.0, T):
            raise ConfigError(f"T={T} is not a multiple of dt={self.dt}")
        return int(n)


@dataclass
class PathBundle:
    """Trajectories on a time grid, batched over replicas.

    ``values`` has shape ``(replicas, times, coords)``; coordinate ``k`` is
    particle (or gap key) ``offset + k``.  ``brownian`` holds the cumulative
    particle Brownian motions ``B_i(t)`` for particles ``noise_window`` when
    recorded.
    """

    times: np.ndarray
    values: np.ndarray
    kind: str
    offset: int
    seed: int
    replicas: tuple
    noise_window: tuple
    brownian: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_replicas(self) -> int:
        return self.values.shape[0]

    def column(self, index: int) -> np.ndarray:
        """Trajectories of particle/gap ``index``, shape ``(replicas, times)``."""
        k = index - self.offset
        if not 0 <= k < self.values.shape[2]:
            raise IndexError(f"index {index} not in path window")
        return self.values[:, :, k]

    def state(self, k: int, replica: int = 0):
        v = self.values[replica, k]
        if self.kind == "particles":
            return ParticleConfig(self.offset, v)
        return GapConfig(self.offset, v)

    def gaps(self) -> np.ndarray:
        """Gap trajectories whatever the stored kind."""
        return np.diff(self.values, axis=-1) if self.kind == "particles" else self.values

    def positions(self) -> np.ndarray:
        """Particle trajectories; gap paths are anchored at 0 on their first particle."""
        if self.kind == "particles":
            return self.values
        z = np.zeros(self.values.shape[:2] + (1,))
        return np.concatenate([z, np.cumsum(self.values, axis=-1)], axis=-1)

    def csv_rows(self):
        """Rows ``(replica, time, index, value)`` in replica, time, index order."""
        idx = np.arange(self.offset, self.offset + self.values.shape[2])
        for r, rep in enumerate(self.replicas):
            for k, t in enumerate(self.times):
                for i, v in zip(idx, self.values[r, k]):
                    yield rep, float(t), int(i), float(v)


# ---------------------------------------------------------------- scheme core

def repulsion_root(b: np.ndarray, c) -> np.ndarray:
    """Positive root of ``y**2 - b*y - c = 0`` (``c >= 0``), cancellation-free."""
    b = np.asarray(b, dtype=float)
    s = np.sqrt(b * b + 4.0 * c)
    with np.errstate(divide="ignore", invalid="ignore"):
        neg = 2.0 * c / (s - b)
    return np.where(b >= 0, 0.5 * (b + s), neg)


def _finish(y, w, nonsingular, beta, h, scheme):
    """Apply one splitting step to gaps ``y`` with gap noise ``w``."""
    if scheme == IMPLICIT:
        return repulsion_root(y + w + nonsingular * h, beta * h)
    with np.errstate(divide="ignore"):
        d = beta / y + nonsingular
    return y + w + h * d / (1.0 + h * np.abs(d))


def _anchor_column(lo: int, hi: int) -> int:
    return -lo if lo <= 0 <= hi else 0


class _Engine:
    """Batched stepping with adaptive halving for one family of coupled replicas."""

    def __init__(self, kernel, min_gap, noise, replicas, lo, hi, spec: SchemeSpec):
        self.kernel = kernel
        self.min_gap = min_gap
        self.noise = noise
        self.replicas = np.asarray(replicas)
        self.lo, self.hi = lo, hi
        self.spec = spec

    def increments(self, n: int) -> np.ndarray:
        return np.stack([self.noise.increments(self.lo, self.hi, n, self.spec.dt, int(r))
                         for r in self.replicas])

    def advance(self, state, n: int, db: np.ndarray):
        rows = np.arange(len(self.replicas))
        return self._refine(state, db, self.spec.dt, n, rows, 1, 0)

    def _ok(self, new):
        with np.errstate(invalid="ignore"):
            return self.min_gap(new) >= self.spec.substep_floor

    def _refine(self, state, db, h, n, rows, node, depth):
        new = self.kernel(state, db, h, n, rows)
        if depth >= self.spec.max_substep_depth:
            mg = self.min_gap(new)
            if not np.all(np.isfinite(new)) or np.any(~(mg > 0)):
                raise StabilityError("positivity not restored at maximal refinement", n, new)
            return new
        bad = np.nonzero(~self._ok(new))[0]
        if bad.size:
            xi = np.stack([self.noise.bridge_normals(self.lo, self.hi, n, node, int(self.replicas[r]))
                           for r in rows[bad]])
            d1, d2 = split_increment(db[bad], h, xi)
            mid = self._refine(state[bad], d1, h / 2, n, rows[bad], 2 * node, depth + 1)
            new[bad] = self._refine(mid, d2, h / 2, n, rows[bad], 2 * node + 1, depth + 1)
        return new


def _particle_kernel(beta, scheme, anchor):
    def kernel(x, db, h, n, rows):
        if x.shape[-1] == 1:
            return x + db
        inv = _inverse_distances(x)
        p = np.abs(inv)
        y = np.diff(x, axis=-1)
        psi = 0.5 * y * np.einsum("...kj,...kj->...k", p[:, :-1, :], p[:, 1:, :])
        phi_anchor = 0.5 * inv[:, anchor, :].sum(axis=-1)
        y_new = _finish(y, np.diff(db, axis=-1), -beta * psi, beta, h, scheme)
        xa = x[:, anchor] + db[:, anchor] + beta * phi_anchor * h
        return _rebuild(xa, y_new, anchor)
    return kernel


def _rebuild(xa, y, anchor):
    right = xa[:, None] + np.cumsum(y[:, anchor:], axis=-1)
    left = xa[:, None] - np.cumsum(y[:, :anchor][:, ::-1], axis=-1)[:, ::-1]
    return np.concatenate([left, xa[:, None], right], axis=-1)


def _particle_min_gap(x):
    if x.shape[-1] < 2:
        return np.full(x.shape[0], np.inf)
    return np.diff(x, axis=-1).min(axis=-1)


def _gap_min(y):
    if y.shape[-1] == 0:
        return np.full(y.shape[0], np.inf)
    return y.min(axis=-1)


def _gap_kernel(beta, scheme, z_ext):
    def kernel(y, db, h, n, rows):
        pos = np.concatenate([np.zeros((y.shape[0], 1)), np.cumsum(y, axis=-1)], axis=-1)
        drift = -beta * psi_batch(pos)
        if z_ext is not None:
            drift = drift + beta * y * z_ext(n, rows)
        return _finish(y, np.diff(db, axis=-1), drift, beta, h, scheme)
    return kernel


def _oned_kernel(beta, scheme, force):
    def kernel(y, db, h, n, rows):
        f = 0.0 if force is None else force(y, n, rows)
        return _finish(y, np.diff(db, axis=-1), f, beta, h, scheme)
    return kernel


def _chunks(replicas: Sequence[int]):
    replicas = list(replicas)
    return [replicas[i:i + CHUNK] for i in range(0, len(replicas), CHUNK)]


def _run(make_engine, init, n_steps, dt, replicas, record_every, record_brownian, threads, lo, hi):
    """Drive engines chunk by chunk; returns (times, values, brownian)."""
    rec = list(range(0, n_steps + 1, record_every))
    if rec[-1] != n_steps:
        rec.append(n_steps)
    rec_set = {k: j for j, k in enumerate(rec)}

    def one(chunk_idx_and_reps):
        base, reps = chunk_idx_and_reps
        eng = make_engine(reps, base)
        state = np.repeat(init[None, :], len(reps), axis=0).astype(float)
        vals = np.empty((len(reps), len(rec), init.size))
        bm = np.zeros((len(reps), len(rec), hi - lo + 1)) if record_brownian else None
        vals[:, 0] = state
        bsum = np.zeros((len(reps), hi - lo + 1))
        for n in range(n_steps):
            db = eng.increments(n)
            try:
                state = eng.advance(state, n, db)
            except StabilityError as e:
                raise StabilityError(f"replicas {list(reps)}: {e}", n, e.state) from e
            bsum += db
            j = rec_set.get(n + 1)
            if j is not None:
                vals[:, j] = state
                if bm is not None:
                    bm[:, j] = bsum
        return vals, bm

    chunks = []
    base = 0
    for c in _chunks(replicas):
        chunks.append((base, c))
        base += len(c)
    if threads and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(one, chunks))
    else:
        out = [one(c) for c in chunks]
    values = np.concatenate([o[0] for o in out], axis=0)
    brownian = np.concatenate([o[1] for o in out], axis=0) if record_brownian else None
    times = np.array(rec, dtype=float) * dt
    return times, values, brownian


# ---------------------------------------------------------------- simulators

def simulate_particles(x0: ParticleConfig, beta: float, spec: SchemeSpec, T: float, seed: int,
                       replicas: Sequence[int] = (0,), record_every: int = 1,
                       record_brownian: bool = False, threads: int = 1,
                       noise: Optional[NoiseSource] = None) -> PathBundle:
    """Finite-window particle system driven by ``B_i``, ``i`` in the window."""
    InteractionParams(beta=beta)
    lo, hi = x0.first, x0.last
    noise = NoiseSource(seed) if noise is None else noise
    anchor = _anchor_column(lo, hi)
    kernel = _particle_kernel(beta, spec.scheme, anchor)

    def make(reps, base):
        return _Engine(kernel, _particle_min_gap, noise, reps, lo, hi, spec)

    times, values, bm = _run(make, x0.positions, spec.n_steps(T), spec.dt, replicas,
                             record_every, record_brownian, threads, lo, hi)
    return PathBundle(times, values, "particles", lo, seed, tuple(replicas), (lo, hi), bm,
                      {"beta": beta, "dt": spec.dt, "scheme": spec.scheme})


def simulate_gaps(y0: GapConfig, beta: float, spec: SchemeSpec, T: float, seed: int,
                  replicas: Sequence[int] = (0,), z_ext: Optional[Callable] = None,
                  record_every: int = 1, record_brownian: bool = False,
                  threads: int = 1, noise: Optional[NoiseSource] = None) -> PathBundle:
    """Gap system on the window of ``y0`` with external forces.

    ``z_ext(n, rows)`` returns the force ``Z*_a`` held over step ``n`` (left
    point), shaped ``(len(rows), G)`` or broadcastable to it; ``rows`` are
    batch positions (replica ``replicas[rows[k]]``).
    """
    InteractionParams(beta=beta)
    if not y0.is_finite() or np.any(y0.gaps <= 0):
        raise ConfigError("initial gaps must be finite and positive")
    lo, hi = y0.particle_range
    noise = NoiseSource(seed) if noise is None else noise
    reps = list(replicas)

    def make(chunk, base):
        zfun = None
        if z_ext is not None:
            zfun = lambda n, rows: z_ext(n, base + rows)
        return _Engine(_gap_kernel(beta, spec.scheme, zfun), _gap_min, noise, chunk, lo, hi, spec)

    times, values, bm = _run(make, y0.gaps, spec.n_steps(T), spec.dt, reps,
                             record_every, record_brownian, threads, lo, hi)
    return PathBundle(times, values, "gaps", lo, seed, tuple(reps), (lo, hi), bm,
                      {"beta": beta, "dt": spec.dt, "scheme": spec.scheme})


def simulate_oneD(y0: GapConfig, beta: float, spec: SchemeSpec, T: float, seed: int,
                  replicas: Sequence[int] = (0,), force: Optional[Callable] = None,
                  record_every: int = 1, threads: int = 1,
                  noise: Optional[NoiseSource] = None) -> PathBundle:
    """Independent one-dimensional SDEs ``dY_a = dW_a + (beta/Y_a + F_a) dt``.

    ``force(y, n, rows)`` gives ``F`` for every gap of the batch rows at the
    left point of step ``n``; it must vanish at ``y = 0``.  ``force=None`` is
    the Bessel process.
    """
    InteractionParams(beta=beta)
    if np.any(y0.gaps < 0):
        raise ConfigError("initial values must be >= 0")
    lo, hi = y0.particle_range
    noise = NoiseSource(seed) if noise is None else noise

    def make(chunk, base):
        f = None
        if force is not None:
            f = lambda y, n, rows: force(y, n, base + rows)
        return _Engine(_oned_kernel(beta, spec.scheme, f), _gap_min, noise, chunk, lo, hi, spec)

    times, values, bm = _run(make, y0.gaps, spec.n_steps(T), spec.dt, list(replicas),
                             record_every, False, threads, lo, hi)
    return PathBundle(times, values, "gaps", lo, seed, tuple(replicas), (lo, hi), bm,
                      {"beta": beta, "dt": spec.dt, "scheme": spec.scheme})


def simulate_bessel(q0: GapConfig, beta: float, spec: SchemeSpec, T: float, seed: int,
                    replicas: Sequence[int] = (0,), record_every: int = 1,
                    threads: int = 1, noise: Optional[NoiseSource] = None) -> PathBundle:
    """Bessel processes ``dQ_a = dW_a + beta/Q_a dt`` (dimension ``beta + 1``)."""
    return simulate_oneD(q0, beta, spec, T, seed, replicas, None, record_every, threads, noise)


# ---------------------------------------------------------------- single steps

def step_particles(x: ParticleConfig, params: InteractionParams, spec: SchemeSpec,
                   noise: NoiseSource, n: int, replica: int = 0) -> ParticleConfig:
    lo, hi = x.first, x.last
    eng = _Engine(_particle_kernel(params.beta, spec.scheme, _anchor_column(lo, hi)),
                  _particle_min_gap, noise, [replica], lo, hi, spec)
    out = eng.advance(x.positions[None, :].copy(), n, eng.increments(n))
    if out.shape[-1] > 1 and not np.all(np.diff(out[0]) > 0):
        raise StabilityError("ordering violated", n, out[0])
    return ParticleConfig(lo, out[0])


def step_gaps(y: GapConfig, z_ext, params: InteractionParams, spec: SchemeSpec,
              noise: NoiseSource, n: int, replica: int = 0) -> GapConfig:
    """One step of the gap system; ``z_ext`` is the force vector over this step."""
    lo, hi = y.particle_range
    z = None if z_ext is None else (lambda k, rows: np.asarray(z_ext, dtype=float)[None, :])
    eng = _Engine(_gap_kernel(params.beta, spec.scheme, z), _gap_min, noise, [replica], lo, hi, spec)
    out = eng.advance(y.gaps[None, :].copy(), n, eng.increments(n))
    return GapConfig(lo, out[0])


def step_oneD(yval: float, force: Optional[Callable], params: InteractionParams, spec: SchemeSpec,
              noise: NoiseSource, a: int, n: int, replica: int = 0) -> float:
    """One step of ``dY = dW_a + (beta/Y + F(Y, t)) dt`` with ``F(y, t)`` scalar."""
    f = None
    if force is not None:
        f = lambda y, k, rows: np.vectorize(lambda v: force(v, k * spec.dt))(y)
    eng = _Engine(_oned_kernel(params.beta, spec.scheme, f), _gap_min, noise, [replica], a, a + 1, spec)
    out = eng.advance(np.array([[float(yval)]]), n, eng.increments(n))
    return float(out[0, 0])


def step_bessel(q: float, params: InteractionParams, spec: SchemeSpec, noise: NoiseSource,
                a: int, n: int, replica: int = 0) -> float:
    if q < 0:
        raise ValueError("q must be >= 0")
    return step_oneD(q, None, params, spec, noise, a, n, replica)


def simulate(runspec, initial, threads: int = 1) -> PathBundle:
    """Run the system matching ``initial`` under ``runspec`` (see ``RunSpec``)."""
    spec = runspec.scheme_spec()
    reps = list(range(runspec.replicas))
    if isinstance(initial, ParticleConfig):
        return simulate_particles(initial, runspec.beta, spec, runspec.T, runspec.seed, reps,
                                  runspec.record_every, threads=threads)
    if isinstance(initial, GapConfig):
        return simulate_gaps(initial, runspec.beta, spec, runspec.T, runspec.seed, reps,
                             record_every=runspec.record_every, threads=threads)
    raise TypeError(f"cannot simulate {type(initial).__name__}")
