"""Counter-based Gaussian increments keyed by ``(seed, replica, step, particle)``.

Each ``(seed, replica, step)`` triple keys a Philox generator; the particle
index selects a fixed word position in its output stream, reached with
``Philox.advance``.  A value therefore never depends on which other
indices, steps or replicas were requested, on the window size, or on
the thread that asked for it.  Gap noise is always the difference of two
particle increments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

# Particle index i lives at word position i + _INDEX_SHIFT of its stream.
_INDEX_SHIFT = 1 << 40
_MAIN_LANE = 0
_BRIDGE_LANE = 1


def _split64(v: int) -> list[int]:
    v &= (1 << 64) - 1
    return [v & 0xFFFFFFFF, v >> 32]


def _words_to_normals(w: np.ndarray) -> np.ndarray:
    u = ((w >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass(frozen=True)
class NoiseSource:
    seed: int

    def _stream(self, replica: int, step: int, lane: int, node: int) -> np.random.Philox:
        # fixed-length key: SeedSequence treats trailing zero words as absent
        ent = _split64(self.seed) + _split64(replica) + _split64(step) + [lane, node, 0x5EED]
        key = np.random.SeedSequence(ent).generate_state(2, np.uint64)
        return np.random.Philox(key=key)

    def _normals(self, lo: int, hi: int, replica: int, step: int, lane: int, node: int) -> np.ndarray:
        if hi < lo:
            raise ValueError("empty index range")
        start = lo + _INDEX_SHIFT
        first_block = start // 4
        bg = self._stream(replica, step, lane, node)
        bg.advance(first_block)
        n_blocks = (hi + _INDEX_SHIFT) // 4 - first_block + 1
        words = bg.random_raw(4 * n_blocks)
        s = start - 4 * first_block
        return _words_to_normals(words[s: s + hi - lo + 1])

    def normals(self, lo: int, hi: int, step: int, replica: int = 0) -> np.ndarray:
        """Standard normals for particles ``lo..hi`` at time step ``step``."""
        return self._normals(lo, hi, replica, step, _MAIN_LANE, 0)

    def increments(self, lo: int, hi: int, step: int, dt: float, replica: int = 0) -> np.ndarray:
        """Brownian increments ``B_i(t_{n+1}) - B_i(t_n)`` for particles ``lo..hi``."""
        return math.sqrt(dt) * self.normals(lo, hi, step, replica)

    def block(self, lo: int, hi: int, n_steps: int, dt: float, replica: int = 0,
              first_step: int = 0) -> np.ndarray:
        """Increments for steps ``first_step ..`` as an array ``(n_steps, hi - lo + 1)``."""
        return np.stack([self.increments(lo, hi, first_step + n, dt, replica)
                         for n in range(n_steps)]) if n_steps else np.empty((0, hi - lo + 1))

    def bridge_normals(self, lo: int, hi: int, step: int, node: int, replica: int = 0) -> np.ndarray:
        """Normals that split the increment of step ``step`` at refinement node ``node``.

        Nodes number a binary tree: the whole step is node 1 and the halves of
        node ``c`` are ``2c`` and ``2c + 1``.
        """
        return self._normals(lo, hi, replica, step, _BRIDGE_LANE, node)


def split_increment(db: np.ndarray, dt: float, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Brownian-bridge midpoint split of an increment ``db`` over a step ``dt``."""
    first = 0.5 * db + 0.5 * math.sqrt(dt) * xi
    return first, db - first


def gap_increments(db: np.ndarray) -> np.ndarray:
    """``W_a = B_{a+1/2} - B_{a-1/2}`` along the last axis."""
    return np.diff(db, axis=-1)


def replica_seed(seed: int, replica: int) -> int:
    """A 64-bit seed for independent sub-experiments derived from ``(seed, replica)``."""
    st = np.random.SeedSequence(_split64(seed) + _split64(replica) + [7, 0x5EED]).generate_state(2, np.uint32)
    return int(st[0]) | (int(st[1]) << 32)


class ZeroNoise(NoiseSource):
    """All increments zero: turns every SDE into its drift ODE."""

    def __init__(self):
        super().__init__(0)

    def _normals(self, lo, hi, replica, step, lane, node):
        return np.zeros(hi - lo + 1)
