"""Counter-based Gaussian noise streams.

Every normal variate is a pure function of ``(seed, stream, particle, step)``,
computed with the Philox4x32-10 block cipher. Results therefore do not depend
on evaluation order, batching or thread layout, and two simulations that share
a seed see exactly the same Brownian increments (common random numbers).
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# stream tags; distinct tags never share counters
STREAM_EULER = 0
STREAM_INIT = 1
STREAM_EXACT = 2
STREAM_LAW_EULER = 3
STREAM_LAW_INIT = 4
STREAM_INNER = 5


def philox4x32(counter, key, rounds: int = 10) -> tuple[np.ndarray, ...]:
    """Vectorised Philox4x32 block function.

    Parameters
    ----------
    counter : sequence of four uint32-valued array-likes (broadcastable)
    key : pair of Python ints (uint32 each)

    Returns
    -------
    Four uint32 arrays with the broadcast shape of the counter words.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    c0, c1, c2, c3 = np.broadcast_arrays(c0, c1, c2, c3)
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ np.uint64(k0), lo1, hi0 ^ c3 ^ np.uint64(k1), lo0
    return tuple(c.astype(np.uint32) for c in (c0, c1, c2, c3))


def _uniform53(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
    # strictly inside (0, 1)
    a = (hi >> np.uint32(5)).astype(np.float64)
    b = (lo >> np.uint32(6)).astype(np.float64)
    return (a * 67108864.0 + b + 0.5) / 9007199254740992.0


class NoiseStream:
    """Deterministic standard-normal generator keyed by ``(seed, stream)``.

    ``normals(particles, steps, d)`` returns an array of shape
    ``broadcast(particles, steps).shape + (d,)``; entry ``[..., r]`` depends
    only on the seed, the stream tag, the particle index, the step index and
    ``r``.
    """

    def __init__(self, seed: int, stream: int = STREAM_EULER):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.stream = int(stream)
        self._key = (seed & 0xFFFFFFFF, seed >> 32)

    def __repr__(self) -> str:
        return f"NoiseStream(seed={self.seed}, stream={self.stream})"

    def normals(self, particles, steps, d: int = 1) -> np.ndarray:
        particles = np.asarray(particles, dtype=np.uint64)
        steps = np.asarray(steps, dtype=np.uint64)
        particles, steps = np.broadcast_arrays(particles, steps)
        n_blocks = (d + 1) // 2
        blocks = np.arange(n_blocks, dtype=np.uint64)
        shape = particles.shape + (n_blocks,)
        c0 = np.broadcast_to(particles[..., None], shape)
        c1 = np.broadcast_to((steps & _MASK32)[..., None], shape)
        c2 = np.broadcast_to((((steps >> _SHIFT32) << np.uint64(16)) | np.uint64(self.stream))[..., None], shape)
        c3 = np.broadcast_to(blocks, shape)
        x0, x1, x2, x3 = philox4x32((c0, c1, c2, c3), self._key)
        u1 = _uniform53(x0, x1)
        u2 = _uniform53(x2, x3)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)
        return z.reshape(particles.shape + (2 * n_blocks,))[..., :d]


def derive_seed(seed: int, *path: int) -> int:
    """Child seed for replication/sub-task ``path`` of a parent seed."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(seed) >> 32, *map(int, path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
