"""Counter-based Gaussian noise streams.

A vectorised Philox-4x32-10 block cipher turns an integer counter into
pseudo-random bits.  Because the output depends only on ``(key, counter)``,
noise for path ``p`` at step ``s`` can be generated in any order, in any
batch, and always comes out the same.
"""

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)


def philox4x32(counter, key, rounds=10):
    """Philox-4x32 on a batch of counters.

    Args:
        counter: array of shape (4, n), values in [0, 2**32).
        key: pair of ints in [0, 2**32).
        rounds: number of rounds (10 is the standard choice).

    Returns:
        uint32 array of shape (4, n).
    """
    c = np.asarray(counter, dtype=np.uint64) & _MASK32
    if c.ndim == 1:
        c = c[:, None]
    c0, c1, c2, c3 = (c[i].copy() for i in range(4))
    k0 = np.uint32(int(key[0]) & 0xFFFFFFFF)
    k1 = np.uint32(int(key[1]) & 0xFFFFFFFF)
    with np.errstate(over="ignore"):
        for r in range(rounds):
            if r:
                k0 = np.uint32(k0 + _W0)
                k1 = np.uint32(k1 + _W1)
            p0 = _M0 * c0
            p1 = _M1 * c2
            hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
            hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
            c0, c1, c2, c3 = (
                hi1 ^ c1 ^ np.uint64(k0),
                lo1,
                hi0 ^ c3 ^ np.uint64(k1),
                lo0,
            )
    return np.stack([c0, c1, c2, c3]).astype(np.uint32)


def _key(seed):
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF


def uniforms(seed, ids, step, n, stream=0):
    """53-bit uniforms in (0, 1), shape (len(ids), n).

    Row ``i`` depends only on ``(seed, ids[i], step, stream)``.
    """
    ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
    n_blocks = (n + 1) // 2
    rows = np.repeat(ids, n_blocks)
    blocks = np.tile(np.arange(n_blocks, dtype=np.int64), len(ids))
    ctr = np.stack(
        [
            rows & 0xFFFFFFFF,
            np.full_like(rows, int(step) & 0xFFFFFFFF),
            blocks,
            np.full_like(rows, int(stream) & 0xFFFFFFFF),
        ]
    )
    bits = philox4x32(ctr, _key(seed)).astype(np.uint64)
    # two 53-bit doubles per counter from (x0, x1) and (x2, x3)
    a = ((bits[0] >> np.uint64(5)) << np.uint64(26)) + (bits[1] >> np.uint64(6))
    b = ((bits[2] >> np.uint64(5)) << np.uint64(26)) + (bits[3] >> np.uint64(6))
    u = (np.stack([a, b], axis=1).astype(np.float64) + 0.5) / 2.0**53
    return u.reshape(len(ids), 2 * n_blocks)[:, :n]


def normals(seed, ids, step, n, stream=0):
    """Standard normals of shape (len(ids), n) keyed by (seed, id, step, stream)."""
    m = n + (n % 2)
    u = uniforms(seed, ids, step, m, stream=stream)
    u1, u2 = u[:, 0::2], u[:, 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.empty_like(u)
    z[:, 0::2] = r * np.cos(theta)
    z[:, 1::2] = r * np.sin(theta)
    return z[:, :n]
