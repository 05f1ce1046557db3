"""NumPy reference kernel for the random-walk oracle.

Vectorized over spins, looped over time steps. Each spin owns a
xoroshiro128+ stream seeded through splitmix64 from ``(seed, spin)``, so the
compiled kernel consumes exactly the same random numbers.
"""
from __future__ import annotations

import numpy as np

MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
TWO_PI = 2.0 * np.pi
MAX_BOUNCES = 100
T_EPS = 1e-12
BARY_EPS = 1e-12


def _u64(x):
    return np.asarray(x, dtype=np.uint64)


def splitmix64(x):
    with np.errstate(over="ignore"):
        z = _u64(x) + GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def seed_states(seed: int, n: int) -> np.ndarray:
    """(n, 2) xoroshiro128+ states for spins ``0..n-1``."""
    with np.errstate(over="ignore"):
        key = _u64(seed & 0xFFFFFFFFFFFFFFFF) * GOLDEN + np.arange(n, dtype=np.uint64)
        s0 = splitmix64(key)
        s1 = splitmix64(key + GOLDEN)
    s = np.column_stack([s0, s1])
    s[(s[:, 0] == 0) & (s[:, 1] == 0), 1] = np.uint64(1)
    return s


def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


def next_u64(state, idx=None):
    """Advance the selected streams in place and return their outputs."""
    if idx is None:
        s0, s1 = state[:, 0], state[:, 1]
    else:
        s0, s1 = state[idx, 0], state[idx, 1]
    with np.errstate(over="ignore"):
        out = s0 + s1
    s1 = s1 ^ s0
    n0 = _rotl(s0, 24) ^ s1 ^ (s1 << np.uint64(16))
    n1 = _rotl(s1, 37)
    if idx is None:
        state[:, 0], state[:, 1] = n0, n1
    else:
        state[idx, 0], state[idx, 1] = n0, n1
    return out


def uniform(state, idx=None):
    return (next_u64(state, idx) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def normal(state, idx=None):
    u1 = uniform(state, idx)
    u2 = uniform(state, idx)
    return np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(TWO_PI * u2)


def first_hits(x, d, cand, v0, e1, e2, exclude):
    """Smallest hit parameter in (T_EPS, 1] of segments ``x + t d`` against candidates.

    ``cand`` is (n, P) with -1 padding. Returns ``(t, tri)`` with ``tri = -1``
    for no hit.
    """
    valid = (cand >= 0) & (cand != exclude[:, None])
    c = np.where(valid, cand, 0)
    a0, a1, a2 = v0[c], e1[c], e2[c]
    dd = d[:, None, :]
    p = np.cross(dd, a2)
    det = np.einsum("npk,npk->np", a1, p)
    ok = valid & (np.abs(det) > 1e-300)
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = x[:, None, :] - a0
    u = np.einsum("npk,npk->np", s, p) * inv
    q = np.cross(s, a1)
    v = np.einsum("npk,npk->np", dd, q) * inv
    t = np.einsum("npk,npk->np", a2, q) * inv
    hit = ok & (u >= -BARY_EPS) & (v >= -BARY_EPS) & (u + v <= 1.0 + BARY_EPS) \
        & (t > T_EPS) & (t <= 1.0)
    t = np.where(hit, t, np.inf)
    k = np.argmin(t, axis=1)
    tmin = t[np.arange(len(t)), k]
    tri = np.where(np.isfinite(tmin), cand[np.arange(len(t)), k], -1)
    return tmin, tri


def walk(pos, state, sub, nsteps, step_std, dF, dirs):
    """Run all spins for ``nsteps`` steps; returns (positions, phase integrals).

    The phase integral per direction is ``Σ_k dF_k u·(x_k + x_{k+1})/2``,
    so the signal for amplitude g is ``mean(exp(-i γ g Φ))``.
    """
    pos = pos.copy()
    n = len(pos)
    phase = np.zeros((n, len(dirs)))
    all_idx = np.arange(n)
    for k in range(nsteps):
        z = np.column_stack([normal(state), normal(state), normal(state)])
        d = step_std * z
        x = pos.copy()
        active = all_idx
        last = np.full(n, -1, dtype=np.int64)
        for _ in range(MAX_BOUNCES):
            if len(active) == 0:
                break
            t, tri = sub.query(x[active], d[active], last[active])
            miss = tri < 0
            mi = active[miss]
            x[mi] += d[mi]
            hi = active[~miss]
            if len(hi) == 0:
                active = hi
                break
            th = t[~miss][:, None]
            trih = tri[~miss]
            p = x[hi] + th * d[hi]
            rem = (1.0 - th) * d[hi]
            r = uniform(state, hi)
            reflect = r >= sub.pex[trih]
            nrm = sub.normal[trih]
            rem[reflect] -= 2.0 * np.einsum("ij,ij->i", rem[reflect], nrm[reflect])[:, None] \
                * nrm[reflect]
            x[hi] = p
            d[hi] = rem
            last[hi] = trih
            active = hi
        phase += dF[k] * 0.5 * ((pos + x) @ dirs.T)
        pos = x
    return pos, phase
