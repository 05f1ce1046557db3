# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled random-walk kernel.

Same algorithm and random streams as ``_walker_py``: each spin runs all of
its steps independently, so spins parallelize with ``prange``.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, log, cos, floor, fabs, INFINITY
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

DEF MAX_BOUNCES = 100
DEF T_EPS = 1e-12
DEF BARY_EPS = 1e-12
DEF TWO_PI = 6.283185307179586


cdef inline uint64_t _rotl(uint64_t x, int k) noexcept nogil:
    return (x << k) | (x >> (64 - k))


cdef inline double _uniform(uint64_t* s) noexcept nogil:
    cdef uint64_t s0 = s[0]
    cdef uint64_t s1 = s[1]
    cdef uint64_t out = s0 + s1
    s1 = s1 ^ s0
    s[0] = _rotl(s0, 24) ^ s1 ^ (s1 << 16)
    s[1] = _rotl(s1, 37)
    return <double>(out >> 11) * (1.0 / 9007199254740992.0)


cdef inline double _normal(uint64_t* s) noexcept nogil:
    cdef double u1 = _uniform(s)
    cdef double u2 = _uniform(s)
    return sqrt(-2.0 * log(1.0 - u1)) * cos(TWO_PI * u2)


cdef inline double _hit(const double* x, const double* d, const double* a0,
                        const double* a1, const double* a2) noexcept nogil:
    """Möller-Trumbore hit parameter of ``x + t d``; INFINITY on a miss."""
    cdef double p0 = d[1] * a2[2] - d[2] * a2[1]
    cdef double p1 = d[2] * a2[0] - d[0] * a2[2]
    cdef double p2 = d[0] * a2[1] - d[1] * a2[0]
    cdef double det = a1[0] * p0 + a1[1] * p1 + a1[2] * p2
    if fabs(det) <= 1e-300:
        return INFINITY
    cdef double inv = 1.0 / det
    cdef double s0 = x[0] - a0[0]
    cdef double s1 = x[1] - a0[1]
    cdef double s2 = x[2] - a0[2]
    cdef double u = (s0 * p0 + s1 * p1 + s2 * p2) * inv
    if u < -BARY_EPS:
        return INFINITY
    cdef double q0 = s1 * a1[2] - s2 * a1[1]
    cdef double q1 = s2 * a1[0] - s0 * a1[2]
    cdef double q2 = s0 * a1[1] - s1 * a1[0]
    cdef double v = (d[0] * q0 + d[1] * q1 + d[2] * q2) * inv
    if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
        return INFINITY
    cdef double t = (a2[0] * q0 + a2[1] * q1 + a2[2] * q2) * inv
    if t > T_EPS and t <= 1.0:
        return t
    return INFINITY


cdef inline int64_t _query(const double* x, const double* d, int64_t exclude,
                           const double[:, ::1] v0, const double[:, ::1] e1,
                           const double[:, ::1] e2, const double* origin, double cell,
                           const int64_t* bd, const int64_t[::1] bstart,
                           const int64_t[::1] btris, double* tout) noexcept nogil:
    cdef int64_t i0, i1, i2, b, lo, hi, j, tri, best = -1
    cdef double t, tmin = INFINITY
    cdef double dd = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
    cdef bint short = dd <= (0.5 * cell) * (0.5 * cell)
    cdef int64_t ntri = v0.shape[0]
    if short:
        i0 = <int64_t>floor((x[0] - origin[0]) / cell - 0.5) + 1
        i1 = <int64_t>floor((x[1] - origin[1]) / cell - 0.5) + 1
        i2 = <int64_t>floor((x[2] - origin[2]) / cell - 0.5) + 1
        if i0 < 0 or i1 < 0 or i2 < 0 or i0 >= bd[0] or i1 >= bd[1] or i2 >= bd[2]:
            short = False
    if short:
        b = (i0 * bd[1] + i1) * bd[2] + i2
        lo = bstart[b]
        hi = bstart[b + 1]
        for j in range(lo, hi):
            tri = btris[j]
            if tri == exclude:
                continue
            t = _hit(x, d, &v0[tri, 0], &e1[tri, 0], &e2[tri, 0])
            if t < tmin:
                tmin = t
                best = tri
    else:
        for tri in range(ntri):
            if tri == exclude:
                continue
            t = _hit(x, d, &v0[tri, 0], &e1[tri, 0], &e2[tri, 0])
            if t < tmin:
                tmin = t
                best = tri
    tout[0] = tmin
    return best


def walk(double[:, ::1] pos0, cnp.uint64_t[:, ::1] state, double[:, ::1] v0,
         double[:, ::1] e1, double[:, ::1] e2, double[:, ::1] normal, double[::1] pex,
         origin, double cell, block_dims, int64_t[::1] bstart, int64_t[::1] btris,
         int nsteps, double step_std, double[::1] dF, double[:, ::1] dirs, int threads=1):
    """Advance every spin; returns (positions, phase integrals per direction)."""
    cdef Py_ssize_t n = pos0.shape[0]
    cdef Py_ssize_t ndir = dirs.shape[0]
    pos_arr = np.array(pos0, dtype=np.float64, copy=True)
    phase_arr = np.zeros((n, ndir))
    cdef double[:, ::1] pos = pos_arr
    cdef double[:, ::1] phase = phase_arr
    cdef double org[3]
    cdef int64_t bd[3]
    cdef int k
    for k in range(3):
        org[k] = float(origin[k])
        bd[k] = int(block_dims[k])
    cdef Py_ssize_t i
    cdef int nthreads = threads if threads > 0 else 1
    with nogil:
        for i in prange(n, num_threads=nthreads, schedule="dynamic"):
            _walk_one(i, pos, phase, state, v0, e1, e2, normal, pex, org, cell, bd,
                      bstart, btris, nsteps, step_std, dF, dirs)
    return pos_arr, phase_arr


cdef void _walk_one(Py_ssize_t i, double[:, ::1] pos, double[:, ::1] phase,
                    cnp.uint64_t[:, ::1] state, const double[:, ::1] v0,
                    const double[:, ::1] e1, const double[:, ::1] e2,
                    const double[:, ::1] normal, const double[::1] pex, double* org,
                    double cell, int64_t* bd, const int64_t[::1] bstart,
                    const int64_t[::1] btris, int nsteps, double step_std,
                    const double[::1] dF, const double[:, ::1] dirs) noexcept nogil:
    cdef uint64_t s[2]
    cdef double x[3]
    cdef double x0[3]
    cdef double d[3]
    cdef double t, dn, th
    cdef int64_t tri, last
    cdef int k, c, bounce
    cdef Py_ssize_t j
    s[0] = state[i, 0]
    s[1] = state[i, 1]
    for c in range(3):
        x[c] = pos[i, c]
    for k in range(nsteps):
        d[0] = step_std * _normal(s)
        d[1] = step_std * _normal(s)
        d[2] = step_std * _normal(s)
        for c in range(3):
            x0[c] = x[c]
        last = -1
        for bounce in range(MAX_BOUNCES):
            tri = _query(x, d, last, v0, e1, e2, org, cell, bd, bstart, btris, &t)
            if tri < 0:
                for c in range(3):
                    x[c] = x[c] + d[c]
                break
            th = t
            for c in range(3):
                x[c] = x[c] + th * d[c]
                d[c] = (1.0 - th) * d[c]
            if _uniform(s) >= pex[tri]:
                dn = d[0] * normal[tri, 0] + d[1] * normal[tri, 1] + d[2] * normal[tri, 2]
                for c in range(3):
                    d[c] = d[c] - 2.0 * dn * normal[tri, c]
            last = tri
        for j in range(dirs.shape[0]):
            phase[i, j] += dF[k] * 0.5 * ((x0[0] + x[0]) * dirs[j, 0]
                                          + (x0[1] + x[1]) * dirs[j, 1]
                                          + (x0[2] + x[2]) * dirs[j, 2])
    for c in range(3):
        pos[i, c] = x[c]
    state[i, 0] = s[0]
    state[i, 1] = s[1]
