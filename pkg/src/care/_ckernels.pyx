# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the simulator's per-tick kernels.

Semantics must match ``care._pykernels`` exactly; the test suite runs both.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef inline uint64_t _mix(uint64_t z) nogil:
    z = z + <uint64_t>0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)

cdef inline double _draw(uint64_t seed, int64_t a, int64_t b) nogil:
    cdef uint64_t lo, hi
    if a < b:
        lo = <uint64_t>a
        hi = <uint64_t>b
    else:
        lo = <uint64_t>b
        hi = <uint64_t>a
    return <double>(_mix(_mix(seed ^ _mix(lo)) ^ hi) >> 11) * (1.0 / 9007199254740992.0)


def pair_uniform(uint64_t seed, int64_t a, int64_t b):
    return _draw(seed, a, b)


def oracle_scan(int64_t cand_id, int64_t cand_cluster,
                const int64_t[:] ids, const int64_t[:] clusters,
                double fp, double fn, uint64_t seed):
    """Return (any Similar verdict, candidate's cluster present in buffer)."""
    cdef Py_ssize_t i, n = ids.shape[0]
    cdef bint similar = False, present = False
    cdef double u
    with nogil:
        for i in range(n):
            if clusters[i] == cand_cluster:
                present = True
                if not similar and (fn <= 0.0 or _draw(seed, cand_id, ids[i]) >= fn):
                    similar = True
            elif fp > 0.0 and not similar and _draw(seed, cand_id, ids[i]) < fp:
                similar = True
            if similar and present:
                break
    return similar, present


def contact_pairs(const double[:] xs, const double[:] ys, const double[:] ranges):
    """Pairs (i < j) with distance <= min(range_i, range_j); sweep over sorted x."""
    cdef Py_ssize_t n = xs.shape[0]
    cdef cnp.intp_t[:] order = np.argsort(xs, kind="stable")
    cdef double rmax = 0.0
    cdef Py_ssize_t a, b, i, j, k, cnt = 0
    cdef double dx, dy, r
    for i in range(n):
        if ranges[i] > rmax:
            rmax = ranges[i]
    out_i = np.empty(n * (n - 1) // 2 if n > 1 else 0, dtype=np.int64)
    out_j = np.empty_like(out_i)
    cdef int64_t[:] oi = out_i
    cdef int64_t[:] oj = out_j
    for a in range(n):
        i = order[a]
        for b in range(a + 1, n):
            j = order[b]
            dx = xs[j] - xs[i]
            if dx > rmax:
                break
            dy = ys[j] - ys[i]
            r = ranges[i] if ranges[i] < ranges[j] else ranges[j]
            if dx * dx + dy * dy <= r * r:
                if i < j:
                    oi[cnt] = i
                    oj[cnt] = j
                else:
                    oi[cnt] = j
                    oj[cnt] = i
                cnt += 1
    out_i = out_i[:cnt]
    out_j = out_j[:cnt]
    key = np.lexsort((out_j, out_i))
    return out_i[key], out_j[key]


cdef inline int _popcount(uint64_t x) nogil:
    cdef int c = 0
    while x:
        x &= x - 1
        c += 1
    return c


def hamming_matrix(const uint64_t[:] a, const uint64_t[:] b):
    cdef Py_ssize_t i, j, n = a.shape[0], m = b.shape[0]
    out = np.empty((n, m), dtype=np.int64)
    cdef int64_t[:, :] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                o[i, j] = _popcount(a[i] ^ b[j])
    return out
