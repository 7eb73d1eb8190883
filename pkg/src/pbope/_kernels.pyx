# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Signatures mirror ``pbope._kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport log
from libc.stdint cimport uint64_t, int64_t, uint8_t

cnp.import_array()

BACKEND = "cython"

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double CLAMP_HI = 1.0 - 1e-12


cdef inline uint64_t _fmix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t _stream_key(uint64_t seed, uint64_t day, uint64_t index) nogil:
    cdef uint64_t h = _fmix(seed + GOLDEN)
    h = _fmix((h ^ day) + GOLDEN)
    return _fmix((h ^ index) + GOLDEN)


def counter_uniforms(seed, day, cnp.ndarray index, int n_slots):
    cdef uint64_t s = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t d = <uint64_t>(int(day) & 0xFFFFFFFFFFFFFFFF)
    cdef const uint64_t[:] idx = np.ascontiguousarray(index, dtype=np.uint64)
    cdef Py_ssize_t n = idx.shape[0], i, j
    out = np.empty((n, n_slots), dtype=np.float64)
    cdef double[:, :] o = out
    cdef uint64_t state
    with nogil:
        for i in range(n):
            state = _stream_key(s, d, idx[i])
            for j in range(n_slots):
                state = state + GOLDEN
                o[i, j] = <double>(_fmix(state) >> 11) * (1.0 / 9007199254740992.0)
    return out


def em_sweep(cnp.ndarray cell_pair, cnp.ndarray cell_pos, cnp.ndarray n_click,
             cnp.ndarray n_skip, cnp.ndarray theta, cnp.ndarray gamma):
    cdef const int64_t[:] cp = np.ascontiguousarray(cell_pair, dtype=np.int64)
    cdef const int64_t[:] ck = np.ascontiguousarray(cell_pos, dtype=np.int64)
    cdef const double[:] nc = np.ascontiguousarray(n_click, dtype=np.float64)
    cdef const double[:] ns = np.ascontiguousarray(n_skip, dtype=np.float64)
    cdef const double[:] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[:] gm = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef Py_ssize_t n_cells = cp.shape[0], K = th.shape[0], P = gm.shape[0], c
    num_t = np.zeros(K); den_t = np.zeros(K)
    num_g = np.zeros(P); den_g = np.zeros(P)
    cdef double[:] nt = num_t, dt = den_t, ng = num_g, dg = den_g
    cdef double t, g, q, tot, ll = 0.0
    cdef long clamped = 0
    cdef int64_t j, k
    with nogil:
        for c in range(n_cells):
            j = cp[c]; k = ck[c]
            t = th[k]; g = gm[j]
            q = t * g
            tot = nc[c] + ns[c]
            if q > CLAMP_HI:
                if ns[c] > 0:
                    clamped += 1
                q = CLAMP_HI
            if nc[c] > 0:
                ll += nc[c] * log(q)
            if ns[c] > 0:
                ll += ns[c] * log(1.0 - q)
            nt[k] += nc[c] + ns[c] * t * (1.0 - g) / (1.0 - q)
            dt[k] += tot
            ng[j] += nc[c] + ns[c] * g * (1.0 - t) / (1.0 - q)
            dg[j] += tot
    new_theta = np.where(den_t > 0, num_t / np.where(den_t > 0, den_t, 1.0), theta)
    new_gamma = np.where(den_g > 0, num_g / np.where(den_g > 0, den_g, 1.0), gamma)
    return new_theta, new_gamma, ll, int(clamped)


def cell_log_likelihood(cnp.ndarray cell_pair, cnp.ndarray cell_pos, cnp.ndarray n_click,
                        cnp.ndarray n_skip, cnp.ndarray theta, cnp.ndarray gamma):
    cdef const int64_t[:] cp = np.ascontiguousarray(cell_pair, dtype=np.int64)
    cdef const int64_t[:] ck = np.ascontiguousarray(cell_pos, dtype=np.int64)
    cdef const double[:] nc = np.ascontiguousarray(n_click, dtype=np.float64)
    cdef const double[:] ns = np.ascontiguousarray(n_skip, dtype=np.float64)
    cdef const double[:] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[:] gm = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef Py_ssize_t c
    cdef double q, ll = 0.0
    cdef long clamped = 0
    with nogil:
        for c in range(cp.shape[0]):
            q = th[ck[c]] * gm[cp[c]]
            if q > CLAMP_HI:
                if ns[c] > 0:
                    clamped += 1
                q = CLAMP_HI
            if nc[c] > 0:
                ll += nc[c] * log(q)
            if ns[c] > 0:
                ll += ns[c] * log(1.0 - q)
    return ll, int(clamped)


def ips_sums(cnp.ndarray offsets, cnp.ndarray k_pos, cnp.ndarray p_pos, cnp.ndarray clicked,
             cnp.ndarray alpha, cnp.ndarray theta, double clip):
    cdef const int64_t[:] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef const int64_t[:] kp = np.ascontiguousarray(k_pos, dtype=np.int64)
    cdef const int64_t[:] pp = np.ascontiguousarray(p_pos, dtype=np.int64)
    cdef const uint8_t[:] cl = np.ascontiguousarray(clicked, dtype=np.uint8)
    cdef const double[:] al = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef const double[:] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t n = off.shape[0] - 1, s, i, K = th.shape[0], A = al.shape[0]
    sums = np.zeros(n); dropped = np.zeros(n, dtype=np.uint8)
    cdef double[:] sm = sums
    cdef uint8_t[:] dr = dropped
    cdef int64_t kmax, k, p
    cdef double w, acc, sw = 0.0, sw2 = 0.0
    cdef long n_clip = 0, n_terms = 0, s_clip, s_terms
    cdef double s_sw, s_sw2
    with nogil:
        for s in range(n):
            kmax = 0
            for i in range(off[s], off[s + 1]):
                if cl[i] and kp[i] > kmax:
                    kmax = kp[i]
            acc = 0.0; s_clip = 0; s_terms = 0; s_sw = 0.0; s_sw2 = 0.0
            for i in range(off[s], off[s + 1]):
                k = kp[i]
                if k > kmax:
                    continue
                p = pp[i]
                if p < 1:
                    dr[s] = 1
                    break
                if not cl[i]:
                    continue
                w = th[(p if p < K else K) - 1] / th[(k if k < K else K) - 1]
                if clip > 0 and w > clip:
                    w = clip
                    s_clip += 1
                acc = acc + w * al[(k if k < A else A) - 1]
                s_sw += w; s_sw2 += w * w; s_terms += 1
            if dr[s]:
                continue
            sm[s] = acc
            n_clip += s_clip; n_terms += s_terms; sw += s_sw; sw2 += s_sw2
    return sums, dropped.astype(bool), int(n_clip), sw, sw2, int(n_terms)
