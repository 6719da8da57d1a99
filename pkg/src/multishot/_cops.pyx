# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel ops: matmul, masked row softmax, pair rotation, and a
fused masked-attention loop. Semantics mirror multishot._pyops; the wrapper
in multishot.kernels validates arguments and allocates outputs."""

from libc.math cimport cos, sin, exp, INFINITY

from multishot.errors import FullyMaskedRowError

ctypedef fused real:
    float
    double


def matmul(real[:, ::1] a, real[:, ::1] b, real[:, ::1] out):
    cdef Py_ssize_t m = a.shape[0], kk = a.shape[1], n = b.shape[1]
    cdef Py_ssize_t i, j, p
    cdef real aip
    for i in range(m):
        for j in range(n):
            out[i, j] = 0
        for p in range(kk):
            aip = a[i, p]
            for j in range(n):
                out[i, j] += aip * b[p, j]


def masked_softmax_rows(real[:, ::1] x, const unsigned char[:, ::1] mask,
                        real[:, ::1] out):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double mx, total, e
    for i in range(m):
        mx = -INFINITY
        for j in range(n):
            if mask[i, j] and x[i, j] > mx:
                mx = x[i, j]
        if mx == -INFINITY:
            raise FullyMaskedRowError(f"softmax row {i} is fully masked")
        total = 0.0
        for j in range(n):
            if mask[i, j]:
                e = exp(<double> x[i, j] - mx)
                out[i, j] = <real> e
                total += e
            else:
                out[i, j] = 0
        for j in range(n):
            if mask[i, j]:
                out[i, j] = <real> (out[i, j] / total)


def rotate_pairs(real[:, ::1] x, const double[:, ::1] angles, real[:, ::1] out):
    cdef Py_ssize_t n = x.shape[0], pairs = angles.shape[1]
    cdef Py_ssize_t i, p
    cdef double c, s, xe, xo
    for i in range(n):
        for p in range(pairs):
            c = cos(angles[i, p])
            s = sin(angles[i, p])
            xe = x[i, 2 * p]
            xo = x[i, 2 * p + 1]
            out[i, 2 * p] = <real> (xe * c - xo * s)
            out[i, 2 * p + 1] = <real> (xe * s + xo * c)


def masked_attention(real[:, ::1] q, real[:, ::1] k, real[:, ::1] v,
                     const unsigned char[:, ::1] mask, double scale,
                     real[:, ::1] probs, real[:, ::1] out):
    cdef Py_ssize_t nq = q.shape[0], nk = k.shape[0]
    cdef Py_ssize_t d = q.shape[1], dv = v.shape[1]
    cdef Py_ssize_t i, j, p, c
    cdef double mx, total, e, acc, pij
    for i in range(nq):
        mx = -INFINITY
        for j in range(nk):
            if mask[i, j]:
                acc = 0.0
                for p in range(d):
                    acc += <double> q[i, p] * k[j, p]
                acc *= scale
                probs[i, j] = <real> acc
                if acc > mx:
                    mx = acc
        if mx == -INFINITY:
            raise FullyMaskedRowError(f"attention row {i} is fully masked")
        total = 0.0
        for j in range(nk):
            if mask[i, j]:
                e = exp(<double> probs[i, j] - mx)
                probs[i, j] = <real> e
                total += e
            else:
                probs[i, j] = 0
        for j in range(nk):
            if mask[i, j]:
                probs[i, j] = <real> (probs[i, j] / total)
        for c in range(dv):
            out[i, c] = 0
        for j in range(nk):
            if mask[i, j]:
                pij = probs[i, j]
                for c in range(dv):
                    out[i, c] += <real> (pij * v[j, c])
    return None
