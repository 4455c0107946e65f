# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled numeric kernels.

Line-for-line transliteration of ``_purepy.py``: same loop order, same
accumulation order, same libm calls. Compiled with -ffp-contract=off and
without -ffast-math so the compiler cannot fuse or reorder float ops;
results are bitwise identical to the pure backend. Keep the two in sync.
"""

from cpython cimport array
import array

from libc.math cimport cos, erf, exp, isfinite, sin, sqrt, tanh

COMPILED = True

cdef array.array _dtpl = array.array('d', [])

cdef double _INV_SQRT2 = 1.0 / sqrt(2.0)
cdef double _INV_SQRT2PI = 1.0 / sqrt(2.0 * 3.141592653589793)


cdef inline array.array _zeros(Py_ssize_t n):
    return array.clone(_dtpl, n, zero=True)


def mm(double[::1] a, Py_ssize_t ar, Py_ssize_t ac, double[::1] b, Py_ssize_t bc):
    """C = A @ B with A (ar x ac), B (ac x bc); ikj loop order."""
    cdef array.array out = _zeros(ar * bc)
    cdef double[::1] c = out
    cdef Py_ssize_t i, j, k, ci, bk
    cdef double aik
    for i in range(ar):
        ci = i * bc
        for k in range(ac):
            aik = a[i * ac + k]
            if aik == 0.0:
                continue
            bk = k * bc
            for j in range(bc):
                c[ci + j] += aik * b[bk + j]
    return out


def transpose(double[::1] a, Py_ssize_t r, Py_ssize_t c):
    cdef array.array out = _zeros(r * c)
    cdef double[::1] t = out
    cdef Py_ssize_t i, j
    for i in range(r):
        for j in range(c):
            t[j * r + i] = a[i * c + j]
    return out


def mv(double[::1] a, Py_ssize_t r, Py_ssize_t c, double[::1] x):
    cdef array.array out = _zeros(r)
    cdef double[::1] y = out
    cdef Py_ssize_t i, j, base
    cdef double s
    for i in range(r):
        s = 0.0
        base = i * c
        for j in range(c):
            s += a[base + j] * x[j]
        y[i] = s
    return out


def dot(double[::1] x, double[::1] y):
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        s += x[i] * y[i]
    return s


def add(a, double[::1] b):
    cdef array.array out = array.copy(a)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(b.shape[0]):
        o[i] += b[i]
    return out


def sub(a, double[::1] b):
    cdef array.array out = array.copy(a)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(b.shape[0]):
        o[i] -= b[i]
    return out


def scale(a, double s):
    cdef array.array out = array.copy(a)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(o.shape[0]):
        o[i] *= s
    return out


def iaxpy(double[::1] y, double[::1] x, double s):
    """y += s * x, in place."""
    cdef Py_ssize_t i
    for i in range(y.shape[0]):
        y[i] += s * x[i]


def hadamard(a, double[::1] b):
    cdef array.array out = array.copy(a)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(b.shape[0]):
        o[i] *= b[i]
    return out


def frob(double[::1] a):
    cdef double s = 0.0, v
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        v = a[i]
        s += v * v
    return sqrt(s)


def max_abs(double[::1] a):
    cdef double m = 0.0, v
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        v = a[i]
        if v < 0.0:
            v = -v
        if v > m:
            m = v
    return m


def max_asym(double[::1] a, Py_ssize_t n):
    cdef double m = 0.0, d
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(i + 1, n):
            d = a[i * n + j] - a[j * n + i]
            if d < 0.0:
                d = -d
            if d > m:
                m = d
    return m


def all_finite(double[::1] a):
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        if not isfinite(a[i]):
            return False
    return True


def colsum(double[::1] a, Py_ssize_t r, Py_ssize_t c):
    cdef array.array outa = _zeros(c)
    cdef double[::1] out = outa
    cdef Py_ssize_t i, j, base
    for i in range(r):
        base = i * c
        for j in range(c):
            out[j] += a[base + j]
    return outa


def add_row(a, Py_ssize_t r, Py_ssize_t c, double[::1] v):
    """Each row of A plus the length-c vector v (bias broadcast)."""
    cdef array.array outa = array.copy(a)
    cdef double[::1] out = outa
    cdef Py_ssize_t i, j, base
    for i in range(r):
        base = i * c
        for j in range(c):
            out[base + j] += v[j]
    return outa


def sincos(double[::1] a):
    cdef Py_ssize_t n = a.shape[0], i
    cdef array.array sa = _zeros(n)
    cdef array.array ca = _zeros(n)
    cdef double[::1] s = sa
    cdef double[::1] c = ca
    for i in range(n):
        s[i] = sin(a[i])
        c[i] = cos(a[i])
    return sa, ca


def tanh_act(double[::1] a):
    cdef Py_ssize_t n = a.shape[0], i
    cdef array.array va = _zeros(n)
    cdef array.array da = _zeros(n)
    cdef double[::1] val = va
    cdef double[::1] der = da
    cdef double t
    for i in range(n):
        t = tanh(a[i])
        val[i] = t
        der[i] = 1.0 - t * t
    return va, da


def gelu_act(double[::1] a):
    """Exact-erf GELU: x * Phi(x); derivative Phi(x) + x * phi(x)."""
    cdef Py_ssize_t n = a.shape[0], i
    cdef array.array va = _zeros(n)
    cdef array.array da = _zeros(n)
    cdef double[::1] val = va
    cdef double[::1] der = da
    cdef double x, cdf, pdf
    for i in range(n):
        x = a[i]
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        pdf = exp(-0.5 * x * x) * _INV_SQRT2PI
        val[i] = x * cdf
        der[i] = cdf + x * pdf
    return va, da


def jacobi_cycle(double[::1] a, double[::1] v, Py_ssize_t n, double thresh,
                 Py_ssize_t max_sweeps):
    """Cyclic Jacobi sweeps on symmetric A (mutated in place).

    v must come in as the identity; it accumulates the rotations so its
    columns end up as eigenvectors of the original matrix. Returns
    (sweeps_used, final_max_offdiag); sweeps_used == -1 flags
    non-convergence after max_sweeps.
    """
    cdef Py_ssize_t sweep, p, q, i
    cdef double off, m, apq, app, aqq, tau, t, c, s, aip, aiq, vip, viq
    if n == 1:
        return 0, 0.0
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                m = a[p * n + q]
                if m < 0.0:
                    m = -m
                if m > off:
                    off = m
        if off < thresh:
            return sweep, off
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p * n + q]
                if apq == 0.0 or (apq < thresh and -apq < thresh):
                    continue
                app = a[p * n + p]
                aqq = a[q * n + q]
                tau = (aqq - app) / (2.0 * apq)
                if tau > 1e154 or tau < -1e154:
                    t = 1.0 / (2.0 * tau)
                elif tau >= 0.0:
                    t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                a[p * n + p] = app - t * apq
                a[q * n + q] = aqq + t * apq
                a[p * n + q] = 0.0
                a[q * n + p] = 0.0
                for i in range(n):
                    if i == p or i == q:
                        continue
                    aip = a[i * n + p]
                    aiq = a[i * n + q]
                    a[i * n + p] = c * aip - s * aiq
                    a[i * n + q] = s * aip + c * aiq
                    a[p * n + i] = a[i * n + p]
                    a[q * n + i] = a[i * n + q]
                for i in range(n):
                    vip = v[i * n + p]
                    viq = v[i * n + q]
                    v[i * n + p] = c * vip - s * viq
                    v[i * n + q] = s * vip + c * viq
    off = 0.0
    for p in range(n):
        for q in range(p + 1, n):
            m = a[p * n + q]
            if m < 0.0:
                m = -m
            if m > off:
                off = m
    if off < thresh:
        return max_sweeps, off
    return -1, off
