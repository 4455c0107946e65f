"""Pure-Python numeric kernels.

Reference implementation of the backend API. The compiled core in
``_core.pyx`` mirrors every loop here operation-for-operation (same
accumulation order, same libm calls), so the two backends produce bitwise
identical results on the same inputs. Keep them in sync.

All matrix arguments are flat ``array('d')`` buffers in row-major order;
dimensions are passed alongside. Functions return new buffers unless the
name says otherwise.
"""

from array import array
from math import cos, erf, exp, isfinite, sin, sqrt, tanh

COMPILED = False

_INV_SQRT2 = 1.0 / sqrt(2.0)
_INV_SQRT2PI = 1.0 / sqrt(2.0 * 3.141592653589793)


def _zeros(n):
    return array("d", bytes(8 * n))


def mm(a, ar, ac, b, bc):
    """C = A @ B with A (ar x ac), B (ac x bc); ikj loop order."""
    c = _zeros(ar * bc)
    for i in range(ar):
        ci = i * bc
        for k in range(ac):
            aik = a[i * ac + k]
            if aik == 0.0:
                continue
            bk = k * bc
            for j in range(bc):
                c[ci + j] += aik * b[bk + j]
    return c


def transpose(a, r, c):
    t = _zeros(r * c)
    for i in range(r):
        for j in range(c):
            t[j * r + i] = a[i * c + j]
    return t


def mv(a, r, c, x):
    y = _zeros(r)
    for i in range(r):
        s = 0.0
        base = i * c
        for j in range(c):
            s += a[base + j] * x[j]
        y[i] = s
    return y


def dot(x, y):
    s = 0.0
    for i in range(len(x)):
        s += x[i] * y[i]
    return s


def add(a, b):
    out = array("d", a)
    for i in range(len(b)):
        out[i] += b[i]
    return out


def sub(a, b):
    out = array("d", a)
    for i in range(len(b)):
        out[i] -= b[i]
    return out


def scale(a, s):
    out = array("d", a)
    for i in range(len(out)):
        out[i] *= s
    return out


def iaxpy(y, x, s):
    """y += s * x, in place."""
    for i in range(len(y)):
        y[i] += s * x[i]


def hadamard(a, b):
    out = array("d", a)
    for i in range(len(b)):
        out[i] *= b[i]
    return out


def frob(a):
    s = 0.0
    for i in range(len(a)):
        v = a[i]
        s += v * v
    return sqrt(s)


def max_abs(a):
    m = 0.0
    for i in range(len(a)):
        v = a[i]
        if v < 0.0:
            v = -v
        if v > m:
            m = v
    return m


def max_asym(a, n):
    m = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            d = a[i * n + j] - a[j * n + i]
            if d < 0.0:
                d = -d
            if d > m:
                m = d
    return m


def all_finite(a):
    for i in range(len(a)):
        if not isfinite(a[i]):
            return False
    return True


def colsum(a, r, c):
    out = _zeros(c)
    for i in range(r):
        base = i * c
        for j in range(c):
            out[j] += a[base + j]
    return out


def add_row(a, r, c, v):
    """Each row of A plus the length-c vector v (bias broadcast)."""
    out = array("d", a)
    for i in range(r):
        base = i * c
        for j in range(c):
            out[base + j] += v[j]
    return out


def sincos(a):
    n = len(a)
    s = _zeros(n)
    c = _zeros(n)
    for i in range(n):
        s[i] = sin(a[i])
        c[i] = cos(a[i])
    return s, c


def tanh_act(a):
    n = len(a)
    val = _zeros(n)
    der = _zeros(n)
    for i in range(n):
        t = tanh(a[i])
        val[i] = t
        der[i] = 1.0 - t * t
    return val, der


def gelu_act(a):
    """Exact-erf GELU: x * Phi(x); derivative Phi(x) + x * phi(x)."""
    n = len(a)
    val = _zeros(n)
    der = _zeros(n)
    for i in range(n):
        x = a[i]
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        pdf = exp(-0.5 * x * x) * _INV_SQRT2PI
        val[i] = x * cdf
        der[i] = cdf + x * pdf
    return val, der


def jacobi_cycle(a, v, n, thresh, max_sweeps):
    """Cyclic Jacobi sweeps on symmetric A (mutated in place).

    v must come in as the identity; it accumulates the rotations so its
    columns end up as eigenvectors of the original matrix. Returns
    (sweeps_used, final_max_offdiag); sweeps_used == -1 flags
    non-convergence after max_sweeps.
    """
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
