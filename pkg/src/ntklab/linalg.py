"""Dense real linear algebra on flat float64 buffers.

Row-major `DenseMatrix` plus the handful of operations the kernel pipeline
needs: matmul, symmetric eigendecomposition (cyclic Jacobi), spectral norm
(power iteration), Frobenius norm, and 17-significant-digit CSV round-trip.
Everything runs in a fixed accumulation order so single-threaded results
are bitwise reproducible.
"""

from array import array
from dataclasses import dataclass
from math import isfinite, sqrt

from ntklab.backend import ops
from ntklab.errors import ConvergenceError, NumericalError, ShapeError, SymmetryError

JACOBI_MAX_SWEEPS = 100
POWER_MAX_ITERS = 10000
POWER_REL_TOL = 1e-10
SYMMETRY_TOL = 1e-9


def Vec64(values=()):
    """64-bit float vector: a flat array('d')."""
    return array("d", values)


def zeros_vec(n):
    return array("d", bytes(8 * n))


class DenseMatrix:
    """Row-major dense matrix over a flat array('d') buffer."""

    __slots__ = ("rows", "cols", "data")

    def __init__(self, rows, cols, data=None):
        if rows < 0 or cols < 0:
            raise ShapeError(f"negative dimensions {rows}x{cols}")
        if data is None:
            data = zeros_vec(rows * cols)
        elif not isinstance(data, array) or data.typecode != "d":
            data = array("d", data)
        if len(data) != rows * cols:
            raise ShapeError(
                f"buffer length {len(data)} != {rows}x{cols}"
            )
        self.rows = rows
        self.cols = cols
        self.data = data

    def at(self, i, j):
        return self.data[i * self.cols + j]

    def set(self, i, j, v):
        self.data[i * self.cols + j] = v

    def row(self, i):
        c = self.cols
        return self.data[i * c : (i + 1) * c]

    def copy(self):
        return DenseMatrix(self.rows, self.cols, array("d", self.data))

    def to_rows(self):
        return [list(self.row(i)) for i in range(self.rows)]

    def __repr__(self):
        return f"DenseMatrix({self.rows}x{self.cols})"


def from_rows(rows):
    r = len(rows)
    c = len(rows[0]) if r else 0
    flat = array("d")
    for row in rows:
        if len(row) != c:
            raise ShapeError("ragged rows")
        flat.extend(row)
    return DenseMatrix(r, c, flat)


def identity(n):
    m = DenseMatrix(n, n)
    for i in range(n):
        m.data[i * n + i] = 1.0
    return m


def block(a, r0, r1, c0, c1):
    """Copy of the submatrix with rows [r0, r1) and columns [c0, c1)."""
    if not (0 <= r0 <= r1 <= a.rows and 0 <= c0 <= c1 <= a.cols):
        raise ShapeError("block range out of bounds")
    out = DenseMatrix(r1 - r0, c1 - c0)
    w = c1 - c0
    for i in range(r0, r1):
        out.data[(i - r0) * w : (i - r0 + 1) * w] = a.data[i * a.cols + c0 : i * a.cols + c1]
    return out


def matmul(a, b):
    if a.cols != b.rows:
        raise ShapeError(f"matmul {a.rows}x{a.cols} @ {b.rows}x{b.cols}")
    return DenseMatrix(a.rows, b.cols, ops.mm(a.data, a.rows, a.cols, b.data, b.cols))


def transpose(a):
    return DenseMatrix(a.cols, a.rows, ops.transpose(a.data, a.rows, a.cols))


def mat_vec(a, x):
    if a.cols != len(x):
        raise ShapeError(f"mat_vec {a.rows}x{a.cols} @ len {len(x)}")
    return ops.mv(a.data, a.rows, a.cols, x)


def add(a, b):
    if a.rows != b.rows or a.cols != b.cols:
        raise ShapeError("add shape mismatch")
    return DenseMatrix(a.rows, a.cols, ops.add(a.data, b.data))


def sub(a, b):
    if a.rows != b.rows or a.cols != b.cols:
        raise ShapeError("sub shape mismatch")
    return DenseMatrix(a.rows, a.cols, ops.sub(a.data, b.data))


def scale(a, s):
    return DenseMatrix(a.rows, a.cols, ops.scale(a.data, s))


def hadamard(a, b):
    if a.rows != b.rows or a.cols != b.cols:
        raise ShapeError("hadamard shape mismatch")
    return DenseMatrix(a.rows, a.cols, ops.hadamard(a.data, b.data))


def dot(u, v):
    if len(u) != len(v):
        raise ShapeError(f"dot length mismatch {len(u)} vs {len(v)}")
    return ops.dot(u, v)


def frobenius_norm(a):
    return ops.frob(a.data)


def max_abs_entry(a):
    return ops.max_abs(a.data)


def max_asymmetry(a):
    if a.rows != a.cols:
        raise ShapeError("asymmetry check needs a square matrix")
    return ops.max_asym(a.data, a.rows)


def all_finite(a):
    return ops.all_finite(a.data)


@dataclass
class EigenDecomposition:
    """Eigenvalues sorted descending; eigenvector column i pairs with value i."""

    eigenvalues: array
    eigenvectors: DenseMatrix


def sym_eigen(a):
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi."""
    if a.rows != a.cols:
        raise ShapeError(f"sym_eigen needs square input, got {a.rows}x{a.cols}")
    n = a.rows
    if n < 1:
        raise ShapeError("sym_eigen needs dimension >= 1")
    asym = ops.max_asym(a.data, n)
    if asym > SYMMETRY_TOL:
        raise SymmetryError(f"max |A_ij - A_ji| = {asym:.3e} exceeds {SYMMETRY_TOL}")
    thresh = 1e-12 * max(1.0, ops.max_abs(a.data))
    work = array("d", a.data)
    vecs = identity(n)
    sweeps, off = ops.jacobi_cycle(work, vecs.data, n, thresh, JACOBI_MAX_SWEEPS)
    if sweeps < 0:
        raise ConvergenceError(
            f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps; "
            f"residual off-diagonal {off:.3e} vs threshold {thresh:.3e}"
        )
    vals = [work[i * n + i] for i in range(n)]
    order = sorted(range(n), key=lambda i: -vals[i])
    svals = array("d", (vals[i] for i in order))
    svecs = DenseMatrix(n, n)
    for i in range(n):
        base = i * n
        for j, src in enumerate(order):
            svecs.data[base + j] = vecs.data[base + src]
    return EigenDecomposition(svals, svecs)


def _power_lambda_max(m):
    """Largest eigenvalue of a PSD matrix via power iteration."""
    n = m.rows
    if n == 0:
        return 0.0
    if ops.max_abs(m.data) == 0.0:
        return 0.0
    last_gap = None
    for attempt in range(n + 1):
        if attempt == 0:
            v = array("d", [1.0 / sqrt(n)] * n)
        else:
            v = zeros_vec(n)
            v[attempt - 1] = 1.0
        w = ops.mv(m.data, n, n, v)
        prev = None
        restart = False
        for _ in range(POWER_MAX_ITERS):
            rho = ops.dot(v, w)
            if prev is not None:
                last_gap = abs(rho - prev)
                if last_gap <= POWER_REL_TOL * max(abs(rho), 1e-300):
                    return rho
            prev = rho
            nrm = sqrt(ops.dot(w, w))
            if nrm == 0.0:
                restart = True  # start vector fell in the null space
                break
            v = ops.scale(w, 1.0 / nrm)
            w = ops.mv(m.data, n, n, v)
        if not restart:
            raise ConvergenceError(
                f"power iteration: no convergence in {POWER_MAX_ITERS} iters; "
                f"last Rayleigh gap {last_gap:.3e}"
            )
    return 0.0


def spectral_norm(a):
    """Largest singular value via power iteration on the smaller Gram matrix."""
    if a.rows == 0 or a.cols == 0:
        return 0.0
    if a.cols <= a.rows:
        m = matmul(transpose(a), a)
    else:
        m = matmul(a, transpose(a))
    lam = _power_lambda_max(m)
    if lam < 0.0:
        lam = 0.0
    return sqrt(lam)


def fmt(x):
    """17-significant-digit decimal: round-trips any finite float64."""
    return f"{x:.17g}"


def save_matrix(path, a):
    with open(path, "w", encoding="ascii") as fh:
        c = a.cols
        for i in range(a.rows):
            base = i * c
            fh.write(",".join(fmt(a.data[base + j]) for j in range(c)))
            fh.write("\n")


def load_matrix(path):
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(t) for t in line.split(",")])
    if not rows:
        return DenseMatrix(0, 0)
    return from_rows(rows)


def save_vector(path, v):
    with open(path, "w", encoding="ascii") as fh:
        for x in v:
            fh.write(fmt(x))
            fh.write("\n")


def load_vector(path):
    out = array("d")
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(float(line))
    return out


def check_finite(a, what):
    if not ops.all_finite(a.data if isinstance(a, DenseMatrix) else a):
        raise NumericalError(f"non-finite values in {what}")
