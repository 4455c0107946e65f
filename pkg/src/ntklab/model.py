"""Fourier-feature residual network with stochastic depth.

Architecture: phi(x) = [sin(2*pi*B x), cos(2*pi*B x)] -> first dense block
h1 = act(W0 phi + b0) -> residual blocks h_{l+1} = h_l + m_l a_l act(W_l h_l + b_l)
-> linear head. `residual_enabled=False` turns the same parameter layout into
a plain deep MLP (no skips, no branch scaling); `fourier_enabled=False` feeds
raw inputs to the first block. Reverse-mode Jacobians are exact.
"""

from array import array
from dataclasses import dataclass
from functools import cache
from math import erf, exp, pi, sqrt

from ntklab.backend import ops
from ntklab.errors import ConfigError, NumericalError, ShapeError
from ntklab.linalg import (
    DenseMatrix,
    add,
    matmul,
    scale,
    transpose,
    zeros_vec,
)

TANH = "tanh"
GELU = "gelu"
ACTIVATIONS = (TANH, GELU)

_INV_SQRT2 = 1.0 / sqrt(2.0)
_INV_SQRT2PI = 1.0 / sqrt(2.0 * pi)


@dataclass
class FourierMap:
    """Fixed (non-trainable) frequency matrix; output dim is 2*rows(B)."""

    b: DenseMatrix  # d_f x d


@dataclass
class ModelConfig:
    input_dim: int
    fourier_dim: int
    hidden_width: int
    depth: int
    alphas: list
    drop_probs: list
    activation: str = TANH
    output_dim: int = 1
    residual_enabled: bool = True
    fourier_enabled: bool = True
    sigma_b: float = 1.0
    init_seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_width < 1 or self.depth < 1:
            raise ConfigError("input_dim, hidden_width, depth must be >= 1")
        if self.output_dim < 1:
            raise ConfigError("output_dim must be >= 1")
        if self.fourier_enabled and self.fourier_dim < 1:
            raise ConfigError("fourier_dim must be >= 1 when the embedding is on")
        if len(self.alphas) != self.depth or len(self.drop_probs) != self.depth:
            raise ConfigError("alphas and drop_probs must have length depth")
        for a in self.alphas:
            if not a >= 0.0:
                raise ConfigError(f"alpha {a} must be >= 0")
        for p in self.drop_probs:
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"drop prob {p} must be in [0, 1)")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not self.sigma_b > 0.0:
            raise ConfigError("sigma_b must be > 0")

    @property
    def embed_dim(self):
        return 2 * self.fourier_dim if self.fourier_enabled else self.input_dim


def param_layout(config):
    """Block name -> (offset, rows, cols); biases have rows == 1."""
    w, k = config.hidden_width, config.output_dim
    layout = {}
    off = 0

    def block(name, r, c):
        nonlocal off
        layout[name] = (off, r, c)
        off += r * c

    block("w0", w, config.embed_dim)
    block("b0", 1, w)
    for l in range(1, config.depth):
        block(f"w{l}", w, w)
        block(f"b{l}", 1, w)
    block("head_w", k, w)
    block("head_b", 1, k)
    return layout, off


def param_count(config):
    return param_layout(config)[1]


@dataclass
class ModelParams:
    theta: array
    layout: dict
    total: int
    fourier: FourierMap | None = None

    def matrix(self, name):
        off, r, c = self.layout[name]
        return DenseMatrix(r, c, self.theta[off : off + r * c])

    def vector(self, name):
        off, r, c = self.layout[name]
        return self.theta[off : off + r * c]

    def block_slice(self, name):
        off, r, c = self.layout[name]
        return off, off + r * c

    def copy(self):
        return ModelParams(array("d", self.theta), self.layout, self.total, self.fourier)


def init_params(config, rng):
    """Gaussian weights with variance 1/fan_in, zero biases, fixed B ~ N(0, sigma_b^2).

    Draw order is fixed (B, then blocks in layout order) so a seed pins the
    whole parameter vector.
    """
    fourier = None
    if config.fourier_enabled:
        d_f, d = config.fourier_dim, config.input_dim
        b = array("d", (rng.gauss(0.0, config.sigma_b) for _ in range(d_f * d)))
        fourier = FourierMap(DenseMatrix(d_f, d, b))
    layout, total = param_layout(config)
    theta = zeros_vec(total)
    for name, (off, r, c) in layout.items():
        if name.startswith("b") or name == "head_b":
            continue  # biases stay zero
        fan_in = c
        std = 1.0 / sqrt(fan_in)
        for i in range(r * c):
            theta[off + i] = rng.gauss(0.0, std)
    return ModelParams(theta, layout, total, fourier)


def sample_depth_mask(config, rng):
    """Independent keep/drop per block: m_l ~ Bernoulli(1 - p_l)."""
    return [1 if rng.random() < 1.0 - p else 0 for p in config.drop_probs]


def all_ones_mask(config):
    return [1] * config.depth


def act_eval(kind, m):
    """Elementwise activation value and derivative of a matrix."""
    if kind == TANH:
        val, der = ops.tanh_act(m.data)
    else:
        val, der = ops.gelu_act(m.data)
    return DenseMatrix(m.rows, m.cols, val), DenseMatrix(m.rows, m.cols, der)


def act_scalar(kind, x):
    if kind == TANH:
        from math import tanh

        t = tanh(x)
        return t, 1.0 - t * t
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = exp(-0.5 * x * x) * _INV_SQRT2PI
    return x * cdf, cdf + x * pdf


@cache
def activation_stats(kind):
    """sup over x of |act'(x)|; tanh is exactly 1 at the origin."""
    if kind == TANH:
        return 1.0
    if kind != GELU:
        raise ConfigError(f"unknown activation {kind!r}")
    return _gelu_sup_deriv(1e-4)


def _gelu_sup_deriv(step):
    best_x, best = 0.0, 0.0
    x = -10.0
    n = int(round(20.0 / step))
    for i in range(n + 1):
        x = -10.0 + i * step
        d = act_scalar(GELU, x)[1]
        if d > best:
            best, best_x = d, x
    lo, hi = best_x - step, best_x + step
    # golden-section refinement of the bracket down to 1e-10
    invphi = (sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc = act_scalar(GELU, c)[1]
    fd = act_scalar(GELU, d)[1]
    while hi - lo > 1e-10:
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = act_scalar(GELU, c)[1]
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = act_scalar(GELU, d)[1]
    return max(fc, fd)


def _add_bias(m, bias):
    if m.cols != len(bias):
        raise ShapeError("bias length mismatch")
    return DenseMatrix(m.rows, m.cols, ops.add_row(m.data, m.rows, m.cols, bias))


def embed_batch(params, config, x_mat):
    """Row-wise embedding of an n x d input matrix."""
    if x_mat.cols != config.input_dim:
        raise ShapeError(f"expected {config.input_dim} features, got {x_mat.cols}")
    if not config.fourier_enabled:
        return x_mat.copy()
    b = params.fourier.b
    rad = scale(matmul(x_mat, transpose(b)), 2.0 * pi)  # n x d_f
    sin_f, cos_f = ops.sincos(rad.data)
    n, d_f = rad.rows, rad.cols
    out = DenseMatrix(n, 2 * d_f)
    for i in range(n):
        lo = i * 2 * d_f
        src = i * d_f
        out.data[lo : lo + d_f] = sin_f[src : src + d_f]
        out.data[lo + d_f : lo + 2 * d_f] = cos_f[src : src + d_f]
    return out


def fourier_embed(x, fmap):
    """Single-sample embedding [sin(2 pi B x); cos(2 pi B x)]."""
    b = fmap.b
    if len(x) != b.cols:
        raise ShapeError(f"expected {b.cols} features, got {len(x)}")
    rad = ops.scale(ops.mv(b.data, b.rows, b.cols, array("d", x)), 2.0 * pi)
    sin_f, cos_f = ops.sincos(rad)
    out = array("d", sin_f)
    out.extend(cos_f)
    return out


@dataclass
class ForwardTrace:
    """Intermediates retained for backprop and kernel assembly."""

    n: int
    embed: DenseMatrix  # n x embed_dim
    hs: list  # hs[i] = H_{i+1}, n x w
    ds: list  # ds[i] = act'(Z_{i+1}), n x w
    coeffs: list  # branch coefficient per residual step (len depth-1)
    skips: list  # 1.0 residual skip, 0.0 plain feedforward (len depth-1)
    y: DenseMatrix  # n x k


def batch_forward(params, config, x_mat, mask=None, embed=None):
    if mask is None:
        mask = all_ones_mask(config)
    if len(mask) != config.depth:
        raise ShapeError(f"mask length {len(mask)} != depth {config.depth}")
    emb = embed if embed is not None else embed_batch(params, config, x_mat)
    w0 = params.matrix("w0")
    z = _add_bias(matmul(emb, transpose(w0)), params.vector("b0"))
    h, d = act_eval(config.activation, z)
    if not ops.all_finite(h.data):
        raise NumericalError("non-finite activations in block 0")
    hs, ds = [h], [d]
    coeffs, skips = [], []
    for l in range(1, config.depth):
        wl = params.matrix(f"w{l}")
        z = _add_bias(matmul(hs[-1], transpose(wl)), params.vector(f"b{l}"))
        s, d = act_eval(config.activation, z)
        if config.residual_enabled:
            c = mask[l] * config.alphas[l]
            h_next = add(hs[-1], scale(s, c))
            skips.append(1.0)
        else:
            c = 1.0
            h_next = s
            skips.append(0.0)
        if not ops.all_finite(h_next.data):
            raise NumericalError(f"non-finite activations in block {l}")
        hs.append(h_next)
        ds.append(d)
        coeffs.append(c)
    head_w = params.matrix("head_w")
    y = _add_bias(matmul(hs[-1], transpose(head_w)), params.vector("head_b"))
    if not ops.all_finite(y.data):
        raise NumericalError("non-finite outputs in head")
    return ForwardTrace(x_mat.rows, emb, hs, ds, coeffs, skips, y)


def forward(params, config, x, mask=None):
    """Single-sample evaluation; returns (y_hat vector, trace)."""
    trace = batch_forward(params, config, DenseMatrix(1, config.input_dim, array("d", x)), mask)
    return array("d", trace.y.data), trace


def _write_block(grads, params, name, flat):
    lo, hi = params.block_slice(name)
    grads[lo:hi] = flat


def batch_backprop(params, config, trace, gout):
    """Gradient of sum_{i,c} gout[i,c] * f_c(x_i) over the flat parameters."""
    if gout.rows != trace.n or gout.cols != config.output_dim:
        raise ShapeError("gout shape mismatch")
    grads = zeros_vec(params.total)
    h_last = trace.hs[-1]
    _write_block(grads, params, "head_w", matmul(transpose(gout), h_last).data)
    _write_block(grads, params, "head_b", ops.colsum(gout.data, gout.rows, gout.cols))
    delta = matmul(gout, params.matrix("head_w"))  # n x w
    for l in range(config.depth - 1, 0, -1):
        gz = scale(
            DenseMatrix(delta.rows, delta.cols, ops.hadamard(delta.data, trace.ds[l].data)),
            trace.coeffs[l - 1],
        )
        _write_block(grads, params, f"w{l}", matmul(transpose(gz), trace.hs[l - 1]).data)
        _write_block(grads, params, f"b{l}", ops.colsum(gz.data, gz.rows, gz.cols))
        prop = matmul(gz, params.matrix(f"w{l}"))
        delta = add(delta, prop) if trace.skips[l - 1] == 1.0 else prop
    gz0 = DenseMatrix(delta.rows, delta.cols, ops.hadamard(delta.data, trace.ds[0].data))
    _write_block(grads, params, "w0", matmul(transpose(gz0), trace.embed).data)
    _write_block(grads, params, "b0", ops.colsum(gz0.data, gz0.rows, gz0.cols))
    return grads


def jacobian(params, config, x, mask=None):
    """Exact k x P Jacobian of the outputs at one input."""
    x_mat = DenseMatrix(1, config.input_dim, array("d", x))
    trace = batch_forward(params, config, x_mat, mask)
    k, p = config.output_dim, params.total
    jac = DenseMatrix(k, p)
    for c in range(k):
        gout = DenseMatrix(1, k)
        gout.set(0, c, 1.0)
        jac.data[c * p : (c + 1) * p] = batch_backprop(params, config, trace, gout)
    return jac
