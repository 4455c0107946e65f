"""Empirical tangent-kernel engine.

Assembles the n x n Gram matrix Theta with Theta_ij = sum_c <grad f_c(x_i),
grad f_c(x_j)> without ever materializing the n x P Jacobian: each parameter
block contributes (sum_c Gz_c Gz_c^T) .* (H H^T + 1), where Gz are the
backprop signals into that block and H its layer inputs. A direct
per-sample-Jacobian route is kept alongside as a cross-check.
"""

import random
from array import array
from dataclasses import dataclass, replace
from math import sqrt

from ntklab.backend import ops
from ntklab.errors import ConfigError, ShapeError
from ntklab.linalg import (
    DenseMatrix,
    EigenDecomposition,
    add,
    dot,
    frobenius_norm,
    matmul,
    scale,
    spectral_norm,
    sub,
    sym_eigen,
    transpose,
)
from ntklab.model import (
    all_ones_mask,
    batch_forward,
    init_params,
    jacobian,
    sample_depth_mask,
)

LAYER_STORE_MAX_N = 512


@dataclass
class KernelSnapshot:
    epoch: int
    theta: DenseMatrix
    eigen: EigenDecomposition
    frob_deviation: float = 0.0
    layer_contributions: list | None = None

    @property
    def eigenvalues(self):
        return self.eigen.eigenvalues

    @property
    def lambda_max(self):
        return self.eigen.eigenvalues[0]


def _ones(n):
    return DenseMatrix(n, n, array("d", [1.0] * (n * n)))


def _self_gram(m):
    return matmul(m, transpose(m))


def _broadcast_row(row, n):
    w = len(row)
    out = DenseMatrix(n, w)
    for i in range(n):
        out.data[i * w : (i + 1) * w] = row
    return out


def _block_grams(params, config, trace):
    """Per-block Gram of backprop signals, traced over output coordinates."""
    n, depth = trace.n, config.depth
    grams = [None] * depth
    head_w = params.matrix("head_w")
    hidden_w = [params.matrix(f"w{l}") for l in range(1, depth)]
    for c in range(config.output_dim):
        delta = _broadcast_row(head_w.row(c), n)
        for l in range(depth - 1, 0, -1):
            gz = scale(
                DenseMatrix(n, delta.cols, ops.hadamard(delta.data, trace.ds[l].data)),
                trace.coeffs[l - 1],
            )
            g = _self_gram(gz)
            grams[l] = g if grams[l] is None else add(grams[l], g)
            prop = matmul(gz, hidden_w[l - 1])
            delta = add(delta, prop) if trace.skips[l - 1] == 1.0 else prop
        gz0 = DenseMatrix(n, delta.cols, ops.hadamard(delta.data, trace.ds[0].data))
        g = _self_gram(gz0)
        grams[0] = g if grams[0] is None else add(grams[0], g)
    return grams


def layerwise_decomposition(params, config, x_mat, mask=None, trace=None):
    """One PSD n x n contribution per parameter block, head last; they sum to Theta."""
    if trace is None:
        trace = batch_forward(params, config, x_mat, mask)
    n = trace.n
    ones = _ones(n)
    grams = _block_grams(params, config, trace)
    inputs = [trace.embed] + trace.hs[:-1]
    contribs = []
    for g, h in zip(grams, inputs):
        contribs.append(
            DenseMatrix(n, n, ops.hadamard(g.data, add(_self_gram(h), ones).data))
        )
    head = scale(add(_self_gram(trace.hs[-1]), ones), float(config.output_dim))
    contribs.append(head)
    return contribs


def ntk_matrix(params, config, x_mat, embed=None):
    """Just the n x n kernel matrix (all-ones mask), no eigendecomposition."""
    if x_mat.rows < 1:
        raise ShapeError("need at least one sample")
    trace = batch_forward(params, config, x_mat, all_ones_mask(config), embed)
    contribs = layerwise_decomposition(params, config, x_mat, trace=trace)
    theta = contribs[0]
    for c in contribs[1:]:
        theta = add(theta, c)
    return theta, contribs


def compute_ntk(params, config, x_mat, epoch=0, keep_layers=None, embed=None):
    """Kernel snapshot at the current parameters (deterministic all-ones mask)."""
    n = x_mat.rows
    theta, contribs = ntk_matrix(params, config, x_mat, embed)
    if keep_layers is None:
        keep_layers = n <= LAYER_STORE_MAX_N
    eig = sym_eigen(theta)
    return KernelSnapshot(
        epoch=epoch,
        theta=theta,
        eigen=eig,
        layer_contributions=contribs if keep_layers else None,
    )


def ntk_via_jacobians(params, config, x_mat):
    """Direct route: stack per-sample Jacobians and take pairwise dot products.

    Same numbers as compute_ntk (within summation-order noise); quadratic in
    parameter count, so only sensible for small models.
    """
    n, k = x_mat.rows, config.output_dim
    jacs = [
        jacobian(params, config, x_mat.row(i)) for i in range(n)
    ]
    theta = DenseMatrix(n, n)
    p = params.total
    for i in range(n):
        for j in range(i, n):
            s = 0.0
            for c in range(k):
                s += dot(jacs[i].data[c * p : (c + 1) * p], jacs[j].data[c * p : (c + 1) * p])
            theta.set(i, j, s)
            theta.set(j, i, s)
    return theta


def kernel_deviation(current, initial):
    """Entrywise Theta_t - Theta_0 and its Frobenius norm."""
    a = current.theta if isinstance(current, KernelSnapshot) else current
    b = initial.theta if isinstance(initial, KernelSnapshot) else initial
    delta = sub(a, b)
    return delta, frobenius_norm(delta)


def snapshot_from_theta(theta, epoch=0, frob_deviation=0.0):
    return KernelSnapshot(
        epoch=epoch, theta=theta, eigen=sym_eigen(theta), frob_deviation=frob_deviation
    )


@dataclass
class BoundReport:
    lhs: float
    rhs: float
    satisfied: bool
    slack: float


def check_lambda_max_bound(prefix, jac_stack, alpha, tol=1e-8):
    """Top-eigenvalue growth check: lam_max(prefix + a^2 J J^T) vs Weyl bound."""
    if prefix.rows != prefix.cols:
        raise ShapeError("prefix must be square")
    if jac_stack.rows != prefix.rows:
        raise ShapeError("jacobian stack rows must match prefix dimension")
    block = scale(_self_gram(jac_stack), alpha * alpha)
    lhs = sym_eigen(add(prefix, block)).eigenvalues[0]
    sn = spectral_norm(jac_stack)
    rhs = sym_eigen(prefix).eigenvalues[0] + alpha * alpha * sn * sn
    return BoundReport(lhs=lhs, rhs=rhs, satisfied=lhs <= rhs + tol, slack=rhs - lhs)


def block_jacobian_stack(params, config, x_mat, layer, mask=None):
    """Rows = per-sample branch gradients of block `layer`, scale factor removed.

    With J from this function, the block's kernel contribution equals
    a^2 J J^T (a = the branch coefficient; 1 for block 0 and the head).
    Scalar-output models only.
    """
    if config.output_dim != 1:
        raise ConfigError("jacobian stack is defined for scalar-output models")
    if not 0 <= layer <= config.depth:
        raise ConfigError(f"layer {layer} out of range (0..{config.depth})")
    trace = batch_forward(params, config, x_mat, mask)
    n = trace.n
    if layer == config.depth:  # head block: grads are [H_L ; 1]
        h = trace.hs[-1]
        out = DenseMatrix(n, h.cols + 1)
        for i in range(n):
            out.data[i * (h.cols + 1) : i * (h.cols + 1) + h.cols] = h.row(i)
            out.data[i * (h.cols + 1) + h.cols] = 1.0
        return out
    delta = _broadcast_row(params.matrix("head_w").row(0), n)
    for l in range(config.depth - 1, max(layer, 1) - 1, -1):
        if l == layer:
            break
        gz = scale(
            DenseMatrix(n, delta.cols, ops.hadamard(delta.data, trace.ds[l].data)),
            trace.coeffs[l - 1],
        )
        prop = matmul(gz, params.matrix(f"w{l}"))
        delta = add(delta, prop) if trace.skips[l - 1] == 1.0 else prop
    gt = DenseMatrix(n, delta.cols, ops.hadamard(delta.data, trace.ds[layer].data))
    h_in = trace.embed if layer == 0 else trace.hs[layer - 1]
    w, hc = gt.cols, h_in.cols
    width = w * hc + w
    out = DenseMatrix(n, width)
    for i in range(n):
        base = i * width
        g_row = gt.row(i)
        h_row = h_in.row(i)
        for r in range(w):
            gr = g_row[r]
            off = base + r * hc
            for cidx in range(hc):
                out.data[off + cidx] = gr * h_row[cidx]
        out.data[base + w * hc : base + width] = g_row
    return out


@dataclass
class ExpectationReport:
    mc_mean_frob_gap: float
    tolerance: float
    tolerance_4sigma: float
    satisfied: bool
    satisfied_4sigma: bool
    draws: int
    drop_prob: float
    deterministic_frob: float


def stochastic_expectation_check(params, config, x_mat, layer, draws, rng):
    """Monte-Carlo mean of the masked block contribution vs (1-p) x deterministic.

    The identity E[contribution_l] = (1-p_l) * deterministic_l is exact when
    block `layer` is the only stochastic one; with other drop probabilities
    nonzero this is a diagnostic, not an identity.
    """
    if draws < 100:
        raise ConfigError("need at least 100 draws")
    if not config.residual_enabled:
        raise ConfigError("stochastic depth applies to residual models only")
    if not 1 <= layer < config.depth:
        raise ConfigError("block 0 has no stochastic branch")
    p = config.drop_probs[layer]
    det = layerwise_decomposition(params, config, x_mat, mask=all_ones_mask(config))[layer]
    n = x_mat.rows
    accum = DenseMatrix(n, n)
    for _ in range(draws):
        mask = sample_depth_mask(config, rng)
        if mask[layer] == 0:
            continue  # branch off: zero contribution
        contrib = layerwise_decomposition(params, config, x_mat, mask=mask)[layer]
        accum = add(accum, contrib)
    mc_mean = scale(accum, 1.0 / draws)
    ref = scale(det, 1.0 - p)
    gap = frobenius_norm(sub(mc_mean, ref))
    det_frob = frobenius_norm(det)
    tol = 4.0 * p * (1.0 - p) * det_frob / sqrt(draws)
    tol4 = 4.0 * sqrt(p * (1.0 - p) / draws) * det_frob
    return ExpectationReport(
        mc_mean_frob_gap=gap,
        tolerance=tol,
        tolerance_4sigma=tol4,
        satisfied=gap <= tol,
        satisfied_4sigma=gap <= tol4,
        draws=draws,
        drop_prob=p,
        deterministic_frob=det_frob,
    )


def width_convergence_probe(template, widths, seeds, x_mat, base_seed=0):
    """Across-seed entry std of Theta_0 per width, normalized by mean diagonal.

    The Fourier map is drawn once from base_seed and shared across seeds:
    it is a fixed feature map whose n_f x d noise does not shrink with
    hidden width, so reseeding it would mask the concentration of the
    trainable parameters that this probe measures.
    """
    if len(widths) < 2:
        raise ConfigError("need at least 2 widths")
    if seeds < 5:
        raise ConfigError("need at least 5 seeds")
    shared_fourier = init_params(template, random.Random(base_seed)).fourier
    n = x_mat.rows
    rows = []
    for w in widths:
        cfg = replace(template, hidden_width=w)
        thetas = []
        diag_sum = 0.0
        for s in range(seeds):
            params = init_params(cfg, random.Random(base_seed + 1 + s))
            params.fourier = shared_fourier
            snap = compute_ntk(params, cfg, x_mat, keep_layers=False)
            thetas.append(snap.theta)
            for i in range(n):
                diag_sum += snap.theta.at(i, i)
        scale0 = diag_sum / (seeds * n)
        acc = 0.0
        for i in range(n * n):
            mean = sum(t.data[i] for t in thetas) / seeds
            var = sum((t.data[i] - mean) ** 2 for t in thetas) / seeds
            acc += sqrt(var)
        rows.append({"width": w, "entry_std": acc / (n * n) / scale0})
    return rows
