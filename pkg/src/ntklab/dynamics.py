"""Training dynamics: gradient descent, losses/metrics, kernel snapshots per
epoch, frozen-kernel linearized trajectories, mode-wise decay analysis, and
the spectrum-weighted generalization bound.

The linearization is discrete-time: in the eigenbasis of the initial kernel,
residual projections evolve as r_i(t+1) = (1 - eta (2/n) lambda_i) r_i(t),
the exact one-step map of full-batch gradient descent on the frozen kernel
(the 2/n comes from the MSE gradient).
"""

import random
from array import array
from dataclasses import dataclass
from math import exp, log, nan, sqrt

from ntklab.backend import ops
from ntklab.errors import (
    ConfigError,
    InstabilityError,
    InsufficientDataError,
    NumericalError,
    ShapeError,
)
from ntklab.kernel import KernelSnapshot, compute_ntk, kernel_deviation
from ntklab.linalg import DenseMatrix, mat_vec, scale, sub, transpose
from ntklab.model import (
    activation_stats,
    all_ones_mask,
    batch_backprop,
    batch_forward,
    embed_batch,
    sample_depth_mask,
)

MSE = "mse"
CROSS_ENTROPY = "cross_entropy"
LOSS_KINDS = (MSE, CROSS_ENTROPY)

DIVERGENCE_FACTOR = 1e6
MODE_EPS = 1e-12


@dataclass
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int = 0  # 0 = full batch
    loss_kind: str = MSE
    snapshot_stride: int = 1
    stochastic_depth_enabled: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0.0 or self.learning_rate != self.learning_rate:
            raise ConfigError("learning_rate must be finite and positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 0:
            raise ConfigError("batch_size must be >= 0")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.loss_kind!r}")
        if self.snapshot_stride < 1:
            raise ConfigError("snapshot_stride must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    metric: float
    lambda_max: float
    frob_deviation: float
    lin_divergence: float = nan


@dataclass
class ModeRecord:
    epoch: int
    projections: array  # r_i = v_i . (f - y) in the Theta_0 eigenbasis


@dataclass
class TrainingTrace:
    records: list
    snapshots: list
    mode_records: list
    f_train: list  # per-epoch flat train outputs (n*k)
    final_params: object
    eta: float
    n_train: int
    loss_kind: str
    y_train: array | None = None  # scalar-MSE targets, kept for replay
    lin_unstable: bool | None = None


def mse_loss(pred, target):
    if pred.rows != target.rows or pred.cols != target.cols:
        raise ShapeError("mse shape mismatch")
    d = ops.sub(pred.data, target.data)
    s = 0.0
    for v in d:
        s += v * v
    return s / pred.rows


def grad_mse(pred, target):
    if pred.rows != target.rows or pred.cols != target.cols:
        raise ShapeError("mse shape mismatch")
    return scale(sub(pred, target), 2.0 / pred.rows)


def _softmax_rows(logits):
    n, c = logits.rows, logits.cols
    out = DenseMatrix(n, c)
    lses = array("d", bytes(8 * n))
    for i in range(n):
        base = i * c
        m = logits.data[base]
        for j in range(1, c):
            v = logits.data[base + j]
            if v > m:
                m = v
        acc = 0.0
        for j in range(c):
            acc += exp(logits.data[base + j] - m)
        lse = m + log(acc)
        lses[i] = lse
        for j in range(c):
            out.data[base + j] = exp(logits.data[base + j] - lse)
    return out, lses


def _check_labels(logits, labels):
    if logits.cols < 2:
        raise ConfigError("cross-entropy needs at least 2 classes")
    if len(labels) != logits.rows:
        raise ShapeError("labels length mismatch")
    for lab in labels:
        if not 0 <= lab < logits.cols:
            raise ConfigError(f"label {lab} out of range [0, {logits.cols})")


def cross_entropy_loss(logits, labels):
    _check_labels(logits, labels)
    _, lses = _softmax_rows(logits)
    n, c = logits.rows, logits.cols
    s = 0.0
    for i in range(n):
        s += lses[i] - logits.data[i * c + labels[i]]
    return s / n


def grad_cross_entropy(logits, labels):
    _check_labels(logits, labels)
    probs, _ = _softmax_rows(logits)
    n, c = logits.rows, logits.cols
    for i in range(n):
        probs.data[i * c + labels[i]] -= 1.0
    return scale(probs, 1.0 / n)


def r2_score(pred, target):
    if pred.rows != target.rows or pred.cols != target.cols:
        raise ShapeError("r2 shape mismatch")
    n, k = target.rows, target.cols
    if n < 2:
        raise ConfigError("r2_score needs at least 2 samples")
    means = ops.colsum(target.data, n, k)
    means = [v / n for v in means]
    ss_res = 0.0
    ss_tot = 0.0
    for i in range(n):
        base = i * k
        for j in range(k):
            d = pred.data[base + j] - target.data[base + j]
            ss_res += d * d
            t = target.data[base + j] - means[j]
            ss_tot += t * t
    if ss_tot == 0.0:
        raise NumericalError("r2 undefined: target variance is zero")
    return 1.0 - ss_res / ss_tot


def accuracy(logits, labels):
    if len(labels) != logits.rows:
        raise ShapeError("labels length mismatch")
    n, c = logits.rows, logits.cols
    hits = 0
    for i in range(n):
        base = i * c
        best, arg = logits.data[base], 0
        for j in range(1, c):
            v = logits.data[base + j]
            if v > best:  # ties stay on the lowest class index
                best, arg = v, j
        if arg == labels[i]:
            hits += 1
    return hits / n


def _l2(a, b):
    s = 0.0
    for x, y in zip(a, b):
        d = x - y
        s += d * d
    return sqrt(s)


def train(params, config, dataset, tcfg):
    """Gradient descent with per-epoch evaluation and kernel snapshots.

    Snapshots (all-ones mask) land at epochs 0, stride, 2*stride, ... and at
    the final epoch. Rows between snapshots carry the latest snapshot's
    lambda_max / frob_deviation. Deterministic given config and seeds.
    """
    if tcfg.loss_kind == MSE and dataset.task != "regression":
        raise ConfigError("MSE loss needs a regression dataset")
    if tcfg.loss_kind == CROSS_ENTROPY and dataset.task != "classification":
        raise ConfigError("cross-entropy loss needs a classification dataset")
    splits = dataset.splits or {"train": list(range(dataset.n)), "val": [], "test": []}
    tr_idx = splits["train"]
    val_idx = splits.get("val", [])
    if not tr_idx:
        raise ConfigError("empty train split")
    n_tr = len(tr_idx)
    x_tr = dataset.feature_rows(tr_idx)
    if tcfg.loss_kind == MSE:
        y_tr = dataset.target_rows(tr_idx)
        if y_tr.cols != config.output_dim:
            raise ConfigError("output_dim must match target width")
        labels_tr = None
    else:
        labels_tr = dataset.label_rows(tr_idx)
        if max(labels_tr) >= config.output_dim:
            raise ConfigError("output_dim must cover all class labels")
        y_tr = None
    theta = params.copy()
    e_tr = embed_batch(theta, config, x_tr)
    x_val = e_val = y_val = None
    labels_val = None
    if val_idx:
        x_val = dataset.feature_rows(val_idx)
        e_val = embed_batch(theta, config, x_val)
        if tcfg.loss_kind == MSE:
            y_val = dataset.target_rows(val_idx)
        else:
            labels_val = dataset.label_rows(val_idx)
    mask_rng = random.Random(tcfg.seed)
    batch_rng = random.Random(tcfg.seed + 1)
    scalar_mse = config.output_dim == 1 and tcfg.loss_kind == MSE
    records, snapshots, mode_records, f_train = [], [], [], []
    snap0 = None
    last_snap = None
    vt0 = None
    initial_loss = None
    for t in range(tcfg.epochs + 1):
        eval_trace = batch_forward(theta, config, x_tr, embed=e_tr)
        if tcfg.loss_kind == MSE:
            train_loss = mse_loss(eval_trace.y, y_tr)
        else:
            train_loss = cross_entropy_loss(eval_trace.y, labels_tr)
        if initial_loss is None:
            initial_loss = train_loss
        elif train_loss > DIVERGENCE_FACTOR * max(initial_loss, 1e-30):
            partial = TrainingTrace(
                records, snapshots, mode_records, f_train, theta,
                tcfg.learning_rate, n_tr, tcfg.loss_kind,
            )
            raise InstabilityError(
                f"training diverged at epoch {t}: loss {train_loss:.3e} vs "
                f"initial {initial_loss:.3e}",
                epoch=t,
                partial_trace=partial,
            )
        val_loss = metric = nan
        if val_idx:
            val_trace = batch_forward(theta, config, x_val, embed=e_val)
            if tcfg.loss_kind == MSE:
                val_loss = mse_loss(val_trace.y, y_val)
                try:
                    metric = r2_score(val_trace.y, y_val)
                except (NumericalError, ConfigError):
                    metric = nan
            else:
                val_loss = cross_entropy_loss(val_trace.y, labels_val)
                metric = accuracy(val_trace.y, labels_val)
        if t % tcfg.snapshot_stride == 0 or t == tcfg.epochs:
            snap = compute_ntk(theta, config, x_tr, epoch=t, embed=e_tr)
            if snap0 is None:
                snap0 = snap
                vt0 = transpose(snap0.eigen.eigenvectors)
            else:
                snap.frob_deviation = kernel_deviation(snap, snap0)[1]
            snapshots.append(snap)
            last_snap = snap
            if scalar_mse:
                resid = ops.sub(eval_trace.y.data, y_tr.data)
                mode_records.append(ModeRecord(t, mat_vec(vt0, resid)))
        f_train.append(array("d", eval_trace.y.data))
        records.append(
            EpochRecord(
                epoch=t,
                train_loss=train_loss,
                val_loss=val_loss,
                metric=metric,
                lambda_max=last_snap.lambda_max,
                frob_deviation=last_snap.frob_deviation,
            )
        )
        if t == tcfg.epochs:
            break
        if tcfg.batch_size and tcfg.batch_size < n_tr:
            perm = list(range(n_tr))
            batch_rng.shuffle(perm)
            for lo in range(0, n_tr, tcfg.batch_size):
                rows = perm[lo : lo + tcfg.batch_size]
                _gd_step(theta, config, tcfg, x_tr, e_tr, y_tr, labels_tr, rows, mask_rng)
        else:
            _gd_step(theta, config, tcfg, x_tr, e_tr, y_tr, labels_tr, None, mask_rng)
    lin_unstable = None
    if scalar_mse and snap0 is not None:
        y_flat = array("d", y_tr.data)
        outs, lin_unstable = linearized_trajectory(
            snap0, f_train[0], y_flat, tcfg.learning_rate, tcfg.epochs
        )
        rs = sqrt(n_tr)
        for t, rec in enumerate(records):
            rec.lin_divergence = _l2(f_train[t], outs[t]) / rs
    return TrainingTrace(
        records=records,
        snapshots=snapshots,
        mode_records=mode_records,
        f_train=f_train,
        final_params=theta,
        eta=tcfg.learning_rate,
        n_train=n_tr,
        loss_kind=tcfg.loss_kind,
        y_train=array("d", y_tr.data) if scalar_mse else None,
        lin_unstable=lin_unstable,
    )


def _gd_step(theta, config, tcfg, x_tr, e_tr, y_tr, labels_tr, rows, mask_rng):
    """One parameter update on the given row subset (None = full batch)."""
    if rows is None:
        xb, eb = x_tr, e_tr
        yb, labs = y_tr, labels_tr
    else:
        d, de = x_tr.cols, e_tr.cols
        xb = DenseMatrix(len(rows), d)
        eb = DenseMatrix(len(rows), de)
        for r, i in enumerate(rows):
            xb.data[r * d : (r + 1) * d] = x_tr.row(i)
            eb.data[r * de : (r + 1) * de] = e_tr.row(i)
        if y_tr is not None:
            k = y_tr.cols
            yb = DenseMatrix(len(rows), k)
            for r, i in enumerate(rows):
                yb.data[r * k : (r + 1) * k] = y_tr.row(i)
            labs = None
        else:
            yb = None
            labs = [labels_tr[i] for i in rows]
    mask = (
        sample_depth_mask(config, mask_rng)
        if tcfg.stochastic_depth_enabled
        else all_ones_mask(config)
    )
    trace = batch_forward(theta, config, xb, mask, embed=eb)
    if tcfg.loss_kind == MSE:
        gout = grad_mse(trace.y, yb)
    else:
        gout = grad_cross_entropy(trace.y, labs)
    grads = batch_backprop(theta, config, trace, gout)
    ops.iaxpy(theta.theta, grads, -tcfg.learning_rate)


def linearized_trajectory(theta0, f0, y, eta, steps):
    """Frozen-kernel GD outputs for t = 0..steps, plus an instability flag.

    Exactly the brute-force iteration f <- f - eta (2/n) Theta0 (f - y),
    computed in the eigenbasis so each mode is a geometric sequence.
    """
    eig = theta0.eigen if isinstance(theta0, KernelSnapshot) else theta0
    n = len(f0)
    if n != len(y) or n != eig.eigenvectors.rows:
        raise ShapeError("f0/y/Theta0 size mismatch")
    c = eta * 2.0 / n
    rhos = array("d", (1.0 - c * lam for lam in eig.eigenvalues))
    vt = transpose(eig.eigenvectors)
    f0a = array("d", f0)
    ya = array("d", y)
    r = mat_vec(vt, ops.sub(f0a, ya))
    outs = [f0a]
    for _ in range(steps):
        r = ops.hadamard(r, rhos)
        outs.append(ops.add(ya, mat_vec(eig.eigenvectors, r)))
    unstable = c * eig.eigenvalues[0] >= 2.0
    return outs, unstable


def linearized_cross_trajectory(theta_train, theta_cross, f0_train, f0_eval, y_train, eta, steps):
    """Frozen-kernel GD, tracking held-out outputs through the cross kernel.

    theta_cross rows are held-out points, columns training points; both
    kernels must come from the same parameter state.
    """
    n = len(f0_train)
    if theta_train.rows != n or theta_cross.cols != n:
        raise ShapeError("kernel/train-size mismatch")
    c = eta * 2.0 / n
    f_tr = array("d", f0_train)
    f_ev = array("d", f0_eval)
    ya = array("d", y_train)
    outs_tr = [array("d", f_tr)]
    outs_ev = [array("d", f_ev)]
    for _ in range(steps):
        resid = ops.sub(f_tr, ya)
        f_ev = ops.sub(f_ev, ops.scale(mat_vec(theta_cross, resid), c))
        f_tr = ops.sub(f_tr, ops.scale(mat_vec(theta_train, resid), c))
        outs_tr.append(array("d", f_tr))
        outs_ev.append(array("d", f_ev))
    return outs_ev, outs_tr


@dataclass
class ModeFit:
    index: int
    eigenvalue: float
    predicted_ratio: float
    fitted_ratio: float
    rel_gap: float
    skipped: bool = False


def mode_decay_analysis(trace, theta0):
    """Log-linear fit of per-mode residual decay vs the predicted geometric rate."""
    recs = trace.mode_records
    if len(recs) < 3:
        raise InsufficientDataError(f"need >= 3 mode records, have {len(recs)}")
    c = trace.eta * 2.0 / trace.n_train
    fits = []
    n_modes = len(recs[0].projections)
    for i in range(n_modes):
        lam = theta0.eigenvalues[i]
        pred = 1.0 - c * lam
        r0 = recs[0].projections[i]
        if abs(r0) < MODE_EPS:
            fits.append(ModeFit(i, lam, pred, nan, nan, skipped=True))
            continue
        pts = [
            (r.epoch, log(abs(r.projections[i])))
            for r in recs
            if abs(r.projections[i]) > 1e-300
        ]
        if len(pts) < 2:
            fits.append(ModeFit(i, lam, pred, nan, nan, skipped=True))
            continue
        tbar = sum(p[0] for p in pts) / len(pts)
        lbar = sum(p[1] for p in pts) / len(pts)
        num = sum((t - tbar) * (l - lbar) for t, l in pts)
        den = sum((t - tbar) ** 2 for t, l in pts)
        fitted = exp(num / den)
        gap = abs(fitted - abs(pred)) / max(abs(pred), 1e-300)
        fits.append(ModeFit(i, lam, pred, fitted, gap))
    return fits


@dataclass
class GenBoundReport:
    value: float
    epsilon: float
    lambda_floor: float
    floored_modes: int


def generalization_bound(theta, f, y, epsilon=0.0, lambda_floor=None):
    """Spectrum-weighted residual bound: sum_i r_i^2 / max(lambda_i, floor) + eps."""
    if epsilon < 0.0:
        raise ConfigError("epsilon must be >= 0")
    eig = theta.eigen if isinstance(theta, KernelSnapshot) else theta
    lam_max = eig.eigenvalues[0]
    if not lam_max > 0.0:
        raise NumericalError("kernel has no positive eigenvalues")
    floor = 1e-8 * lam_max if lambda_floor is None else lambda_floor
    if all(lam < floor for lam in eig.eigenvalues):
        raise NumericalError("ill-conditioned: every eigenvalue is below the floor")
    fa = array("d", f)
    ya = array("d", y)
    r = mat_vec(transpose(eig.eigenvectors), ops.sub(fa, ya))
    val = 0.0
    floored = 0
    for ri, lam in zip(r, eig.eigenvalues):
        den = lam
        if lam < floor:
            den = floor
            floored += 1
        val += ri * ri / den
    return GenBoundReport(
        value=val + epsilon, epsilon=epsilon, lambda_floor=floor, floored_modes=floored
    )


@dataclass
class DriftRow:
    epoch_from: int
    epoch_to: int
    step_drift: float
    cum_from: float
    cum_to: float
    triangle_slack: float  # cum_from + step - cum_to, >= -1e-9 always
    alpha_sup_ref: float


def drift_report(trace, config):
    """Per-snapshot-step kernel drift next to the branch-scale reference
    max_l alpha_l^2 (sup act')^2; descriptive, not an assertion."""
    snaps = trace.snapshots
    sup2 = activation_stats(config.activation) ** 2
    if config.residual_enabled and config.depth > 1:
        ref = max(config.alphas[1:]) ** 2 * sup2
    else:
        ref = 0.0
    rows = []
    for a, b in zip(snaps, snaps[1:]):
        step = kernel_deviation(b, a)[1]
        rows.append(
            DriftRow(
                epoch_from=a.epoch,
                epoch_to=b.epoch,
                step_drift=step,
                cum_from=a.frob_deviation,
                cum_to=b.frob_deviation,
                triangle_slack=a.frob_deviation + step - b.frob_deviation,
                alpha_sup_ref=ref,
            )
        )
    return rows
