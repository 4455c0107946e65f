"""Synthetic dataset generators, standardization, splitting, CSV ingestion.

Generators are pure functions of their spec (seed included). Sampled
parameters (mode amplitudes, frequencies, mixture means, ...) are stored in
the dataset provenance so targets can be recomputed independently.
"""

import hashlib
import json
import random
import warnings
from array import array
from dataclasses import dataclass, field
from math import pi, sin, sqrt

from ntklab.errors import ConfigError, InsufficientDataError, ParseError
from ntklab.linalg import DenseMatrix, fmt

REGRESSION = "regression"
CLASSIFICATION = "classification"

SPLIT_FRACTIONS = (0.70, 0.15, 0.15)
QUANTILE_BINS = 10


@dataclass
class Dataset:
    x: DenseMatrix
    y: DenseMatrix | None  # n x k targets (regression)
    labels: list | None  # n integer labels (classification)
    task: str
    splits: dict | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.x.rows

    def feature_rows(self, idxs):
        d = self.x.cols
        out = DenseMatrix(len(idxs), d)
        for r, i in enumerate(idxs):
            out.data[r * d : (r + 1) * d] = self.x.row(i)
        return out

    def target_rows(self, idxs):
        if self.y is None:
            raise ConfigError("dataset has no continuous targets")
        k = self.y.cols
        out = DenseMatrix(len(idxs), k)
        for r, i in enumerate(idxs):
            out.data[r * k : (r + 1) * k] = self.y.row(i)
        return out

    def label_rows(self, idxs):
        if self.labels is None:
            raise ConfigError("dataset has no class labels")
        return [self.labels[i] for i in idxs]


@dataclass
class SinusoidSpec:
    input_dim: int
    modes: int
    n: int
    noise_std: float = 0.0
    seed: int = 0
    amplitudes: list | None = None
    frequencies: list | None = None
    phases: list | None = None

    def __post_init__(self):
        if self.modes < 1:
            raise ConfigError("modes must be >= 1")
        if self.input_dim < 1 or self.n < 1:
            raise ConfigError("input_dim and n must be >= 1")
        if self.noise_std < 0.0:
            raise ConfigError("noise_std must be >= 0")


def gen_sinusoid(spec):
    """Targets y = sum_k a_k sin(w_k . x + phi_k) + eps with x ~ N(0, I).

    Mode parameters are always drawn from the seeded stream, then replaced by
    any explicit overrides, so overriding (say) the amplitudes leaves the
    input matrix unchanged.
    """
    rng = random.Random(spec.seed)
    k, d, n = spec.modes, spec.input_dim, spec.n
    amps = [rng.uniform(0.0, 1.0) for _ in range(k)]
    freqs = [[rng.gauss(0.0, 1.0) for _ in range(d)] for _ in range(k)]
    phases = [rng.uniform(0.0, 2.0 * pi) for _ in range(k)]
    if spec.amplitudes is not None:
        amps = [float(a) for a in spec.amplitudes]
    if spec.frequencies is not None:
        freqs = [[float(v) for v in row] for row in spec.frequencies]
    if spec.phases is not None:
        phases = [float(p) for p in spec.phases]
    if not (len(amps) == len(freqs) == len(phases) == k):
        raise ConfigError("mode parameter overrides must have length modes")
    x = DenseMatrix(n, d, array("d", (rng.gauss(0.0, 1.0) for _ in range(n * d))))
    y = DenseMatrix(n, 1)
    for i in range(n):
        row = x.row(i)
        acc = 0.0
        for m in range(k):
            wm = freqs[m]
            s = 0.0
            for j in range(d):
                s += wm[j] * row[j]
            acc += amps[m] * sin(s + phases[m])
        acc += rng.gauss(0.0, spec.noise_std)
        y.data[i] = acc
    prov = {
        "kind": "sinusoid",
        "input_dim": d,
        "modes": k,
        "n": n,
        "noise_std": spec.noise_std,
        "seed": spec.seed,
        "amplitudes": amps,
        "frequencies": freqs,
        "phases": phases,
    }
    return Dataset(x=x, y=y, labels=None, task=REGRESSION, provenance=prov)


@dataclass
class GmmSpec:
    input_dim: int
    classes: int
    n: int
    seed: int = 0
    weights: list | None = None
    means: list | None = None
    cov_diags: list | None = None
    mean_scale: float = 2.0

    def __post_init__(self):
        if self.classes < 1:
            raise ConfigError("classes must be >= 1")
        if self.input_dim < 1 or self.n < 1:
            raise ConfigError("input_dim and n must be >= 1")
        if self.weights is not None:
            if len(self.weights) != self.classes:
                raise ConfigError("weights length must equal classes")
            if any(w <= 0.0 for w in self.weights):
                raise ConfigError("weights must be positive")
            if abs(sum(self.weights) - 1.0) > 1e-12:
                raise ConfigError("weights must sum to 1")
        if self.cov_diags is not None:
            for diag in self.cov_diags:
                if any(v < 0.0 for v in diag):
                    raise ConfigError("covariance diagonals must be >= 0")


def gen_gmm(spec):
    """Class c ~ categorical(weights), then x ~ N(mu_c, diag(Sigma_c))."""
    rng = random.Random(spec.seed)
    c, d, n = spec.classes, spec.input_dim, spec.n
    weights = spec.weights if spec.weights is not None else [1.0 / c] * c
    if spec.means is not None:
        means = [[float(v) for v in row] for row in spec.means]
        if len(means) != c:
            raise ConfigError("means length must equal classes")
    else:
        means = [[rng.gauss(0.0, spec.mean_scale) for _ in range(d)] for _ in range(c)]
    if spec.cov_diags is not None:
        covs = [[float(v) for v in row] for row in spec.cov_diags]
    else:
        covs = [[1.0] * d for _ in range(c)]
    stds = [[sqrt(v) for v in row] for row in covs]
    cum = []
    acc = 0.0
    for w in weights:
        acc += w
        cum.append(acc)
    cum[-1] = 1.0
    x = DenseMatrix(n, d)
    labels = []
    for i in range(n):
        u = rng.random()
        ci = 0
        while cum[ci] < u:
            ci += 1
        labels.append(ci)
        mu, sd = means[ci], stds[ci]
        base = i * d
        for j in range(d):
            x.data[base + j] = mu[j] + sd[j] * rng.gauss(0.0, 1.0)
    prov = {
        "kind": "gmm",
        "input_dim": d,
        "classes": c,
        "n": n,
        "seed": spec.seed,
        "weights": weights,
        "means": means,
        "cov_diags": covs,
    }
    return Dataset(x=x, y=None, labels=labels, task=CLASSIFICATION, provenance=prov)


@dataclass
class ScalerParams:
    mean: list
    std: list


def standardize(data, eps=1e-12):
    """Zero-mean unit-variance features, fitted on the train split only.

    Population standard deviation (divisor n); features with std below eps
    pass through with std treated as 1.
    """
    if not data.splits or not data.splits.get("train"):
        raise ConfigError("standardize needs a non-empty train split")
    train = data.splits["train"]
    d = data.x.cols
    mean = [0.0] * d
    for i in train:
        row = data.x.row(i)
        for j in range(d):
            mean[j] += row[j]
    m = len(train)
    mean = [v / m for v in mean]
    var = [0.0] * d
    for i in train:
        row = data.x.row(i)
        for j in range(d):
            dv = row[j] - mean[j]
            var[j] += dv * dv
    std = [sqrt(v / m) for v in var]
    eff = [s if s >= eps else 1.0 for s in std]
    out = DenseMatrix(data.x.rows, d)
    for i in range(data.x.rows):
        base = i * d
        row = data.x.row(i)
        for j in range(d):
            out.data[base + j] = (row[j] - mean[j]) / eff[j]
    scaled = Dataset(
        x=out,
        y=data.y,
        labels=data.labels,
        task=data.task,
        splits=data.splits,
        provenance=dict(data.provenance, standardized=True),
    )
    return scaled, ScalerParams(mean=mean, std=std)


def _allocate(groups, n_total, f_val, f_test, rng):
    """Largest-remainder allocation of val/test quotas across groups."""
    target_val = round(f_val * n_total)
    target_test = round(f_test * n_total)
    for g in groups:
        rng.shuffle(g)
    sizes = [len(g) for g in groups]

    def quotas(frac, target, taken):
        base = [min(int(frac * s), s - t) for s, t in zip(sizes, taken)]
        rem = [frac * s - int(frac * s) for s in sizes]
        order = sorted(range(len(sizes)), key=lambda i: (-rem[i], i))
        short = target - sum(base)
        while short > 0:
            progressed = False
            for i in order:
                if short == 0:
                    break
                if base[i] < sizes[i] - taken[i]:
                    base[i] += 1
                    short -= 1
                    progressed = True
            if not progressed:
                break  # no capacity left anywhere
        return base

    val_q = quotas(f_val, target_val, [0] * len(groups))
    test_q = quotas(f_test, target_test, val_q)
    val, test, train = [], [], []
    for g, vq, tq in zip(groups, val_q, test_q):
        val.extend(g[:vq])
        test.extend(g[vq : vq + tq])
        train.extend(g[vq + tq :])
    return sorted(train), sorted(val), sorted(test)


def split(data, fractions=SPLIT_FRACTIONS, stratify=True, seed=0):
    """70/15/15 split, stratified by label (classification) or by 10
    target-quantile bins (regression); remainders land in train."""
    n = data.n
    if n < 10:
        raise InsufficientDataError("split needs at least 10 samples")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError("split fractions must sum to 1")
    rng = random.Random(seed)
    if not stratify:
        groups = [list(range(n))]
    elif data.task == CLASSIFICATION:
        by_label = {}
        for i, lab in enumerate(data.labels):
            by_label.setdefault(lab, []).append(i)
        groups = []
        forced_train = []
        for lab in sorted(by_label):
            g = by_label[lab]
            if len(g) < 3:
                warnings.warn(
                    f"class {lab} has {len(g)} samples; skipping stratification for it"
                )
                forced_train.extend(g)
            else:
                groups.append(g)
        train, val, test = _allocate(groups, n - len(forced_train), fractions[1], fractions[2], rng)
        train = sorted(train + forced_train)
        splits = {"train": train, "val": val, "test": test}
        return _with_splits(data, splits)
    else:
        order = sorted(range(n), key=lambda i: (data.y.data[i * data.y.cols], i))
        bins = min(QUANTILE_BINS, n)
        groups = []
        for b in range(bins):
            lo = (b * n) // bins
            hi = ((b + 1) * n) // bins
            if hi > lo:
                groups.append(order[lo:hi])
    train, val, test = _allocate(groups, n, fractions[1], fractions[2], rng)
    return _with_splits(data, {"train": train, "val": val, "test": test})


def _with_splits(data, splits):
    return Dataset(
        x=data.x,
        y=data.y,
        labels=data.labels,
        task=data.task,
        splits=splits,
        provenance=data.provenance,
    )


def save_dataset(path, data):
    """CSV with header f0..f{d-1},target plus a .meta.json provenance sidecar."""
    d = data.x.cols
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(f"f{j}" for j in range(d)) + ",target\n")
        for i in range(data.n):
            row = data.x.row(i)
            feats = ",".join(fmt(v) for v in row)
            if data.task == CLASSIFICATION:
                fh.write(f"{feats},{data.labels[i]}\n")
            else:
                fh.write(f"{feats},{fmt(data.y.data[i * data.y.cols])}\n")
    meta = dict(data.provenance)
    meta["task"] = data.task
    with open(_meta_path(path), "w", encoding="ascii") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _meta_path(path):
    s = str(path)
    return (s[: -len(".csv")] if s.endswith(".csv") else s) + ".meta.json"


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_csv(path, target_col=-1, task=REGRESSION, has_header=False):
    """Numeric CSV -> Dataset. Classification targets may be strings; they are
    mapped to dense integer labels in first-appearance order."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise ParseError(f"{path}: empty file")
    start = 0
    header = None
    if has_header:
        header = [t.strip() for t in lines[0].split(",")]
        start = 1
        if len(lines) == 1:
            raise ParseError(f"{path}: header only, no data rows")
    if isinstance(target_col, str):
        if header is None:
            raise ConfigError("named target column requires has_header=True")
        if target_col not in header:
            raise ConfigError(f"target column {target_col!r} not in header")
        tcol = header.index(target_col)
    else:
        tcol = target_col
    rows = []
    width = None
    for lineno, ln in enumerate(lines[start:], start=start + 1):
        parts = [t.strip() for t in ln.split(",")]
        if width is None:
            width = len(parts)
            if width < 2:
                raise ParseError(f"{path}:{lineno}: need at least 2 columns")
        elif len(parts) != width:
            raise ParseError(
                f"{path}:{lineno}: expected {width} fields, got {len(parts)}"
            )
        rows.append((lineno, parts))
    tc = tcol if tcol >= 0 else width + tcol
    if not 0 <= tc < width:
        raise ConfigError(f"target column {target_col} out of range for width {width}")
    n, d = len(rows), width - 1
    x = DenseMatrix(n, d)
    if task == CLASSIFICATION:
        label_map = {}
        labels = []
    else:
        y = DenseMatrix(n, 1)
    for r, (lineno, parts) in enumerate(rows):
        feats = [p for j, p in enumerate(parts) if j != tc]
        for j, p in enumerate(feats):
            try:
                x.data[r * d + j] = float(p)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric feature {p!r}") from None
        tgt = parts[tc]
        if task == CLASSIFICATION:
            if tgt not in label_map:
                label_map[tgt] = len(label_map)
            labels.append(label_map[tgt])
        else:
            try:
                y.data[r] = float(tgt)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric target {tgt!r}") from None
    prov = {"kind": "csv", "path": str(path), "sha256": file_sha256(path)}
    if task == CLASSIFICATION:
        return Dataset(x=x, y=None, labels=labels, task=task, provenance=prov)
    return Dataset(x=x, y=y, labels=None, task=task, provenance=prov)
