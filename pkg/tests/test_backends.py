"""Exact-equality contract between the compiled core and the pure fallback.

Every comparison is on raw bytes: the two backends must agree bit for bit,
not merely within tolerance, because run reproducibility is promised
regardless of which one is active.
"""

import random
from array import array

import pytest

from ntklab import _purepy

_core = pytest.importorskip("ntklab._core")

BACKENDS = (_core, _purepy)


def _flat(rng, n, lo=-3.0, hi=3.0):
    return array("d", (rng.uniform(lo, hi) for _ in range(n)))


def _same(results):
    first = results[0]
    if isinstance(first, tuple):
        return all(
            a.tobytes() == b.tobytes() if isinstance(a, array) else a == b
            for r in results[1:]
            for a, b in zip(first, r)
        )
    if isinstance(first, array):
        return all(r.tobytes() == first.tobytes() for r in results[1:])
    return all(r == first for r in results[1:])


@pytest.mark.parametrize("trial", range(10))
def test_matmul_identical(trial):
    rng = random.Random(100 + trial)
    ar, ac, bc = rng.randint(1, 12), rng.randint(1, 12), rng.randint(1, 12)
    a, b = _flat(rng, ar * ac), _flat(rng, ac * bc)
    assert _same([m.mm(a, ar, ac, b, bc) for m in BACKENDS])


def test_matmul_zero_skip_identical():
    # sparse inputs exercise the aik == 0 fast path in both loops
    rng = random.Random(7)
    a = array("d", (rng.gauss(0, 1) if rng.random() < 0.3 else 0.0 for _ in range(64)))
    b = _flat(rng, 64)
    assert _same([m.mm(a, 8, 8, b, 8) for m in BACKENDS])


@pytest.mark.parametrize("trial", range(10))
def test_elementwise_identical(trial):
    rng = random.Random(200 + trial)
    n = rng.randint(1, 50)
    a, b = _flat(rng, n), _flat(rng, n)
    for op in ("add", "sub", "hadamard"):
        assert _same([getattr(m, op)(a, b) for m in BACKENDS]), op
    s = rng.uniform(-2, 2)
    assert _same([m.scale(a, s) for m in BACKENDS])
    assert _same([m.dot(a, b) for m in BACKENDS])
    assert _same([m.frob(a) for m in BACKENDS])
    assert _same([m.max_abs(a) for m in BACKENDS])


@pytest.mark.parametrize("trial", range(10))
def test_transforms_identical(trial):
    rng = random.Random(300 + trial)
    r, c = rng.randint(1, 9), rng.randint(1, 9)
    a = _flat(rng, r * c)
    x = _flat(rng, c)
    bias = _flat(rng, c)
    assert _same([m.transpose(a, r, c) for m in BACKENDS])
    assert _same([m.mv(a, r, c, x) for m in BACKENDS])
    assert _same([m.colsum(a, r, c) for m in BACKENDS])
    assert _same([m.add_row(a, r, c, bias) for m in BACKENDS])
    if r == c:
        assert _same([m.max_asym(a, r) for m in BACKENDS])


@pytest.mark.parametrize("trial", range(10))
def test_activations_identical(trial):
    rng = random.Random(400 + trial)
    z = _flat(rng, rng.randint(1, 80), -6.0, 6.0)
    assert _same([m.tanh_act(z) for m in BACKENDS])
    assert _same([m.gelu_act(z) for m in BACKENDS])
    assert _same([m.sincos(z) for m in BACKENDS])


def test_iaxpy_identical():
    rng = random.Random(5)
    outs = []
    x = _flat(rng, 30)
    g = _flat(rng, 30)
    for m in BACKENDS:
        y = array("d", x)
        m.iaxpy(y, g, -0.137)
        outs.append(y)
    assert _same(outs)


def test_all_finite_agrees():
    good = array("d", [1.0, -2.0, 0.0])
    bad_nan = array("d", [1.0, float("nan")])
    bad_inf = array("d", [float("inf"), 0.0])
    for v, expect in ((good, True), (bad_nan, False), (bad_inf, False)):
        assert all(bool(m.all_finite(v)) == expect for m in BACKENDS)


@pytest.mark.parametrize("trial", range(8))
def test_jacobi_identical(trial):
    rng = random.Random(500 + trial)
    n = rng.randint(1, 14)
    half = _flat(rng, n * n)
    sym = array("d", (0.0 for _ in range(n * n)))
    for i in range(n):
        for j in range(n):
            sym[i * n + j] = 0.5 * (half[i * n + j] + half[j * n + i])
    thresh = 1e-12 * max(1.0, max(abs(v) for v in sym))
    results = []
    for m in BACKENDS:
        a = array("d", sym)
        v = array("d", bytes(8 * n * n))
        ret = m.jacobi_cycle(a, v, n, thresh, 100)
        results.append((a.tobytes(), v.tobytes(), tuple(ret)))
    assert results[0] == results[1]


def test_full_kernel_pipeline_identical(monkeypatch):
    """End-to-end parity: assemble a small tangent kernel under each backend."""
    import ntklab.backend
    import ntklab.dynamics
    import ntklab.kernel
    import ntklab.linalg
    import ntklab.model
    from ntklab.kernel import ntk_matrix
    from ntklab.linalg import from_rows
    from ntklab.model import ModelConfig, init_params

    cfg = ModelConfig(
        input_dim=2, fourier_dim=3, hidden_width=6, depth=3,
        alphas=[0.5, 0.4, 0.3], drop_probs=[0.0, 0.0, 0.0], activation="gelu",
    )
    params = init_params(cfg, random.Random(0))
    rng = random.Random(1)
    x = from_rows([[rng.gauss(0, 1) for _ in range(2)] for _ in range(5)])
    consumers = (ntklab.backend, ntklab.linalg, ntklab.model, ntklab.kernel, ntklab.dynamics)
    outs = []
    for m in BACKENDS:
        for mod in consumers:
            monkeypatch.setattr(mod, "ops", m)
        outs.append(ntk_matrix(params, cfg, x)[0].data.tobytes())
    assert outs[0] == outs[1]
