"""Compare the compiled core against the pure-Python fallback.

Both backends run the same hot kernels (matmul, Jacobi eigensolve, full
tangent-kernel assembly) on identical inputs; results are checked for exact
equality before timings are reported, since backend parity is a correctness
contract here, not just a speed knob.

Run inside the installed package:  python3 benchmarks/bench_backends.py
"""

import argparse
import random
import time
from array import array

from ntklab import _purepy
from ntklab.backend import ops as active_ops
from ntklab.kernel import ntk_matrix
from ntklab.linalg import DenseMatrix, from_rows
from ntklab.model import ModelConfig, init_params

try:
    from ntklab import _core
    BACKENDS = [("compiled", _core), ("python", _purepy)]
except ImportError:
    BACKENDS = [("python", _purepy)]


def _rand_flat(rng, n):
    return array("d", (rng.gauss(0.0, 1.0) for _ in range(n)))


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_matmul(rng, size, repeats):
    a = _rand_flat(rng, size * size)
    b = _rand_flat(rng, size * size)
    rows = {}
    outs = {}
    for name, mod in BACKENDS:
        rows[name] = _time(lambda m=mod: m.mm(a, size, size, b, size), repeats)
        outs[name] = mod.mm(a, size, size, b, size)
    return rows, _all_equal(outs)


def bench_jacobi(rng, size, repeats):
    half = _rand_flat(rng, size * size)
    sym = array("d", (0.0 for _ in range(size * size)))
    for i in range(size):
        for j in range(size):
            sym[i * size + j] = 0.5 * (half[i * size + j] + half[j * size + i])
    rows = {}
    outs = {}
    thresh = 1e-12 * max(1.0, max(abs(x) for x in sym))
    for name, mod in BACKENDS:
        def run(m=mod):
            a = array("d", sym)
            v = array("d", (0.0 for _ in range(size * size)))
            m.jacobi_cycle(a, v, size, thresh, 100)
            return a
        rows[name] = _time(run, repeats)
        outs[name] = run()
    return rows, _all_equal(outs)


def bench_ntk(rng, n, width, repeats):
    cfg = ModelConfig(
        input_dim=3, fourier_dim=8, hidden_width=width, depth=3,
        alphas=[0.5, 0.5, 0.5], drop_probs=[0.0, 0.0, 0.0],
    )
    params = init_params(cfg, random.Random(0))
    x = from_rows([[rng.gauss(0.0, 1.0) for _ in range(3)] for _ in range(n)])
    rows = {}
    outs = {}
    import ntklab.backend as backend_mod
    saved = backend_mod.ops
    try:
        for name, mod in BACKENDS:
            _swap_ops(mod)
            rows[name] = _time(lambda: ntk_matrix(params, cfg, x), repeats)
            outs[name] = ntk_matrix(params, cfg, x)[0].data
    finally:
        _swap_ops_obj(saved)
    return rows, _all_equal(outs)


def _swap_ops(mod):
    # modules bind `ops` at import, so patch every consumer
    import ntklab.backend as b
    import ntklab.dynamics as d
    import ntklab.kernel as k
    import ntklab.linalg as li
    import ntklab.model as mo
    for m in (b, li, mo, k, d):
        m.ops = mod


def _swap_ops_obj(obj):
    _swap_ops(obj)


def _all_equal(outs):
    vals = list(outs.values())
    return all(v.tobytes() == vals[0].tobytes() for v in vals[1:])


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=120, help="matmul/jacobi matrix size")
    parser.add_argument("--jacobi-size", type=int, default=40)
    parser.add_argument("--ntk-n", type=int, default=24, help="samples for kernel assembly")
    parser.add_argument("--width", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    print(f"active backend: {'compiled' if active_ops is not _purepy else 'python'}")
    print(f"{'kernel':<28}" + "".join(f"{n:>12}" for n, _ in BACKENDS) + f"{'speedup':>10}  match")

    cases = [
        (f"matmul {args.size}x{args.size}", bench_matmul(rng, args.size, args.repeats)),
        (f"jacobi {args.jacobi_size}x{args.jacobi_size}", bench_jacobi(rng, args.jacobi_size, args.repeats)),
        (f"ntk n={args.ntk_n} w={args.width}", bench_ntk(rng, args.ntk_n, args.width, args.repeats)),
    ]
    for label, (rows, match) in cases:
        cells = "".join(f"{rows[n]*1e3:>10.2f}ms" for n, _ in BACKENDS)
        if len(rows) == 2:
            speed = rows["python"] / rows["compiled"]
            cells += f"{speed:>9.1f}x"
        else:
            cells += f"{'n/a':>10}"
        cells += "   exact" if match else "   DIFFER"
        print(f"{label:<28}{cells}")
    if not all(match for _, (_, match) in cases):
        raise SystemExit("backend outputs differ — parity contract broken")


if __name__ == "__main__":
    main()
