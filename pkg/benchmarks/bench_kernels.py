"""Compare the numba kernels with their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel is run once to trigger compilation, then timed ``--repeat``
times; the best time is reported together with the max abs difference
between the two implementations.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from sparseinf import _accel


def _best(fn, args, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _orth(rng, k):
    q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    return np.ascontiguousarray(q)


def cases(rng):
    for n, m in ((8, 8), (17, 16), (33, 32), (65, 64)):
        UA, UG = _orth(rng, n), _orth(rng, m)
        lam = rng.random((n, m))
        yield "efb_diag", (n, m), (UA, UG, lam)
        T = 256
        yield "eig_variance", (T, n, m), (rng.standard_normal((T, n)), rng.standard_normal((T, m)))
        a, g = max(1, n // 2), max(1, m // 2)
        w = rng.random((n, m)) + 0.1
        yield "kron_gram", (n, m, a * g), (np.ascontiguousarray(UA[:, :a]), np.ascontiguousarray(UG[:, :g]), w)
    for L in (16, 64, 256):
        X = rng.standard_normal((L, L))
        yield "cholesky", (L,), (X @ X.T + L * np.eye(L),)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':<14}{'size':<16}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max|diff|':>12}")
    for name, size, inputs in cases(rng):
        f_np = getattr(_accel, f"{name}_numpy")
        f_nb = getattr(_accel, f"{name}_numba")
        f_nb(*inputs)  # compile
        t_np, o_np = _best(f_np, inputs, args.repeat)
        t_nb, o_nb = _best(f_nb, inputs, args.repeat)
        if name == "cholesky":
            o_np, o_nb = o_np[0], o_nb[0]
        diff = float(np.max(np.abs(o_np - o_nb)))
        rows.append({"kernel": name, "size": list(size), "numpy_s": t_np, "numba_s": t_nb, "max_abs_diff": diff})
        print(f"{name:<14}{str(size):<16}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>10.2f}{diff:>12.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"backend_default": _accel.backend(), "results": rows}, fh, indent=1)


if __name__ == "__main__":
    main()
