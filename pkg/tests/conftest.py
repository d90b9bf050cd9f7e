import numpy as np
import pytest

from sparseinf import net


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_factors(rng, n, m, T):
    """Layer factors with a trailing bias 1 on every activation row."""
    a = np.concatenate([rng.standard_normal((T, n - 1)), np.ones((T, 1))], axis=1)
    g = rng.standard_normal((T, m))
    return net.LayerFactorBatch(a, g)


def orth(rng, k):
    q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    return q


def rel_fro(A, B):
    return float(np.linalg.norm(A - B) / np.linalg.norm(B))


def fd_layer_grad(spec, weights, x, y, layer, h=1e-6):
    """Central finite differences of the per-sample loss w.r.t. one layer's vec(W)."""
    W = weights[layer]
    theta = net.layer_theta(W)
    out = np.empty_like(theta)
    for i in range(theta.size):
        vals = []
        for s in (h, -h):
            t = theta.copy()
            t[i] += s
            ws = list(weights)
            ws[layer] = net.layer_weights(t, W.shape)
            o, _ = net.forward(spec, ws, x[None, :])
            vals.append(net.per_sample_loss(spec, o, y[None])[0])
        out[i] = (vals[0] - vals[1]) / (2 * h)
    return out


def random_net(rng, max_width=6, activation=None, loss="mse"):
    depth = int(rng.integers(1, 4))
    sizes = [int(rng.integers(1, max_width + 1)) for _ in range(depth + 1)]
    if loss == "cross_entropy":
        sizes[-1] = max(sizes[-1], 2)
    act = activation or str(rng.choice(["relu", "tanh", "identity"]))
    spec = net.NetworkSpec(tuple(sizes), act, loss)
    weights = net.init_weights(spec, rng)
    for W in weights:
        W[:, -1] = 0.3 * rng.standard_normal(W.shape[0])
    return spec, weights


def large_lowrank_form(rng, n, m, a, g):
    """A valid sparse form with N = n*m parameters and L = a*g low-rank columns.

    Built directly from orthonormal column blocks, so nothing N x N is needed.
    """
    from sparseinf.sparse import SparseInfoForm

    Ua = np.linalg.qr(rng.standard_normal((n, a)))[0]
    Ug = np.linalg.qr(rng.standard_normal((m, g)))[0]
    lam = rng.random(a * g) + 0.5
    D = rng.random(n * m) + 0.5
    return SparseInfoForm(Ua, Ug, lam, D, np.arange(a), np.arange(g), D.copy(), a * g)


def traced_peak(fn):
    """``(result, peak bytes)`` of the numpy/Python allocations made by ``fn``."""
    import tracemalloc

    tracemalloc.start()
    tracemalloc.reset_peak()
    try:
        result = fn()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return result, peak


def min_time(fn, repeats=5):
    import time

    best = float("inf")
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


# one summary line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
