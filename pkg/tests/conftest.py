import numpy as np
import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def direct_conv(x, w, stride=(1, 1), pad=(0, 0), bias=None):
    """Six-loop convolution oracle in float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    N, c, H, W = x.shape
    n, _, kh, kw = w.shape
    Ho = (H + 2 * pad[0] - kh) // stride[0] + 1
    Wo = (W + 2 * pad[1] - kw) // stride[1] + 1
    out = np.zeros((N, n, Ho, Wo))
    for b in range(N):
        for o in range(n):
            for r in range(Ho):
                for q in range(Wo):
                    acc = 0.0
                    for i in range(c):
                        for a in range(kh):
                            for e in range(kw):
                                y = r * stride[0] + a - pad[0]
                                z = q * stride[1] + e - pad[1]
                                if 0 <= y < H and 0 <= z < W:
                                    acc += w[o, i, a, e] * x[b, i, y, z]
                    out[b, o, r, q] = acc + (0.0 if bias is None else bias[o])
    return out


def als_rank1(T, Y, iters=500, restarts=20, seed=0):
    """Alternating least squares for min ||T - (Y u) p^T||_F; returns the best objective.

    Each step is an exact least-squares solve with the other factor fixed:
    ``p = T^T z / ||z||^2`` for ``z = Y u``, then ``u = lstsq(Y, T p / ||p||^2)``.
    """
    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(restarts):
        u = rng.standard_normal(Y.shape[1])
        for _ in range(iters):
            z = Y @ u
            zz = z @ z
            if zz == 0:
                break
            p = T.T @ z / zz
            pp = p @ p
            if pp == 0:
                break
            u = np.linalg.lstsq(Y, T @ p / pp, rcond=None)[0]
            u /= np.linalg.norm(u)
        z = Y @ u
        p = T.T @ z / (z @ z)
        best = min(best, float(np.linalg.norm(T - np.outer(z, p))))
    return best


def rel(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
