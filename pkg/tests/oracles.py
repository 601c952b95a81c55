"""Independent reference implementations used as test oracles.

Deliberately naive (explicit loops, textbook formulas) and sharing no code
with the package.
"""

import math

import numpy as np


def matmul_loops(a, b):
    p, q = a.shape
    q2, k = b.shape
    assert q == q2
    out = np.zeros((p, k))
    for i in range(p):
        for j in range(k):
            out[i, j] = sum(a[i, t] * b[t, j] for t in range(q))
    return out


def softmax_row(x):
    m = max(x)
    e = [math.exp(v - m) for v in x]
    s = sum(e)
    return [v / s for v in e]


def central_diff(f, x, h=1e-6):
    """Gradient of scalar f at array x by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def adam_reference(grad_fn, x0, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v = float(x0), 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return x


def patch_count_by_walking(tau, l_p, s):
    """Count patch starts 0, s, 2s, ... until one reaches the last index."""
    count, start = 0, 0
    while True:
        count += 1
        if start + l_p >= tau:
            return count
        start += s


def mae_rmse_loops(pred, y):
    """Per-step MAE / RMSE with explicit loops over (sample, station, step)."""
    n, c, f = y.shape
    mae, rmse = [], []
    for k in range(f):
        abs_sum = sq_sum = 0.0
        for i in range(n):
            for j in range(c):
                e = pred[i, j, k] - y[i, j, k]
                abs_sum += abs(e)
                sq_sum += e * e
        mae.append(abs_sum / (n * c))
        rmse.append(math.sqrt(sq_sum / (n * c)))
    return np.array(mae), np.array(rmse)


def markov_stationary(p_enter, p_exit):
    """Stationary probability of the calm state of a two-state chain."""
    return p_enter / (p_enter + p_exit)


def simulate_markov(p_enter, p_exit, n, seed):
    rng = np.random.default_rng(seed)
    s, calm = 0, 0
    for u in rng.random(n):
        if s == 0 and u < p_enter:
            s = 1
        elif s == 1 and u < p_exit:
            s = 0
        calm += s
    return calm / n


def lowrank_factors(delta, rank):
    """Least-squares rank-r factorization (truncated SVD): delta ~ B @ A."""
    u, sv, vt = np.linalg.svd(delta)
    b = u[:, :rank] * sv[:rank]
    a = vt[:rank]
    return a, b


def persistence_mae_by_step(x, y):
    """MAE of repeating the last history value, explicit loop over steps."""
    last = x[..., -1]
    return np.array([np.mean(np.abs(y[..., k] - last)) for k in range(y.shape[-1])])
