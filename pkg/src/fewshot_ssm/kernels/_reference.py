"""Pure numpy kernels. Used when the compiled extension is unavailable.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and bit-compatible semantics (up to floating-point summation order, which is
identical for the loops below).
"""

import numpy as np


def scan_forward(a, u):
    """Diagonal linear recurrence ``h[t] = a[t] * h[t-1] + u[t]`` from ``h[-1] = 0``.

    ``a`` and ``u`` are ``(batch, length, width)`` float64 arrays; the time axis
    is axis 1.
    """
    h = np.empty_like(u)
    h[:, 0] = u[:, 0]
    for t in range(1, u.shape[1]):
        np.multiply(a[:, t], h[:, t - 1], out=h[:, t])
        h[:, t] += u[:, t]
    return h


def scan_backward(a, h, grad_h):
    """Adjoint of :func:`scan_forward`.

    Returns ``(grad_a, grad_u)``.  The carried adjoint obeys
    ``g[t] = grad_h[t] + a[t+1] * g[t+1]``.
    """
    length = h.shape[1]
    grad_u = np.empty_like(grad_h)
    grad_u[:, length - 1] = grad_h[:, length - 1]
    for t in range(length - 2, -1, -1):
        np.multiply(a[:, t + 1], grad_u[:, t + 1], out=grad_u[:, t])
        grad_u[:, t] += grad_h[:, t]
    grad_a = np.zeros_like(a)
    np.multiply(grad_u[:, 1:], h[:, :-1], out=grad_a[:, 1:])
    return grad_a, grad_u


def dtw_path_cost(cost):
    """Boundary-anchored DTW over a cost matrix with moves right, down, diagonal.

    Returns ``(total, steps)`` for the minimum-total-cost path; ``steps`` is the
    number of cells on that path.  Ties prefer the diagonal, then down, then right.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    acc = np.full((n, m), np.inf)
    steps = np.zeros((n, m), dtype=np.int64)
    acc[0, 0] = cost[0, 0]
    steps[0, 0] = 1
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                continue
            best = np.inf
            best_steps = 0
            if i > 0 and j > 0 and acc[i - 1, j - 1] < best:
                best = acc[i - 1, j - 1]
                best_steps = steps[i - 1, j - 1]
            if i > 0 and acc[i - 1, j] < best:
                best = acc[i - 1, j]
                best_steps = steps[i - 1, j]
            if j > 0 and acc[i, j - 1] < best:
                best = acc[i, j - 1]
                best_steps = steps[i, j - 1]
            acc[i, j] = best + cost[i, j]
            steps[i, j] = best_steps + 1
    return float(acc[n - 1, m - 1]), int(steps[n - 1, m - 1])


def ssm_forward(x, a, bb, c):
    """Fused per-channel diagonal SSM with readout.

    ``x``: ``(batch, length, width)``; ``a``, ``bb``, ``c``: ``(n_state, width)``.
    ``h[t] = a * h[t-1] + bb * x[t]`` (per state and channel) and
    ``y[t] = sum_n c * h[t]``.  Returns ``(y, h)`` with ``h`` of shape
    ``(batch, length, n_state, width)``.
    """
    u = bb[None, None] * x[:, :, None, :]
    h = np.empty_like(u)
    h[:, 0] = u[:, 0]
    for t in range(1, x.shape[1]):
        np.multiply(a, h[:, t - 1], out=h[:, t])
        h[:, t] += u[:, t]
    y = (h * c).sum(axis=2)
    return y, h


def ssm_backward(x, a, bb, c, h, grad_y):
    """Adjoint of :func:`ssm_forward`; returns ``(grad_x, grad_a, grad_bb, grad_c)``."""
    length = x.shape[1]
    g = np.empty_like(h)
    g[:, length - 1] = c * grad_y[:, length - 1, None, :]
    for t in range(length - 2, -1, -1):
        np.multiply(a, g[:, t + 1], out=g[:, t])
        g[:, t] += c * grad_y[:, t, None, :]
    grad_c = (grad_y[:, :, None, :] * h).sum(axis=(0, 1))
    grad_a = (g[:, 1:] * h[:, :-1]).sum(axis=(0, 1))
    grad_bb = (g * x[:, :, None, :]).sum(axis=(0, 1))
    grad_x = (g * bb).sum(axis=2)
    return grad_x, grad_a, grad_bb, grad_c
