"""Sparsemax: Euclidean projection onto the probability simplex, and its Jacobian."""

from __future__ import annotations

import numpy as np


def sparsemax(z: np.ndarray) -> np.ndarray:
    """Project each row of ``z`` onto the probability simplex.

    Works on a 1-D vector or row-wise on a 2-D batch. The support size is
    ``k = max{k : 1 + k * z_(k) > sum_{j<=k} z_(j)}`` over the descending
    sort, with threshold ``tau = (sum_{j<=k} z_(j) - 1) / k``.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise ValueError("sparsemax of an empty vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("sparsemax input must be finite")
    squeeze = z.ndim == 1
    z2 = np.atleast_2d(z)

    z_sorted = -np.sort(-z2, axis=1)
    cumsum = np.cumsum(z_sorted, axis=1)
    k = np.arange(1, z2.shape[1] + 1, dtype=np.float64)
    support = 1.0 + k * z_sorted > cumsum
    # the largest k is always in the support (k=1 trivially), so count == max k
    k_max = np.count_nonzero(support, axis=1)
    tau = (cumsum[np.arange(len(z2)), k_max - 1] - 1.0) / k_max
    out = np.maximum(z2 - tau[:, None], 0.0)
    return out[0] if squeeze else out


def sparsemax_backward(output: np.ndarray, grad_output: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of sparsemax, given its output.

    On the active support the Jacobian is ``I - 1 1^T / |S|``; off the
    support it is zero.
    """
    output = np.atleast_2d(output)
    grad_output = np.atleast_2d(grad_output)
    active = output > 0
    n_active = active.sum(axis=1, keepdims=True)
    mean = np.where(active, grad_output, 0.0).sum(axis=1, keepdims=True) / n_active
    return np.where(active, grad_output - mean, 0.0)
