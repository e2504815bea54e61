"""Compiled inner loop for kernel-assignment sampling.

Released from the GIL so marker blocks can be processed from a thread pool.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def assign_block(values, groups, log_w0, log_w1, mu, sigma, log_coef, u,
                 n0, n1):
    """Sample kernel assignments for a block of markers and tally counts.

    ``values`` and ``u`` are (B, N); ``log_w0``/``log_w1`` are (B, K) log
    mixing weights of each group; ``n0``/``n1`` (B, K) are overwritten
    with the kernel counts per group.
    """
    n_rows, n_cols = values.shape
    k = mu.shape[0]
    lw = np.empty(k)
    cdf = np.empty(k)
    for r in range(n_rows):
        for j in range(k):
            n0[r, j] = 0
            n1[r, j] = 0
        for c in range(n_cols):
            x = values[r, c]
            g = groups[c]
            top = -np.inf
            for j in range(k):
                z = (x - mu[j]) / sigma[j]
                if g == 1:
                    w = log_w1[r, j]
                else:
                    w = log_w0[r, j]
                lw[j] = w + (-0.5 * z * z + log_coef[j])
                if lw[j] > top:
                    top = lw[j]
            acc = 0.0
            for j in range(k):
                acc += np.exp(lw[j] - top)
                cdf[j] = acc
            target = u[r, c] * acc
            idx = 0
            for j in range(k):
                if cdf[j] < target:
                    idx += 1
            if idx > k - 1:
                idx = k - 1
            if g == 1:
                n1[r, idx] += 1
            else:
                n0[r, idx] += 1
