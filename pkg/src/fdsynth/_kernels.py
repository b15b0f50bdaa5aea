"""Compiled inner loops.  Everything here works on plain arrays."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def uniformized_steps(indptr, indices, data, reward_rate, weights, tails, inv_rate,
                      pi, acc, steps, pi_out, acc_out):
    """Advance ``pi`` by ``steps`` uniformization steps of equal length.

    Each step is ``sum_j weights[j] * pi P^j`` for ``j <= J`` (J vector-matrix
    products, P in CSR form) and adds ``inv_rate * sum_j tails[j] * (pi P^j) .
    reward_rate`` to the accumulated reward.  ``pi`` is updated in place; the
    per-step vectors and accumulated rewards are written to ``pi_out`` and
    ``acc_out``.  Returns the final accumulated reward.
    """
    m = pi.shape[0]
    n_terms = weights.shape[0]
    v = np.empty(m)
    w = np.empty(m)
    nxt = np.empty(m)
    for i in range(steps):
        r = 0.0
        for s in range(m):
            v[s] = pi[s]
            nxt[s] = weights[0] * pi[s]
            r += pi[s] * reward_rate[s]
        acc += tails[0] * inv_rate * r
        for j in range(1, n_terms):
            for s in range(m):
                w[s] = 0.0
            for s in range(m):
                vs = v[s]
                if vs != 0.0:
                    for k in range(indptr[s], indptr[s + 1]):
                        w[indices[k]] += vs * data[k]
            r = 0.0
            wj = weights[j]
            for s in range(m):
                v[s] = w[s]
                nxt[s] += wj * w[s]
                r += w[s] * reward_rate[s]
            acc += tails[j] * inv_rate * r
        for s in range(m):
            pi[s] = nxt[s]
            pi_out[i, s] = nxt[s]
        acc_out[i] = acc
    return acc
