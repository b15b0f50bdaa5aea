"""Reference computations that share no code with the engines under test.

Transient quantities use dense matrix exponentials instead of
uniformization; expected rewards use a dense solve over a decision chain
built here from scratch.
"""

from __future__ import annotations

import math
from collections import deque

import mpmath
import numpy as np
from scipy.linalg import expm

from fdsynth.model import FdctmcModel


def expm_transient(Q: np.ndarray, p0: np.ndarray, t: float) -> np.ndarray:
    return p0 @ expm(Q * t)


def expm_with_reward(Q: np.ndarray, r: np.ndarray, p0: np.ndarray, t: float):
    """Distribution at ``t`` and ``int_0^t p(u) r du`` via one augmented exponential."""
    n = len(r)
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = Q
    A[:n, n] = r
    E = expm(A * t)
    return p0 @ E[:n, :n], float(p0 @ E[:n, n])


def poisson_tail(lam: float, j: int) -> float:
    """P(N > j) for N ~ Poisson(lam), in 50-digit arithmetic."""
    with mpmath.workdps(50):
        lam_m = mpmath.mpf(lam)
        head = mpmath.fsum(mpmath.exp(-lam_m) * lam_m**k / mpmath.factorial(k) for k in range(j + 1))
        return float(1 - head)


def birth_death_hitting_time(lam: float, mu: float, n: int, start: int = 0) -> float:
    """Expected time for an M/M/1 queue to first reach ``n`` customers from ``start``."""
    rho = mu / lam
    total = 0.0
    for k in range(start, n):
        # expected time to go from k to k+1
        total += sum(rho ** (k - j) for j in range(k + 1)) / lam
    return total


def _step(model: FdctmcModel, s: int):
    """(successor distribution, expected reward) of one decision step from ``s``."""
    active = [ev for ev in model.events if s in ev.kernel]
    rates = model.rates.get(s, {})
    if not active:
        e = sum(rates.values())
        dist = {t: r / e for t, r in rates.items()}
        rew = model.rate_reward[s] / e + sum(p * model.impulse.get((s, None, t), 0.0) for t, p in dist.items())
        return dist, rew
    (ev,) = active
    region = [s]
    seen = {s}
    queue = deque([s])
    exits = []
    while queue:
        u = queue.popleft()
        for t in model.rates.get(u, {}):
            if t in seen:
                continue
            seen.add(t)
            if t in ev.kernel and t not in model.target:
                region.append(t)
                queue.append(t)
            else:
                exits.append(t)
    states = region + exits
    pos = {u: i for i, u in enumerate(states)}
    n = len(states)
    Q = np.zeros((n, n))
    r = np.zeros(n)
    for u in region:
        i = pos[u]
        r[i] = model.rate_reward[u]
        for t, q in model.rates.get(u, {}).items():
            Q[i, pos[t]] += q
            Q[i, i] -= q
            r[i] += q * model.impulse.get((u, None, t), 0.0)
    p0 = np.zeros(n)
    p0[0] = 1.0
    p, acc = expm_with_reward(Q, r, p0, ev.delay)
    dist: dict[int, float] = {}
    for u in exits:
        dist[u] = dist.get(u, 0.0) + p[pos[u]]
    for u in region:
        for t, q in ev.kernel[u].items():
            dist[t] = dist.get(t, 0.0) + p[pos[u]] * q
            acc += p[pos[u]] * q * model.impulse.get((u, ev.name, t), 0.0)
    return dist, acc


def dense_expected_reward(model: FdctmcModel) -> float:
    """Expected total reward to the target (assumes it is finite)."""
    order = [model.initial]
    steps = {}
    queue = deque(order)
    while queue:
        s = queue.popleft()
        if s in model.target:
            continue
        steps[s] = _step(model, s)
        for t in steps[s][0]:
            if t not in steps and t not in order:
                order.append(t)
                queue.append(t)
    live = [s for s in order if s not in model.target]
    idx = {s: i for i, s in enumerate(live)}
    A = np.eye(len(live))
    b = np.zeros(len(live))
    for s in live:
        dist, rew = steps[s]
        b[idx[s]] = rew
        for t, p in dist.items():
            if t in idx:
                A[idx[s], idx[t]] -= p
    x = np.linalg.solve(A, b)
    return float(x[idx[model.initial]])


def two_state_closed_form(t: float) -> tuple[float, float]:
    return math.exp(-t), 1 - math.exp(-t)
