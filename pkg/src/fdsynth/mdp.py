"""Minimum expected total reward in MDPs with very large action sets.

Every non-target decision state owns one :class:`ActionTable`: a block of
actions sharing one list of outcome states.  Exponential states have a
single action; the setting state of an fd event has one action per grid
delay.  Large tables are not kept in memory but regenerated chunk by chunk
from the transient sweep whenever they are scanned.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping

import numpy as np
import scipy.sparse as sp

from .reward import ConvergenceError, solve_refined

ChunkSource = Callable[[], Iterator[tuple[int, np.ndarray, np.ndarray]]]


@dataclass
class ActionTable:
    state: int
    outcomes: np.ndarray
    count: int
    probs: np.ndarray | None = None
    rewards: np.ndarray | None = None
    source: ChunkSource | None = None
    event: str | None = None
    step: float | None = None
    products: int = 0
    truncation: int = 0

    @property
    def materialized(self) -> bool:
        return self.probs is not None

    def delay(self, index: int) -> float:
        if self.step is None:
            raise ValueError("table has no delay grid")
        return (index + 1) * self.step

    def chunks(self) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
        if self.probs is not None:
            yield 0, self.probs, self.rewards
        else:
            yield from self.source()

    def supports(self) -> list[tuple[frozenset[int], int]]:
        """Distinct supports with a representative action index each."""
        if self.probs is None:
            # supports of sweep rows only grow with the delay index
            return [(frozenset(int(t) for t in self.outcomes), self.count - 1)]
        pattern, first = np.unique(self.probs > 0, axis=0, return_index=True)
        return [
            (frozenset(int(t) for t in self.outcomes[row]), int(i))
            for row, i in zip(pattern, first)
        ]


@dataclass
class DiscretizedMdp:
    initial: int
    states: list[int]
    targets: frozenset[int]
    tables: dict[int, ActionTable] = field(default_factory=dict)

    @property
    def action_count(self) -> int:
        return sum(t.count for t in self.tables.values())


@dataclass(frozen=True)
class MdpSolution:
    values: Mapping[int, float]
    policy: Mapping[int, int]
    iterations: int
    residual: float
    method: str


def proper_states(mdp: DiscretizedMdp) -> tuple[set[int], dict[int, int]]:
    """States where some policy reaches the target almost surely.

    Returns the states and, for each non-target one, an action index of a
    policy achieving it (the attractor strategy of the final fixpoint round).
    """
    supports = {s: t.supports() for s, t in mdp.tables.items()}
    region = set(mdp.states) | set(mdp.targets)
    while True:
        reach = set(t for t in mdp.targets if t in region)
        witness: dict[int, int] = {}
        changed = True
        while changed:
            changed = False
            for s, sups in supports.items():
                if s in reach or s not in region:
                    continue
                for sup, idx in sups:
                    if sup <= region and sup & reach:
                        reach.add(s)
                        witness[s] = idx
                        changed = True
                        break
        if reach == region:
            return reach, witness
        region = reach


class _Scanner:
    """Q-value minimisation over a table for a fixed value vector."""

    def __init__(self, table: ActionTable, values: np.ndarray, finite: np.ndarray):
        out = table.outcomes
        self.table = table
        self.v = np.where(finite[out], values[out], 0.0)
        self.bad = np.flatnonzero(~finite[out])

    def q_values(self, probs: np.ndarray, rewards: np.ndarray) -> np.ndarray:
        q = rewards + probs @ self.v
        if self.bad.size:
            q[(probs[:, self.bad] > 0).any(axis=1)] = np.inf
        return q

    def scan(self, keep: int | None = None):
        """Best (q, index, row, reward), and the row/reward/q of action ``keep``."""
        best = (math.inf, -1, None, math.nan)
        kept = None
        for start, probs, rewards in self.table.chunks():
            q = self.q_values(probs, rewards)
            k = int(np.argmin(q))
            if q[k] < best[0]:
                best = (float(q[k]), start + k, probs[k].copy(), float(rewards[k]))
            if keep is not None and start <= keep < start + len(q):
                j = keep - start
                kept = (float(q[j]), keep, probs[j].copy(), float(rewards[j]))
        return best, kept


def _index(mdp: DiscretizedMdp):
    states = sorted(set(mdp.states) | set(mdp.targets) | {
        int(t) for tab in mdp.tables.values() for t in tab.outcomes
    })
    return states, {s: i for i, s in enumerate(states)}


def value_iteration(
    mdp: DiscretizedMdp, convergence: float, *, max_iter: int = 1_000_000, threads: int = 1
) -> MdpSolution:
    """Jacobi value iteration from zero, stopped when sweeps differ by at most ``convergence``."""
    good, _ = proper_states(mdp)
    states, pos = _index(mdp)
    finite = np.array([s in good for s in states])
    tables = {s: _remap(t, pos) for s, t in mdp.tables.items() if finite[pos[s]]}
    V = np.where(finite, 0.0, np.inf)
    policy: dict[int, int] = {}
    diff = math.inf
    for it in range(1, max_iter + 1):
        new = V.copy()
        scans = _map(threads, lambda s: _Scanner(tables[s], V, finite).scan(), list(tables))
        for s, ((q, k, _, _), _) in scans:
            new[pos[s]] = q
            policy[s] = k
        fin = finite & np.isfinite(new)
        diff = float(np.max(np.abs(new[fin] - V[fin]))) if fin.any() else 0.0
        V = new
        if diff <= convergence:
            return MdpSolution(_values(states, V), policy, it, diff, "value")
    raise ConvergenceError(f"value iteration did not converge in {max_iter} sweeps", diff)


def policy_iteration(
    mdp: DiscretizedMdp,
    convergence: float = 0.0,
    *,
    max_iter: int = 10_000,
    threads: int = 1,
) -> MdpSolution:
    """Howard policy iteration started from a proper attractor policy.

    Each round evaluates the current policy exactly (sparse LU) and switches
    an action only if it improves by more than ``convergence``.  ``residual``
    is the largest Bellman improvement left at termination.
    """
    good, witness = proper_states(mdp)
    states, pos = _index(mdp)
    finite = np.array([s in good for s in states])
    active = [s for s in mdp.tables if finite[pos[s]]]
    tables = {s: _remap(mdp.tables[s], pos) for s in active}
    V = np.where(finite, 0.0, np.inf)
    policy = {s: witness[s] for s in active}
    rows: dict[int, tuple[np.ndarray, float]] = {}
    for s, (_, kept) in _map(
        threads, lambda s: _Scanner(tables[s], V, finite).scan(keep=policy[s]), active
    ):
        rows[s] = (kept[2], kept[3])
    residual = math.inf
    for it in range(1, max_iter + 1):
        V = _evaluate(mdp, rows, active, pos, finite, len(states))
        changed = False
        residual = 0.0
        scans = _map(threads, lambda s: _Scanner(tables[s], V, finite).scan(keep=policy[s]), active)
        for s, (best, kept) in scans:
            cur = kept[0]
            residual = max(residual, cur - best[0])
            tol = max(convergence, 1e-13 * max(1.0, abs(cur)))
            if best[0] < cur - tol:
                policy[s] = best[1]
                rows[s] = (best[2], best[3])
                changed = True
        if not changed:
            return MdpSolution(_values(states, V), policy, it, residual, "policy")
    raise ConvergenceError(f"policy iteration did not stabilise in {max_iter} rounds", residual)


def _map(threads: int, fn, items: list[int]) -> list[tuple[int, object]]:
    if threads <= 1 or len(items) <= 1:
        return [(s, fn(s)) for s in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(zip(items, pool.map(fn, items)))


def _evaluate(mdp, rows, active, pos, finite, n) -> np.ndarray:
    idx = {s: i for i, s in enumerate(active)}
    m = len(active)
    r_, c_, v_ = [], [], []
    b = np.zeros(m)
    for s in active:
        row, rew = rows[s]
        b[idx[s]] = rew
        for t, p in zip(mdp.tables[s].outcomes, row):
            j = idx.get(int(t))
            if j is not None and p != 0.0:
                r_.append(idx[s])
                c_.append(j)
                v_.append(p)
    V = np.where(finite, 0.0, np.inf)
    if m:
        P = sp.csr_matrix((v_, (r_, c_)), shape=(m, m))
        x = solve_refined(sp.identity(m, format="csr") - P, b)
        for s in active:
            V[pos[s]] = x[idx[s]]
    return V


def _remap(tab: ActionTable, pos: Mapping[int, int]) -> ActionTable:
    """View of ``tab`` whose outcomes are positions in the value vector."""
    mapped = np.array([pos[int(t)] for t in tab.outcomes], dtype=np.int64)
    return ActionTable(
        tab.state, mapped, tab.count, tab.probs, tab.rewards, tab.source, tab.event, tab.step
    )


def _values(states: list[int], V: np.ndarray) -> dict[int, float]:
    return {s: float(v) for s, v in zip(states, V)}


def solve_mdp(
    mdp: DiscretizedMdp, convergence: float, *, method: str = "value", threads: int = 1
) -> MdpSolution:
    """Minimal expected total reward to the target and an optimal policy."""
    if method == "value":
        return value_iteration(mdp, convergence, threads=threads)
    if method == "policy":
        return policy_iteration(mdp, convergence, threads=threads)
    raise ValueError(f"unknown method {method!r}")


def reachable_states(mdp: DiscretizedMdp) -> set[int]:
    seen = {mdp.initial}
    queue = deque([mdp.initial])
    while queue:
        s = queue.popleft()
        tab = mdp.tables.get(s)
        if tab is None:
            continue
        for t in tab.outcomes:
            t = int(t)
            if t not in seen:
                seen.add(t)
                queue.append(t)
    return seen
