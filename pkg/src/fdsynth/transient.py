"""Uniformization-based transient analysis with accumulated rewards.

The default stepping scheme advances the distribution over a grid of equally
spaced points, re-using the vector at ``(i-1)*delta`` to get the one at
``i*delta`` with a single truncation depth ``J`` for the whole grid.  A naive
per-point evaluation and a precomputed one-step matrix are provided for
comparison and testing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.stats import poisson

from ._kernels import uniformized_steps


class BudgetExceeded(RuntimeError):
    """The requested computation needs more vector-matrix products than allowed."""


@dataclass(frozen=True)
class TruncationPlan:
    J: int
    per_step_error: float
    lambda_delta: float


@dataclass(frozen=True)
class TransientState:
    pi: np.ndarray
    accumulated_reward: float
    elapsed: float
    truncation_used: float = 0.0
    products: int = 0


@dataclass(frozen=True)
class UniformizedChain:
    """Row-stochastic kernel ``matrix`` of a CTMC uniformized at ``rate``."""

    matrix: sp.csr_matrix
    rate: float
    rate_reward: np.ndarray
    jump_impulse: np.ndarray
    initial: int = 0

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def reward_rate(self) -> np.ndarray:
        """Expected reward per unit time: rate reward plus impulses of jumps."""
        return self.rate_reward + self.rate * self.jump_impulse

    @classmethod
    def from_rates(
        cls,
        n: int,
        rates: Mapping[int, Mapping[int, float]],
        rate_reward=None,
        impulse: Mapping[tuple[int, int], float] | None = None,
        *,
        rate: float | None = None,
        initial: int = 0,
    ) -> "UniformizedChain":
        exit_rates = np.zeros(n)
        for s, row in rates.items():
            exit_rates[s] = math.fsum(row.values())
        lam = float(exit_rates.max()) if rate is None else float(rate)
        if lam <= 0:
            lam = 1.0
        if lam < exit_rates.max() * (1 - 1e-12):
            raise ValueError(f"uniformization rate {lam} below max exit rate {exit_rates.max()}")
        rows, cols, vals = [], [], []
        jump = np.zeros(n)
        impulse = impulse or {}
        for s in range(n):
            row = rates.get(s, {})
            stay = 1.0 - exit_rates[s] / lam
            for t, r in row.items():
                p = r / lam
                if t == s:
                    stay += p
                else:
                    rows.append(s)
                    cols.append(t)
                    vals.append(p)
                jump[s] += p * impulse.get((s, t), 0.0)
            if stay > 0:
                rows.append(s)
                cols.append(s)
                vals.append(stay)
        matrix = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        matrix.sum_duplicates()
        matrix.sort_indices()
        rr = np.zeros(n) if rate_reward is None else np.asarray(rate_reward, dtype=float)
        return cls(matrix, lam, rr, jump, initial)

    def initial_vector(self) -> np.ndarray:
        pi = np.zeros(self.size)
        pi[self.initial] = 1.0
        return pi


def poisson_weights(lambda_delta: float, J: int) -> tuple[np.ndarray, np.ndarray]:
    """Poisson pmf ``P(N=j)`` and tails ``P(N>j)`` for ``j = 0..J``."""
    j = np.arange(J + 1)
    if lambda_delta == 0:
        pmf = np.zeros(J + 1)
        pmf[0] = 1.0
        return pmf, np.zeros(J + 1)
    return poisson.pmf(j, lambda_delta), poisson.sf(j, lambda_delta)


def poisson_truncation(lambda_delta: float, epsilon_step: float) -> TruncationPlan:
    """Smallest ``J`` whose Poisson(``lambda_delta``) tail beyond ``J`` is at most ``epsilon_step``."""
    if not 0 < epsilon_step < 1:
        raise ValueError(f"epsilon_step must lie in (0, 1), got {epsilon_step}")
    if lambda_delta < 0:
        raise ValueError("lambda_delta must be non-negative")
    if lambda_delta == 0:
        return TruncationPlan(0, epsilon_step, 0.0)
    lo = 0
    hi = int(lambda_delta + 10 * math.sqrt(lambda_delta) + 40)
    while True:
        tails = poisson.sf(np.arange(lo, hi + 1), lambda_delta)
        hit = np.flatnonzero(tails <= epsilon_step)
        if hit.size:
            return TruncationPlan(lo + int(hit[0]), epsilon_step, float(lambda_delta))
        lo, hi = hi + 1, 2 * hi


def _run(chain: UniformizedChain, pi: np.ndarray, acc: float, delta: float, J: int, steps: int):
    weights, tails = poisson_weights(chain.rate * delta, J)
    pi_out = np.empty((steps, chain.size))
    acc_out = np.empty(steps)
    m = chain.matrix
    uniformized_steps(
        m.indptr, m.indices, m.data, chain.reward_rate, weights, tails,
        1.0 / chain.rate, pi, acc, steps, pi_out, acc_out,
    )
    return pi_out, acc_out, float(tails[J]) if J < len(tails) else 0.0


def transient_step(
    chain: UniformizedChain, current: TransientState, delta: float, plan: TruncationPlan
) -> TransientState:
    """Advance ``current`` by ``delta`` with ``plan.J`` vector-matrix products."""
    if current.pi.shape != (chain.size,):
        raise ValueError(f"distribution has shape {current.pi.shape}, chain has {chain.size} states")
    if not math.isclose(plan.lambda_delta, chain.rate * delta, rel_tol=1e-9, abs_tol=0.0) and plan.J:
        raise ValueError("truncation plan was computed for a different rate*delta")
    pi = np.array(current.pi, dtype=float)
    pi_out, acc_out, lost = _run(chain, pi, current.accumulated_reward, delta, plan.J, 1)
    return TransientState(
        pi_out[0],
        float(acc_out[0]),
        current.elapsed + delta,
        current.truncation_used + lost,
        current.products + plan.J,
    )


def sweep_plan(chain: UniformizedChain, delta: float, steps: int, kappa: float) -> TruncationPlan:
    """Single truncation depth keeping every prefix of ``steps`` steps within ``kappa``."""
    if steps < 1:
        raise ValueError("steps must be positive")
    return poisson_truncation(chain.rate * delta, kappa / steps)


def sweep_chunks(
    chain: UniformizedChain,
    delta: float,
    steps: int,
    plan: TruncationPlan,
    *,
    chunk: int = 1 << 18,
    pi0: np.ndarray | None = None,
) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Yield ``(first_step, pi_grid, reward_grid)`` blocks of the iterative sweep.

    Rows of ``pi_grid`` are the distributions at steps ``first_step+1 ...``;
    ``reward_grid`` holds the matching accumulated rewards.
    """
    pi = chain.initial_vector() if pi0 is None else np.array(pi0, dtype=float)
    acc = 0.0
    done = 0
    while done < steps:
        n = min(chunk, steps - done)
        pi_out, acc_out, _ = _run(chain, pi, acc, delta, plan.J, n)
        acc = float(acc_out[-1])
        yield done, pi_out, acc_out
        done += n


def transient_sweep(
    chain: UniformizedChain,
    delta: float,
    steps: int,
    kappa: float,
    *,
    budget: int | None = None,
) -> list[TransientState]:
    """Transient states at ``i*delta`` for ``i = 1..steps`` by iterative stepping."""
    plan = sweep_plan(chain, delta, steps, kappa)
    if budget is not None and plan.J * steps > budget:
        raise BudgetExceeded(f"sweep needs {plan.J * steps} products, budget is {budget}")
    _, tails = poisson_weights(plan.lambda_delta, plan.J)
    lost = float(tails[plan.J])
    states = []
    for start, pi_grid, acc_grid in sweep_chunks(chain, delta, steps, plan):
        for k in range(pi_grid.shape[0]):
            i = start + k + 1
            states.append(
                TransientState(pi_grid[k], float(acc_grid[k]), i * delta, i * lost, i * plan.J)
            )
    return states


def transient_point(chain: UniformizedChain, t: float, tol: float) -> TransientState:
    """Single-point evaluation from the initial vector with truncation error ``tol``."""
    plan = poisson_truncation(chain.rate * t, tol)
    pi = chain.initial_vector()
    pi_out, acc_out, lost = _run(chain, pi, 0.0, t, plan.J, 1)
    return TransientState(pi_out[0], float(acc_out[0]), t, lost, plan.J)


def naive_transient_grid(
    chain: UniformizedChain,
    delta: float,
    steps: int,
    kappa: float,
    *,
    budget: int | None = None,
) -> list[TransientState]:
    """Each grid point evaluated independently, each with its own truncation depth.

    ``products`` on the returned states is cumulative over the grid.
    """
    depths = [poisson_truncation(chain.rate * i * delta, kappa).J for i in range(1, steps + 1)]
    if budget is not None and sum(depths) > budget:
        raise BudgetExceeded(f"naive grid needs {sum(depths)} products, budget is {budget}")
    states = []
    total = 0
    for i, J in enumerate(depths, start=1):
        pi = chain.initial_vector()
        pi_out, acc_out, lost = _run(chain, pi, 0.0, i * delta, J, 1)
        total += J
        states.append(TransientState(pi_out[0], float(acc_out[0]), i * delta, lost, total))
    return states


def precomputed_matrix(chain: UniformizedChain, delta: float, plan: TruncationPlan) -> sp.csr_matrix:
    """One-step matrix ``sum_j w_j P^j`` (dense in general: the fill-in effect)."""
    weights, _ = poisson_weights(chain.rate * delta, plan.J)
    P = chain.matrix
    term = sp.identity(chain.size, format="csr")
    M = weights[0] * term
    for j in range(1, plan.J + 1):
        term = term @ P
        M = M + weights[j] * term
    M = sp.csr_matrix(M)
    M.eliminate_zeros()
    return M


def precomputed_sweep(
    chain: UniformizedChain, delta: float, steps: int, kappa: float
) -> tuple[list[TransientState], sp.csr_matrix]:
    """Grid distributions via the precomputed one-step matrix (rewards not tracked)."""
    plan = sweep_plan(chain, delta, steps, kappa)
    M = precomputed_matrix(chain, delta, plan)
    pi = chain.initial_vector()
    states = []
    for i in range(1, steps + 1):
        pi = M.T @ pi
        states.append(TransientState(pi.copy(), float("nan"), i * delta, 0.0, plan.J + i))
    return states, M


def density(matrix: sp.spmatrix) -> float:
    n, m = matrix.shape
    return matrix.nnz / float(n * m)
