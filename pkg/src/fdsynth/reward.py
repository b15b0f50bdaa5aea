"""Expected total reward until the target set, for a fixed delay vector.

The fdCTMC is reduced to a Markov chain over *decision states*: states with
no active fd event step through the embedded jump chain, and the setting
state of an fd event steps through the subordinated chain of that event (run
until the timer expires or the region is left).  States from which the target
is not reached almost surely get infinite reward; the rest solve a sparse
linear system.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .model import (
    EXPONENTIAL,
    FdctmcModel,
    ModelError,
    SubordinatedChain,
    build_subordinated_chain,
    errors,
    validate_basic,
    validate_synthesis_restrictions,
)
from .transient import UniformizedChain, transient_point


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan")):
        self.residual = residual
        super().__init__(message)


@dataclass(frozen=True)
class StepKernel:
    source: int
    transitions: Mapping[int, float]
    reward: float
    event: str | None = None
    delay: float | None = None

    @property
    def mass(self) -> float:
        return math.fsum(self.transitions.values())


@dataclass(frozen=True)
class ExpectedRewardResult:
    value: float
    per_state: Mapping[int, float]
    infinite_states: frozenset[int]
    residual: float
    kernels: Mapping[int, StepKernel] = field(default_factory=dict, repr=False)


class FdStepBuilder:
    """Step kernels of one fd event's setting state, for any delay.

    The subordinated chain is uniformized once.  Its outcome states are the
    absorbing exits followed by the successors of the event's kernel; a
    distribution over the chain at the moment the timer expires maps to a
    distribution over outcomes by pushing the region mass through the kernel.
    """

    def __init__(self, model: FdctmcModel, chain: SubordinatedChain):
        self.model = model
        self.chain = chain
        ev = chain.event
        local = chain.index()
        r = len(chain.region)
        self.n_region = r
        n = len(local)
        impulse = {}
        for s in chain.region:
            for t in model.rates.get(s, {}):
                v = model.impulse_of(s, EXPONENTIAL, t)
                if v:
                    impulse[(local[s], local[t])] = v
        rr = np.zeros(n)
        rr[:r] = [model.rate_reward[s] for s in chain.region]
        self.uniformized = UniformizedChain.from_rates(
            n, chain.local_rates, rr, impulse, rate=chain.rate, initial=0
        )
        outcomes = list(chain.exits)
        for s in chain.region:
            for t in ev.kernel[s]:
                if t not in outcomes:
                    outcomes.append(t)
        self.outcomes = np.array(outcomes, dtype=np.int64)
        col = {t: k for k, t in enumerate(outcomes)}
        self.fire = np.zeros((r, len(outcomes)))
        self.fire_impulse = np.zeros(r)
        for i, s in enumerate(chain.region):
            for t, p in ev.kernel[s].items():
                self.fire[i, col[t]] += p
                self.fire_impulse[i] += p * model.impulse_of(s, ev.name, t)
        self.exit_cols = np.array([col[t] for t in chain.exits], dtype=np.int64)

    @property
    def event(self) -> str:
        return self.chain.event.name

    def outcome_arrays(self, pi_grid: np.ndarray, acc_grid: np.ndarray):
        """Map chain distributions at expiry to (outcome probabilities, step rewards)."""
        r = self.n_region
        region = pi_grid[:, :r]
        probs = region @ self.fire
        if len(self.exit_cols):
            probs[:, self.exit_cols] += pi_grid[:, r:]
        rewards = acc_grid + region @ self.fire_impulse
        return probs, rewards

    def step_kernel(self, delay: float, tol: float = 1e-15) -> StepKernel:
        st = transient_point(self.uniformized, delay, tol)
        probs, rewards = self.outcome_arrays(st.pi[None, :], np.array([st.accumulated_reward]))
        trans = {int(t): float(p) for t, p in zip(self.outcomes, probs[0]) if p > 0}
        return StepKernel(self.chain.setting, trans, float(rewards[0]), self.event, delay)


def exponential_step(model: FdctmcModel, state: int) -> StepKernel:
    row = model.rates.get(state, {})
    e = model.exit_rate(state)
    if e <= 0:
        raise ModelError(f"state {state} has no active event (deadlock)")
    trans = {t: r / e for t, r in row.items()}
    reward = model.rate_reward[state] / e + math.fsum(
        p * model.impulse_of(state, EXPONENTIAL, t) for t, p in trans.items()
    )
    return StepKernel(state, trans, reward)


def state_kind(model: FdctmcModel, state: int) -> str:
    """'target', 'fd', 'exp' or 'deadlock'."""
    if state in model.target:
        return "target"
    if model.active_events(state):
        return "fd"
    if model.exit_rate(state) > 0:
        return "exp"
    return "deadlock"


def check_analysable(model: FdctmcModel, *, rewards: bool = False) -> None:
    if not model.target:
        raise ModelError('model has no target states (label "target" missing or empty)')
    errs = errors(validate_basic(model)) + errors(
        validate_synthesis_restrictions(model, rewards=rewards)
    )
    if errs:
        raise ModelError("; ".join(str(d) for d in errs))


class StepBuilders:
    """Lazily built and cached :class:`FdStepBuilder` per setting state."""

    def __init__(self, model: FdctmcModel):
        self.model = model
        self._cache: dict[int, FdStepBuilder] = {}

    def __call__(self, state: int) -> FdStepBuilder:
        b = self._cache.get(state)
        if b is None:
            (ev,) = self.model.active_events(state)
            b = FdStepBuilder(self.model, build_subordinated_chain(self.model, ev, state))
            self._cache[state] = b
        return b


def build_step_kernel(
    model: FdctmcModel,
    state: int,
    delay: float | None = None,
    *,
    tol: float = 1e-15,
    builders: StepBuilders | None = None,
) -> StepKernel:
    kind = state_kind(model, state)
    if kind == "fd":
        (ev,) = model.active_events(state)
        b = (builders or StepBuilders(model))(state)
        return b.step_kernel(ev.delay if delay is None else delay, tol)
    if delay is not None:
        raise ModelError(f"state {state} has no active fd event; delay override not allowed")
    if kind == "exp":
        return exponential_step(model, state)
    raise ModelError(f"state {state} is {kind}; no step kernel")


def decision_successors(model: FdctmcModel, state: int, builders: StepBuilders) -> list[int]:
    """Structural successors in the decision-state chain (independent of delays)."""
    kind = state_kind(model, state)
    if kind == "fd":
        return [int(t) for t in builders(state).outcomes]
    if kind == "exp":
        return list(model.rates[state])
    return []


def decision_states(model: FdctmcModel, builders: StepBuilders | None = None) -> list[int]:
    builders = builders or StepBuilders(model)
    seen = [model.initial]
    known = {model.initial}
    queue = deque([model.initial])
    while queue:
        s = queue.popleft()
        for t in decision_successors(model, s, builders):
            if t not in known:
                known.add(t)
                seen.append(t)
                queue.append(t)
    return seen


def _backward(preds: Mapping[int, set[int]], seeds: Iterable[int]) -> set[int]:
    out = set(seeds)
    queue = deque(out)
    while queue:
        s = queue.popleft()
        for p in preds.get(s, ()):
            if p not in out:
                out.add(p)
                queue.append(p)
    return out


def almost_sure_states(succ: Mapping[int, Iterable[int]], targets: Iterable[int]) -> set[int]:
    """States of a Markov chain reaching ``targets`` with probability one."""
    states = set(succ)
    targets = set(targets)
    states |= targets
    preds: dict[int, set[int]] = {}
    for s, ts in succ.items():
        if s in targets:
            continue
        for t in ts:
            states.add(t)
            preds.setdefault(t, set()).add(s)
    can_reach = _backward(preds, targets)
    hopeless = states - can_reach
    return states - _backward(preds, hopeless)


def infinite_reward_states(kernels: Mapping[int, StepKernel], targets: Iterable[int]) -> set[int]:
    succ: dict[int, list[int]] = {s: [t for t, p in k.transitions.items() if p > 0] for s, k in kernels.items()}
    targets = set(targets)
    for k in kernels.values():
        for t in k.transitions:
            succ.setdefault(t, [])
    return set(succ) - almost_sure_states(succ, targets) - targets


def solve_refined(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Sparse LU solve followed by one step of iterative refinement."""
    A = sp.csc_matrix(A)
    lu = splu(A)
    x = lu.solve(b)
    return x + lu.solve(b - A @ x)


def solve_rewards(
    kernels: Mapping[int, StepKernel],
    targets: Iterable[int],
    epsilon_solve: float = 1e-9,
) -> tuple[dict[int, float], set[int], float]:
    targets = set(targets)
    infinite = infinite_reward_states(kernels, targets)
    unknown = sorted(s for s in kernels if s not in infinite and s not in targets)
    pos = {s: i for i, s in enumerate(unknown)}
    n = len(unknown)
    values: dict[int, float] = {t: 0.0 for t in targets}
    values.update({s: math.inf for s in infinite})
    if n == 0:
        return values, infinite, 0.0
    rows, cols, vals = [], [], []
    b = np.empty(n)
    for s in unknown:
        k = kernels[s]
        i = pos[s]
        b[i] = k.reward
        for t, p in k.transitions.items():
            j = pos.get(t)
            if j is not None:
                rows.append(i)
                cols.append(j)
                vals.append(p)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    x = solve_refined(sp.identity(n, format="csr") - P, b)
    residual = float(np.max(np.abs(x - b - P @ x)))
    scale = max(1.0, float(np.max(np.abs(x)))) if np.all(np.isfinite(x)) else 1.0
    if not np.all(np.isfinite(x)) or residual > epsilon_solve * scale:
        raise ConvergenceError(f"linear solve residual {residual:.3g} exceeds {epsilon_solve:.3g}", residual)
    values.update({s: float(x[pos[s]]) for s in unknown})
    return values, infinite, residual


def expected_reward(
    model: FdctmcModel,
    epsilon_solve: float = 1e-9,
    *,
    tol: float = 1e-15,
    builders: StepBuilders | None = None,
) -> ExpectedRewardResult:
    """Expected reward accumulated before the first visit to the target set."""
    check_analysable(model, rewards=False)
    builders = builders or StepBuilders(model)
    kernels: dict[int, StepKernel] = {}
    for s in decision_states(model, builders):
        kind = state_kind(model, s)
        if kind in ("fd", "exp"):
            kernels[s] = build_step_kernel(model, s, tol=tol, builders=builders)
    values, infinite, residual = solve_rewards(kernels, model.target, epsilon_solve)
    return ExpectedRewardResult(
        value=values[model.initial],
        per_state=values,
        infinite_states=frozenset(infinite),
        residual=residual,
        kernels=kernels,
    )
