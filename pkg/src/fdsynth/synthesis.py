"""epsilon-optimal synthesis of fixed delays.

Pipeline: evaluate the model at its declared delays (an upper bound on the
optimum), derive a delay grid per fd event, turn every decision state into a
block of MDP actions (one per grid delay, all from a single transient sweep),
minimise expected total reward, and re-evaluate the model at the chosen
delays.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .bounds import DiscretizationBounds, discretization_bounds, min_step_reward
from .mdp import ActionTable, DiscretizedMdp, MdpSolution, solve_mdp
from .model import FdctmcModel, ModelError, SubordinatedChain, apply_delays
from .reward import (
    StepBuilders,
    check_analysable,
    decision_states,
    expected_reward,
    exponential_step,
    state_kind,
)
from .transient import BudgetExceeded, TruncationPlan, sweep_chunks, sweep_plan

DEFAULT_MEMORY = 256 * 2**20
DEFAULT_BUDGET = 20_000_000_000
THREADS_ENV = "FDSYNTH_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Grid:
    """Delay grid of one event: ``{i * delta : 1 <= i <= steps}``."""

    delta: float
    steps: int
    kappa: float

    def delays(self) -> np.ndarray:
        return self.delta * np.arange(1, self.steps + 1)


@dataclass
class SynthesisResult:
    delays: dict[str, float]
    value: float
    val_upper: float
    mdp_value: float
    epsilon: float
    bounds: list[DiscretizationBounds]
    grids: dict[str, Grid]
    action_counts: dict[str, int]
    iterations: int
    residual: float
    method: str
    products: int
    streamed_tables: int = 0
    fallback: bool = False
    timings: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "delays": self.delays,
            "value": self.value,
            "valUpper": self.val_upper,
            "mdpValue": self.mdp_value,
            "epsilon": self.epsilon,
            "bounds": [b.as_dict() for b in self.bounds],
            "grids": {
                k: {"delta": g.delta, "steps": g.steps, "kappa": g.kappa}
                for k, g in self.grids.items()
            },
            "actionCounts": self.action_counts,
            "iterations": self.iterations,
            "residual": self.residual,
            "method": self.method,
            "products": self.products,
            "streamedTables": self.streamed_tables,
            "fallback": self.fallback,
            "timings": self.timings,
        }


def fd_setting_chains(
    model: FdctmcModel, decision: list[int], builders: StepBuilders
) -> dict[int, SubordinatedChain]:
    return {s: builders(s).chain for s in decision if state_kind(model, s) == "fd"}


def compute_bounds(
    model: FdctmcModel,
    epsilon: float,
    val_upper: float,
    *,
    builders: StepBuilders | None = None,
) -> dict[str, DiscretizationBounds]:
    """Per-event bounds; epsilon is split equally over the events in use."""
    builders = builders or StepBuilders(model)
    decision = decision_states(model, builders)
    chains = fd_setting_chains(model, decision, builders)
    if not chains:
        return {}
    step_min = min_step_reward(model, decision, chains)
    share = epsilon / len(chains)
    out = {}
    for ch in chains.values():
        out[ch.event.name] = discretization_bounds(
            epsilon=share,
            val_upper=val_upper,
            n_decision=len(decision),
            min_step_reward=step_min,
            rate=ch.rate,
            min_prob=ch.min_prob,
            region_size=len(ch.region),
            min_reward=ch.min_reward,
            max_reward=ch.max_reward,
            event=ch.event.name,
        )
    return out


def _fd_table(builder, grid: Grid, memory: int) -> ActionTable:
    chain = builder.uniformized
    plan: TruncationPlan = sweep_plan(chain, grid.delta, grid.steps, grid.kappa)
    n_out = len(builder.outcomes)

    def source():
        for start, pi, acc in sweep_chunks(chain, grid.delta, grid.steps, plan):
            probs, rewards = builder.outcome_arrays(pi, acc)
            yield start, probs, rewards

    table = ActionTable(
        state=builder.chain.setting,
        outcomes=builder.outcomes,
        count=grid.steps,
        source=source,
        event=builder.event,
        step=grid.delta,
        products=plan.J * grid.steps,
        truncation=plan.J,
    )
    if grid.steps * (n_out + 1) * 8 <= memory:
        probs = np.empty((grid.steps, n_out))
        rewards = np.empty(grid.steps)
        for start, p, r in source():
            probs[start : start + len(r)] = p
            rewards[start : start + len(r)] = r
        table.probs, table.rewards = probs, rewards
    return table


def build_discretized_mdp(
    model: FdctmcModel,
    grids: Mapping[str, Grid],
    *,
    builders: StepBuilders | None = None,
    memory: int = DEFAULT_MEMORY,
    budget: int | None = None,
    threads: int = 1,
) -> DiscretizedMdp:
    """One action table per non-target decision state.

    Raises :class:`BudgetExceeded` before any sweep if the total number of
    vector-matrix products exceeds ``budget``.
    """
    builders = builders or StepBuilders(model)
    decision = decision_states(model, builders)
    fd_states = [s for s in decision if state_kind(model, s) == "fd"]
    total = 0
    for s in fd_states:
        b = builders(s)
        g = grids[b.event]
        total += sweep_plan(b.uniformized, g.delta, g.steps, g.kappa).J * g.steps
    if budget is not None and total > budget:
        raise BudgetExceeded(f"discretized MDP needs {total} vector-matrix products, budget is {budget}")
    mdp = DiscretizedMdp(
        initial=model.initial,
        states=[s for s in decision if s not in model.target],
        targets=frozenset(model.target),
    )
    for s in decision:
        if state_kind(model, s) == "exp":
            k = exponential_step(model, s)
            outs = np.array(sorted(k.transitions), dtype=np.int64)
            mdp.tables[s] = ActionTable(
                state=s,
                outcomes=outs,
                count=1,
                probs=np.array([[k.transitions[int(t)] for t in outs]]),
                rewards=np.array([k.reward]),
            )
        elif state_kind(model, s) == "deadlock":
            raise ModelError(f"state {model.describe_state(s)} is a deadlock")

    def make(s: int) -> ActionTable:
        b = builders(s)
        return _fd_table(b, grids[b.event], memory)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for s, tab in zip(fd_states, pool.map(make, fd_states)):
            mdp.tables[s] = tab
    return mdp


def synthesize(
    model: FdctmcModel,
    epsilon: float = 1e-3,
    *,
    grids: Mapping[str, Grid] | None = None,
    method: str = "policy",
    budget: int | None = DEFAULT_BUDGET,
    memory: int = DEFAULT_MEMORY,
    threads: int | None = None,
    epsilon_solve: float = 1e-9,
) -> SynthesisResult:
    """Delays whose expected reward is within ``epsilon`` of the optimum.

    ``grids`` replaces the derived delay grids (the guarantee then holds only
    relative to the best delays on those grids).
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    threads = default_threads() if threads is None else threads
    check_analysable(model, rewards=True)
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    builders = StepBuilders(model)
    base = expected_reward(model, epsilon_solve, builders=builders)
    val_upper = base.value
    if not math.isfinite(val_upper):
        raise ModelError(
            "expected reward at the declared delays is infinite; "
            "no finite upper bound, specify better initial delays"
        )
    timings["valUpper"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    bounds = compute_bounds(model, epsilon, val_upper, builders=builders)
    if grids is None:
        grids = {k: Grid(b.delta, b.steps, b.kappa) for k, b in bounds.items()}
    else:
        missing = set(bounds) - set(grids)
        if missing:
            raise ValueError(f"no grid given for events {sorted(missing)}")
    timings["bounds"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    mdp = build_discretized_mdp(
        model, grids, builders=builders, memory=memory, budget=budget, threads=threads
    )
    timings["build"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    convergence = min((g.kappa for g in grids.values()), default=epsilon_solve) / 10
    sol: MdpSolution = solve_mdp(mdp, convergence, method=method, threads=threads)
    timings["solve"] = time.perf_counter() - t0

    delays = dict(model.delays)
    for s, tab in mdp.tables.items():
        if tab.event is not None and s in sol.policy:
            delays[tab.event] = tab.delay(sol.policy[s])

    t0 = time.perf_counter()
    achieved = expected_reward(apply_delays(model, delays), epsilon_solve, builders=None).value
    timings["verify"] = time.perf_counter() - t0
    fallback = False
    if not achieved <= val_upper + epsilon_solve:
        fallback = True
        delays = dict(model.delays)
        achieved = val_upper
    streamed = sum(1 for t in mdp.tables.values() if t.event is not None and not t.materialized)
    return SynthesisResult(
        delays=delays,
        value=achieved,
        val_upper=val_upper,
        mdp_value=sol.values[model.initial],
        epsilon=epsilon,
        bounds=list(bounds.values()),
        grids=dict(grids),
        action_counts={t.event: t.count for t in mdp.tables.values() if t.event is not None},
        iterations=sol.iterations,
        residual=sol.residual,
        method=sol.method,
        products=sum(t.products for t in mdp.tables.values()),
        streamed_tables=streamed,
        fallback=fallback,
        timings=timings,
    )

