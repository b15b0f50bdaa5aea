"""Discretization bounds for delay synthesis.

For every fd event the delay grid is ``{i * delta : 1 <= i <= K}`` with
``K * delta = upper``; ``kappa`` is the numerical precision allowed when
computing each action's kernel and reward.  The quantities are::

    bound_steps = val_upper / min_step_reward
    alpha  = min(eps / (bound_steps * (1 + val_upper) * |S'|),
                 1 / (2 * bound_steps * |S'|))
    d1     = max(2 * lam, 1 * (lam + 1) * max_reward)
    delta  = alpha / d1
    upper  = max(val_upper / (min_prob ** region_size * min_reward),
                 e * |ln(alpha / 2)| / (lam * min_prob))
    kappa  = eps * delta * min_reward / (2 * |S'| * (1 + val_upper))

where ``lam`` is the uniformization rate of the event's subordinated chain,
``min_prob`` its smallest branching probability, ``region_size`` its number
of states, ``min_reward``/``max_reward`` its extreme reward rates, and
``|S'|`` the number of decision states.  The factor 1 in ``d1`` is kept
literally.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .model import FdctmcModel, ModelError, SubordinatedChain


@dataclass(frozen=True)
class DiscretizationBounds:
    event: str
    epsilon: float
    val_upper: float
    n_decision: int
    min_step_reward: float
    rate: float
    min_prob: float
    region_size: int
    min_reward: float
    max_reward: float
    bound_steps: float
    alpha: float
    d1: float
    delta_raw: float
    upper: float
    kappa: float
    steps: int
    delta: float

    def as_dict(self) -> dict:
        return asdict(self)


def discretization_bounds(
    *,
    epsilon: float,
    val_upper: float,
    n_decision: int,
    min_step_reward: float,
    rate: float,
    min_prob: float,
    region_size: int,
    min_reward: float,
    max_reward: float,
    event: str = "",
) -> DiscretizationBounds:
    if not math.isfinite(val_upper):
        raise ModelError("no finite upper bound on the optimal reward; specify better initial delays")
    if not min_prob > 0:
        raise ModelError("minimal branching probability is zero")
    if not (min_step_reward > 0 and min_reward > 0):
        raise ModelError("rewards must be positive for synthesis")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    bound_steps = val_upper / min_step_reward
    alpha = min(
        epsilon / (bound_steps * (1 + val_upper) * n_decision),
        1 / (2 * bound_steps * n_decision),
    )
    d1 = max(2 * rate, 1 * (rate + 1) * max_reward)
    delta_raw = alpha / d1
    upper = max(
        val_upper / (min_prob**region_size * min_reward),
        math.e * abs(math.log(alpha / 2)) / (rate * min_prob),
    )
    kappa = epsilon * delta_raw * min_reward / (2 * n_decision * (1 + val_upper))
    steps = max(1, math.ceil(upper / delta_raw))
    while upper / steps > delta_raw:  # guard against rounding in the division
        steps += 1
    return DiscretizationBounds(
        event=event,
        epsilon=epsilon,
        val_upper=val_upper,
        n_decision=n_decision,
        min_step_reward=min_step_reward,
        rate=rate,
        min_prob=min_prob,
        region_size=region_size,
        min_reward=min_reward,
        max_reward=max_reward,
        bound_steps=bound_steps,
        alpha=alpha,
        d1=d1,
        delta_raw=delta_raw,
        upper=upper,
        kappa=kappa,
        steps=steps,
        delta=upper / steps,
    )


def min_step_reward(model: FdctmcModel, decision: list[int], chains: dict[int, SubordinatedChain]) -> float:
    """Structural lower bound on the expected reward of any single MDP step.

    Exponential states contribute ``R(s)/E(s)``.  An fd action pays at least
    the smallest impulse of its event if the timer expires; when the region
    can be left early, the reward before leaving is at least
    ``min_reward / rate`` in expectation, so the smaller of the two bounds
    the action.
    """
    best = math.inf
    for s in decision:
        if s in model.target:
            continue
        if s in chains:
            ch = chains[s]
            ev = ch.event
            imp = min(
                model.impulse_of(r, ev.name, t)
                for r in ch.region
                for t, p in ev.kernel[r].items()
                if p > 0
            )
            if ch.exits:
                imp = min(imp, ch.min_reward / ch.rate)
            best = min(best, imp)
        else:
            e = model.exit_rate(s)
            if e > 0:
                best = min(best, model.rate_reward[s] / e)
    return best
