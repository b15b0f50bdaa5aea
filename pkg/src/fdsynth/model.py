"""In-memory fixed-delay CTMC with rewards, plus structural validation.

States are dense integer ids ``0 .. n_states-1``.  Exponential transitions are
kept as a sparse row map ``rates[s][s'] > 0``; every fixed-delay (fd) event
carries its own delay, its successor kernel (keyed by the states where it is
active) and a priority used to break ties between simultaneous events.
"""

from __future__ import annotations

import dataclasses
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

PROB_TOL = 1e-12

#: Key used in impulse maps for the exponential event.
EXPONENTIAL: str | None = None

Distribution = Mapping[int, float]


class ModelError(ValueError):
    """Raised for malformed models or invalid requests against a model."""


@dataclass(frozen=True)
class FdEvent:
    name: str
    delay: float
    kernel: Mapping[int, Distribution]
    priority: int = 0

    @property
    def active_states(self) -> frozenset[int]:
        return frozenset(self.kernel)


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    severity: str = "error"
    state: int | None = None
    event: str | None = None

    def __str__(self) -> str:
        where = []
        if self.event is not None:
            where.append(f"event {self.event}")
        if self.state is not None:
            where.append(f"state {self.state}")
        loc = f" ({', '.join(where)})" if where else ""
        return f"{self.severity}[{self.code}]{loc}: {self.message}"


@dataclass(frozen=True)
class FdctmcModel:
    n_states: int
    rates: Mapping[int, Mapping[int, float]]
    events: tuple[FdEvent, ...]
    initial: int
    rate_reward: tuple[float, ...]
    impulse: Mapping[tuple[int, str | None, int], float] = field(default_factory=dict)
    target: frozenset[int] = frozenset()
    variables: tuple[str, ...] = ()
    valuations: tuple[tuple[int, ...], ...] = ()

    def exit_rate(self, state: int) -> float:
        return math.fsum(self.rates.get(state, {}).values())

    def event(self, name: str) -> FdEvent:
        for ev in self.events:
            if ev.name == name:
                return ev
        raise KeyError(name)

    def active_events(self, state: int) -> list[FdEvent]:
        """Active fd events in ``state``, ordered by priority."""
        return sorted(
            (ev for ev in self.events if state in ev.kernel), key=lambda ev: ev.priority
        )

    @property
    def delays(self) -> dict[str, float]:
        return {ev.name: ev.delay for ev in self.events}

    def impulse_of(self, src: int, event: str | None, dst: int) -> float:
        return self.impulse.get((src, event, dst), 0.0)

    def describe_state(self, state: int) -> str:
        if self.valuations and self.variables:
            vals = self.valuations[state]
            return "(" + ",".join(f"{n}={v}" for n, v in zip(self.variables, vals)) + ")"
        return str(state)

    def successors(self, state: int) -> set[int]:
        """One-step successors through any event."""
        out = set(self.rates.get(state, {}))
        for ev in self.events:
            out.update(ev.kernel.get(state, {}))
        return out

    def reachable(self, *, through_target: bool = True) -> set[int]:
        seen = {self.initial}
        queue = deque([self.initial])
        while queue:
            s = queue.popleft()
            if not through_target and s in self.target:
                continue
            for t in self.successors(s):
                if t not in seen:
                    seen.add(t)
                    queue.append(t)
        return seen


def validate_basic(model: FdctmcModel) -> list[Diagnostic]:
    """Well-formedness of the tuple itself; an empty list means well-formed."""
    out: list[Diagnostic] = []
    n = model.n_states
    if not 0 <= model.initial < n:
        out.append(Diagnostic("initial", f"initial state {model.initial} out of range"))
    if len(model.rate_reward) != n:
        out.append(Diagnostic("rewards", f"rate reward vector has length {len(model.rate_reward)}, expected {n}"))
    for s, row in model.rates.items():
        for t, r in row.items():
            if not (0 <= s < n and 0 <= t < n):
                out.append(Diagnostic("rates", f"transition {s}->{t} out of range"))
            elif not r > 0 or not math.isfinite(r):
                out.append(Diagnostic("rates", f"rate {r} must be positive and finite", state=s))
    names = set()
    for ev in model.events:
        if ev.name in names:
            out.append(Diagnostic("event", "duplicate event name", event=ev.name))
        names.add(ev.name)
        if not (ev.delay > 0 and math.isfinite(ev.delay)):
            out.append(Diagnostic("delay", f"delay must be positive, got {ev.delay}", event=ev.name))
        for s, dist in ev.kernel.items():
            total = math.fsum(dist.values())
            if abs(total - 1.0) > PROB_TOL:
                out.append(
                    Diagnostic("kernel", f"row sums to {total:.12g}", state=s, event=ev.name)
                )
            if any(not p > 0 for p in dist.values()):
                out.append(Diagnostic("kernel", "non-positive kernel entry", state=s, event=ev.name))
            if any(not 0 <= t < n for t in dist):
                out.append(Diagnostic("kernel", "successor out of range", state=s, event=ev.name))
    if len({ev.priority for ev in model.events}) != len(model.events):
        out.append(Diagnostic("priority", "event priorities must be distinct"))
    for v in model.rate_reward:
        if v < 0:
            out.append(Diagnostic("rewards", f"negative rate reward {v}"))
            break
    for key, v in model.impulse.items():
        if v < 0:
            out.append(Diagnostic("rewards", f"negative impulse reward {v} on {key}"))
            break
    if model.initial in model.target:
        out.append(Diagnostic("target", "target set must not contain the initial state"))
    return out


def setting_states(model: FdctmcModel) -> dict[str, set[int]]:
    """States where each fd event's timer is freshly set.

    A state ``s`` with ``f`` active sets ``f`` when it is the initial state,
    when it is entered from a state where ``f`` is inactive, or when it is
    entered by ``f`` itself firing (the fired event's timer is re-armed).
    Target states are absorbing and never set a timer.
    """
    result: dict[str, set[int]] = {ev.name: set() for ev in model.events}
    active: dict[int, set[str]] = {}
    for ev in model.events:
        for s in ev.kernel:
            active.setdefault(s, set()).add(ev.name)
    for name in active.get(model.initial, ()):
        result[name].add(model.initial)
    for s in sorted(model.reachable(through_target=False)):
        if s in model.target:
            continue
        here = active.get(s, set())
        for t in model.rates.get(s, {}):
            if t in model.target:
                continue
            for name in active.get(t, set()) - here:
                result[name].add(t)
        for ev in model.events:
            for t in ev.kernel.get(s, {}):
                if t in model.target:
                    continue
                for name in active.get(t, set()):
                    if name not in here or name == ev.name:
                        result[name].add(t)
    return result


def validate_synthesis_restrictions(
    model: FdctmcModel, *, rewards: bool = True
) -> list[Diagnostic]:
    """Check the structural restrictions the analysis engines rely on.

    R1 at most one active fd event per state, R2 a single setting state per
    event, and (only when ``rewards``) R3 positive rate rewards and R4
    positive impulses on every fd transition.  Expected-reward queries need
    only R1 and R2.
    """
    out: list[Diagnostic] = []
    live = sorted(model.reachable(through_target=False) - model.target)
    for s in live:
        act = model.active_events(s)
        if len(act) > 1:
            names = ", ".join(ev.name for ev in act)
            out.append(Diagnostic("R1", f"more than one active fd event: {names}", state=s))
    for name, states in setting_states(model).items():
        if len(states) > 1:
            out.append(
                Diagnostic(
                    "R2",
                    f"timer is set in {len(states)} states: {sorted(states)}",
                    event=name,
                )
            )
        elif not states:
            out.append(Diagnostic("R2", "timer is never set (event unused)", "warning", event=name))
    if rewards:
        for s in live:
            if not model.rate_reward[s] > 0:
                out.append(Diagnostic("R3", "rate reward must be positive", state=s))
        for ev in model.events:
            for s, dist in ev.kernel.items():
                if s in model.target or s not in live:
                    continue
                for t, p in dist.items():
                    if p > 0 and not model.impulse_of(s, ev.name, t) > 0:
                        out.append(
                            Diagnostic(
                                "R4",
                                f"fd transition to {t} has no positive impulse reward",
                                state=s,
                                event=ev.name,
                            )
                        )
    return out


def errors(diags: Iterable[Diagnostic]) -> list[Diagnostic]:
    return [d for d in diags if d.severity == "error"]


def setting_state(model: FdctmcModel, event: str) -> int:
    states = setting_states(model)[event]
    if len(states) != 1:
        raise ModelError(f"event {event!r} has {len(states)} setting states, need exactly one")
    return next(iter(states))


def apply_delays(model: FdctmcModel, delays: Mapping[str, float]) -> FdctmcModel:
    """Copy of ``model`` with the delay vector replaced by ``delays``."""
    names = {ev.name for ev in model.events}
    missing = names - set(delays)
    if missing:
        raise ModelError(f"no delay given for events {sorted(missing)}")
    unknown = set(delays) - names
    if unknown:
        raise ModelError(f"unknown events {sorted(unknown)}")
    for name, d in delays.items():
        if not (d > 0 and math.isfinite(d)):
            raise ModelError(f"delay of {name!r} must be positive, got {d}")
    events = tuple(dataclasses.replace(ev, delay=float(delays[ev.name])) for ev in model.events)
    return dataclasses.replace(model, events=events)


@dataclass(frozen=True)
class SubordinatedChain:
    """CTMC restricted to the region where one fd event stays active.

    Local indexing puts region states first (the setting state at index 0),
    followed by absorbing exit states: out-of-region states reached by an
    exponential jump, and target states inside the region.
    """

    event: FdEvent
    setting: int
    region: tuple[int, ...]
    exits: tuple[int, ...]
    local_rates: Mapping[int, Mapping[int, float]]
    rate: float
    min_prob: float
    min_reward: float
    max_reward: float

    @property
    def size(self) -> int:
        return len(self.region)

    @property
    def states(self) -> tuple[int, ...]:
        return self.region + self.exits

    def index(self) -> dict[int, int]:
        return {s: i for i, s in enumerate(self.states)}


def build_subordinated_chain(
    model: FdctmcModel, event: str | FdEvent, setting: int | None = None
) -> SubordinatedChain:
    ev = model.event(event) if isinstance(event, str) else event
    if not ev.kernel:
        raise ModelError(f"event {ev.name!r} has no active states")
    if setting is None:
        setting = setting_state(model, ev.name)
    if setting not in ev.kernel:
        raise ModelError(f"state {setting} does not activate event {ev.name!r}")
    if setting in model.target:
        raise ModelError(f"setting state {setting} of {ev.name!r} is a target state")

    region: list[int] = [setting]
    exits: list[int] = []
    in_region = {setting}
    in_exits: set[int] = set()
    queue = deque([setting])
    while queue:
        s = queue.popleft()
        for t in sorted(model.rates.get(s, {})):
            if t in in_region or t in in_exits:
                continue
            if t in ev.kernel and t not in model.target:
                in_region.add(t)
                region.append(t)
                queue.append(t)
            else:
                in_exits.add(t)
                exits.append(t)

    local: dict[int, dict[int, float]] = {}
    pos = {s: i for i, s in enumerate(region + exits)}
    probs: list[float] = []
    max_exit = 0.0
    for s in region:
        row = model.rates.get(s, {})
        e = model.exit_rate(s)
        max_exit = max(max_exit, e)
        if row:
            local[pos[s]] = {pos[t]: r for t, r in row.items()}
            probs.extend(r / e for r in row.values())
        probs.extend(p for p in ev.kernel[s].values() if p > 0)
    rewards = [model.rate_reward[s] for s in region]
    # effective reward rate includes impulses on exponential jumps
    eff = [
        model.rate_reward[s]
        + math.fsum(r * model.impulse_of(s, EXPONENTIAL, t) for t, r in model.rates.get(s, {}).items())
        for s in region
    ]
    return SubordinatedChain(
        event=ev,
        setting=setting,
        region=tuple(region),
        exits=tuple(exits),
        local_rates=local,
        rate=max_exit if max_exit > 0 else 1.0,
        min_prob=min(probs) if probs else 1.0,
        min_reward=min(rewards),
        max_reward=max(eff),
    )
