"""Turn a parsed model into an explicit :class:`FdctmcModel`, and back."""

from __future__ import annotations

import math
from collections import deque
from typing import Mapping

from ..model import EXPONENTIAL, PROB_TOL, FdctmcModel, FdEvent, ModelError
from .parser import Ast, Command, ParseError, evaluate, parse

MAX_STATES = 2_000_000


class ElaborationError(ModelError):
    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def _constants(ast: Ast, overrides: Mapping[str, float] | None) -> dict:
    env: dict = {}
    overrides = dict(overrides or {})
    for c in ast.constants:
        if c.name in overrides:
            value = overrides.pop(c.name)
        elif c.value is None:
            raise ElaborationError(f"constant {c.name!r} has no value", c.line)
        else:
            value = evaluate(c.value, env)
        env[c.name] = int(value) if c.type == "int" else float(value)
    if overrides:
        raise ElaborationError(f"unknown constants {sorted(overrides)}")
    return env


def elaborate(
    ast: Ast,
    constants: Mapping[str, float] | None = None,
    *,
    rewards: str | None = None,
) -> FdctmcModel:
    """Build the reachable explicit state space of ``ast``.

    State ids follow the lexicographic order of variable valuations, so the
    same source always yields the same numbering.
    """
    env0 = _constants(ast, constants)

    variables = [v for m in ast.modules for v in m.variables]
    names = [v.name for v in variables]
    bounds = []
    for v in variables:
        lo, hi = int(evaluate(v.low, env0)), int(evaluate(v.high, env0))
        if lo > hi:
            raise ElaborationError(f"empty range for {v.name!r}", v.line)
        bounds.append((lo, hi))
    init = tuple(
        int(evaluate(v.init, env0)) if v.init is not None else lo
        for v, (lo, _) in zip(variables, bounds)
    )
    for v, x, (lo, hi) in zip(variables, init, bounds):
        if not lo <= x <= hi:
            raise ElaborationError(f"initial value {x} of {v.name!r} outside [{lo}..{hi}]", v.line)

    event_decl: dict[str, tuple[int, float]] = {}
    owner: dict[str, str] = {}
    for m in ast.modules:
        for fd in m.fdelays:
            if fd.name in event_decl:
                raise ElaborationError(f"fd event {fd.name!r} declared twice", fd.line)
            event_decl[fd.name] = (len(event_decl), float(evaluate(fd.delay, env0)))
            owner[fd.name] = m.name
    commands: list[Command] = []
    for m in ast.modules:
        for c in m.commands:
            if c.event is not None:
                if c.event not in event_decl:
                    raise ElaborationError(f"undeclared fd event {c.event!r}", c.line)
                if owner[c.event] != m.name:
                    raise ElaborationError(
                        f"fd event {c.event!r} is local to module {owner[c.event]!r}", c.line
                    )
            commands.append(c)

    block = None
    if ast.rewards:
        if rewards is None:
            block = ast.rewards[0]
        else:
            matches = [b for b in ast.rewards if b.name == rewards]
            if not matches:
                raise ElaborationError(f"no reward structure named {rewards!r}")
            block = matches[0]
    rate_items = [it for it in block.items if it.label is None] if block else []
    impulse_items = [it for it in block.items if it.label is not None] if block else []

    index = {n: i for i, n in enumerate(names)}

    def env_of(val: tuple[int, ...]) -> dict:
        env = dict(env0)
        env.update(zip(names, val))
        return env

    def successor(val, assignments, c: Command, env) -> tuple[int, ...]:
        new = list(val)
        for var, e in assignments:
            if var not in index:
                raise ElaborationError(f"assignment to unknown variable {var!r}", c.line)
            x = evaluate(e, env)
            if x != int(x):
                raise ElaborationError(f"non-integer value {x} for {var!r}", c.line)
            lo, hi = bounds[index[var]]
            if not lo <= x <= hi:
                raise ElaborationError(
                    f"update sets {var!r} to {int(x)} outside [{lo}..{hi}]", c.line
                )
            new[index[var]] = int(x)
        return tuple(new)

    # exploration keyed by valuation
    exp_rates: dict[tuple, dict[tuple, float]] = {}
    exp_weighted_imp: dict[tuple, dict[tuple, float]] = {}
    fd_kernel: dict[str, dict[tuple, dict[tuple, float]]] = {e: {} for e in event_decl}
    fd_weighted_imp: dict[str, dict[tuple, dict[tuple, float]]] = {e: {} for e in event_decl}
    seen = {init}
    queue = deque([init])
    while queue:
        val = queue.popleft()
        env = env_of(val)
        for c in commands:
            if not evaluate(c.guard, env):
                continue
            imp = math.fsum(
                float(evaluate(it.value, env))
                for it in impulse_items
                if it.label == c.label and evaluate(it.guard, env)
            )
            if c.event is None:
                row = exp_rates.setdefault(val, {})
                irow = exp_weighted_imp.setdefault(val, {})
                for u in c.updates:
                    rate = float(evaluate(u.weight, env))
                    if rate < 0:
                        raise ElaborationError(f"negative rate {rate}", c.line)
                    if rate == 0:
                        continue
                    nxt = successor(val, u.assignments, c, env)
                    row[nxt] = row.get(nxt, 0.0) + rate
                    irow[nxt] = irow.get(nxt, 0.0) + rate * imp
                    if nxt not in seen:
                        seen.add(nxt)
                        queue.append(nxt)
            else:
                if val in fd_kernel[c.event]:
                    raise ElaborationError(
                        f"two commands of fd event {c.event!r} are enabled in state {val}", c.line
                    )
                dist: dict[tuple, float] = {}
                idist: dict[tuple, float] = {}
                probs = []
                for u in c.updates:
                    p = float(evaluate(u.weight, env))
                    if p < 0:
                        raise ElaborationError(f"negative probability {p}", c.line)
                    probs.append(p)
                    if p == 0:
                        continue
                    nxt = successor(val, u.assignments, c, env)
                    dist[nxt] = dist.get(nxt, 0.0) + p
                    idist[nxt] = idist.get(nxt, 0.0) + p * imp
                    if nxt not in seen:
                        seen.add(nxt)
                        queue.append(nxt)
                total = math.fsum(probs)
                if abs(total - 1.0) > PROB_TOL:
                    raise ElaborationError(
                        f"probabilities sum to {total:.12g} in a command of fd event {c.event!r}",
                        c.line,
                    )
                fd_kernel[c.event][val] = dist
                fd_weighted_imp[c.event][val] = idist
        if len(seen) > MAX_STATES:
            raise ElaborationError(f"state space exceeds {MAX_STATES} states")

    order = sorted(seen)
    sid = {v: i for i, v in enumerate(order)}

    rates: dict[int, dict[int, float]] = {}
    impulse: dict[tuple[int, str | None, int], float] = {}
    for val, row in exp_rates.items():
        if not row:
            continue
        s = sid[val]
        rates[s] = {sid[t]: r for t, r in sorted(row.items(), key=lambda kv: sid[kv[0]])}
        for t, w in exp_weighted_imp[val].items():
            if w > 0:
                impulse[(s, EXPONENTIAL, sid[t])] = w / row[t]
    events = []
    for name, (prio, delay) in sorted(event_decl.items(), key=lambda kv: kv[1][0]):
        kernel = {}
        for val, dist in sorted(fd_kernel[name].items(), key=lambda kv: sid[kv[0]]):
            s = sid[val]
            kernel[s] = {sid[t]: p for t, p in sorted(dist.items(), key=lambda kv: sid[kv[0]])}
            for t, w in fd_weighted_imp[name][val].items():
                if w > 0:
                    impulse[(s, name, sid[t])] = w / dist[t]
        events.append(FdEvent(name, delay, kernel, prio))

    rate_reward = []
    for val in order:
        env = env_of(val)
        rate_reward.append(
            math.fsum(float(evaluate(it.value, env)) for it in rate_items if evaluate(it.guard, env))
        )
    target = frozenset()
    if "target" in ast.labels:
        guard = ast.labels["target"]
        target = frozenset(sid[v] for v in order if evaluate(guard, env_of(v)))

    return FdctmcModel(
        n_states=len(order),
        rates=rates,
        events=tuple(events),
        initial=sid[init],
        rate_reward=tuple(rate_reward),
        impulse=impulse,
        target=target,
        variables=tuple(names),
        valuations=tuple(order),
    )


def unused_events(ast: Ast) -> list[str]:
    used = {c.event for m in ast.modules for c in m.commands if c.event is not None}
    return [fd.name for m in ast.modules for fd in m.fdelays if fd.name not in used]


def load_model(
    text: str, constants: Mapping[str, float] | None = None, *, rewards: str | None = None
) -> FdctmcModel:
    return elaborate(parse(text), constants, rewards=rewards)


def export_model(model: FdctmcModel) -> str:
    """Canonical flat source with one variable ``s`` indexing the states."""
    n = model.n_states
    lines = [
        "fdctmc",
        "",
        f"// flat export: {n} states, s indexes the states",
        "module flat",
    ]
    for ev in sorted(model.events, key=lambda e: e.priority):
        lines.append(f"  fdelay {ev.name} = {ev.delay!r};")
    lines.append(f"  s : [0..{n - 1}] init {model.initial};")
    labels: dict[str, float] = {}
    for s in sorted(model.rates):
        for t, r in sorted(model.rates[s].items()):
            imp = model.impulse_of(s, EXPONENTIAL, t)
            lab = ""
            if imp:
                lab = f"x_{s}_{t}"
                labels[lab] = imp
            lines.append(f"  [{lab}] s={s} -> {r!r} : (s'={t});")
    for ev in sorted(model.events, key=lambda e: e.priority):
        for s in sorted(ev.kernel):
            dist = ev.kernel[s]
            imps = {model.impulse_of(s, ev.name, t) for t in dist}
            if len(imps) > 1:
                raise ModelError(
                    f"impulse of {ev.name!r} in state {s} depends on the successor; "
                    "not expressible in the modeling language"
                )
            imp = imps.pop() if imps else 0.0
            lab = ""
            if imp:
                lab = f"f_{ev.name}_{s}"
                labels[lab] = imp
            ups = " + ".join(f"{p!r} : (s'={t})" for t, p in sorted(dist.items()))
            lines.append(f"  [{lab}] s={s} --{ev.name}-> {ups};")
    lines.append("endmodule")
    lines.append("")
    if model.target:
        guard = " | ".join(f"s={t}" for t in sorted(model.target))
        lines.append(f'label "target" = {guard};')
        lines.append("")
    lines.append("rewards")
    for s, r in enumerate(model.rate_reward):
        if r:
            lines.append(f"  s={s} : {r!r};")
    for lab, imp in labels.items():
        lines.append(f"  [{lab}] true : {imp!r};")
    lines.append("endrewards")
    return "\n".join(lines) + "\n"


def same_structure(a: FdctmcModel, b: FdctmcModel, tol: float = 1e-12) -> bool:
    """Equality of the analysed content (metadata such as variable names ignored)."""
    if (a.n_states, a.initial, a.target) != (b.n_states, b.initial, b.target):
        return False

    def close_maps(x: Mapping, y: Mapping) -> bool:
        keys = set(x) | set(y)
        return all(abs(x.get(k, 0.0) - y.get(k, 0.0)) <= tol for k in keys)

    if set(a.rates) - set(b.rates) or set(b.rates) - set(a.rates):
        if any(a.rates.get(s) for s in set(a.rates) ^ set(b.rates)) or any(
            b.rates.get(s) for s in set(a.rates) ^ set(b.rates)
        ):
            return False
    for s in set(a.rates) | set(b.rates):
        if not close_maps(a.rates.get(s, {}), b.rates.get(s, {})):
            return False
    if len(a.events) != len(b.events):
        return False
    for ea, eb in zip(sorted(a.events, key=lambda e: e.priority), sorted(b.events, key=lambda e: e.priority)):
        if ea.name != eb.name or abs(ea.delay - eb.delay) > tol or set(ea.kernel) != set(eb.kernel):
            return False
        if not all(close_maps(ea.kernel[s], eb.kernel[s]) for s in ea.kernel):
            return False
    if not all(abs(x - y) <= tol for x, y in zip(a.rate_reward, b.rate_reward)):
        return False
    return close_maps(a.impulse, b.impulse)


__all__ = [
    "ElaborationError",
    "ParseError",
    "elaborate",
    "export_model",
    "load_model",
    "same_structure",
    "unused_events",
]
