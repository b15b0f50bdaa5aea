"""Discrete-event simulation of fdCTMC runs under the full timer semantics.

Unlike the analytic engines this needs none of the structural restrictions:
any number of fd events may be active, each keeps its own timer, and a timer
survives as long as its event stays active.  Runs stop at the first target
state or after ``step_cap`` steps.

Random numbers come from Philox streams derived from one seed through
``numpy.random.SeedSequence``: batch ``b`` of an estimate always uses the
``b``-th spawned child, so results depend only on (seed, runs, batch size).
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, TextIO

import numpy as np

from .model import EXPONENTIAL, FdctmcModel, ModelError, errors, validate_basic

DEFAULT_STEP_CAP = 1_000_000
DEFAULT_BATCH = 20_000


@dataclass(frozen=True)
class RunStep:
    state: int
    event: str | None  # None is the exponential event
    dwell: float
    reward: float


@dataclass(frozen=True)
class RunResult:
    reward: float
    steps: list[RunStep]
    reached_target: bool


@dataclass(frozen=True)
class Estimate:
    mean: float
    std_error: float
    runs: int
    truncated_runs: int = 0

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "stdError": self.std_error,
            "runs": self.runs,
            "truncatedRuns": self.truncated_runs,
        }


class _Compiled:
    """Per-state lookup tables for the hot loop."""

    def __init__(self, model: FdctmcModel):
        errs = errors(validate_basic(model))
        if errs:
            raise ModelError("; ".join(map(str, errs)))
        n = model.n_states
        self.exit_rate = [model.exit_rate(s) for s in range(n)]
        self.exp_dest: list[list[int]] = []
        self.exp_cum: list[list[float]] = []
        self.exp_imp: list[list[float]] = []
        for s in range(n):
            row = sorted(model.rates.get(s, {}).items())
            e = self.exit_rate[s]
            self.exp_dest.append([t for t, _ in row])
            self.exp_cum.append(list(np.cumsum([r / e for _, r in row])) if row else [])
            self.exp_imp.append([model.impulse_of(s, EXPONENTIAL, t) for t, _ in row])
        evs = sorted(model.events, key=lambda ev: ev.priority)
        self.names = [ev.name for ev in evs]
        self.delay = [ev.delay for ev in evs]
        self.active: list[tuple[int, ...]] = [
            tuple(k for k, ev in enumerate(evs) if s in ev.kernel) for s in range(n)
        ]
        self.fd_dest: dict[tuple[int, int], list[int]] = {}
        self.fd_cum: dict[tuple[int, int], list[float]] = {}
        self.fd_imp: dict[tuple[int, int], list[float]] = {}
        for k, ev in enumerate(evs):
            for s, dist in ev.kernel.items():
                items = sorted(dist.items())
                self.fd_dest[(s, k)] = [t for t, _ in items]
                self.fd_cum[(s, k)] = list(np.cumsum([p for _, p in items]))
                self.fd_imp[(s, k)] = [model.impulse_of(s, ev.name, t) for t, _ in items]
        self.rate_reward = list(model.rate_reward)
        self.target = [s in model.target for s in range(n)]
        self.initial = model.initial


def _pick(cum: list[float], u: float) -> int:
    i = bisect.bisect_right(cum, u * cum[-1])
    return min(i, len(cum) - 1)


def _run(c: _Compiled, uniform: Callable[[], float], exp_time, step_cap: int, trace: bool):
    s = c.initial
    timers: dict[int, float] = {k: c.delay[k] for k in c.active[s]}
    total = 0.0
    steps: list[RunStep] = []
    for _ in range(step_cap):
        if c.target[s]:
            return total, steps, True
        e = c.exit_rate[s]
        t_exp = exp_time(e) if e > 0 else math.inf
        fired = -1
        t_fd = math.inf
        for k in c.active[s]:  # priority order: strict '<' keeps the first on ties
            if timers[k] < t_fd:
                t_fd = timers[k]
                fired = k
        if fired < 0 and t_exp == math.inf:
            return total, steps, False
        if t_fd <= t_exp:
            dwell = t_fd
            key = (s, fired)
            i = _pick(c.fd_cum[key], uniform())
            nxt = c.fd_dest[key][i]
            imp = c.fd_imp[key][i]
        else:
            dwell = t_exp
            fired = -1
            i = _pick(c.exp_cum[s], uniform())
            nxt = c.exp_dest[s][i]
            imp = c.exp_imp[s][i]
        gain = dwell * c.rate_reward[s] + imp
        total += gain
        if trace:
            steps.append(RunStep(s, c.names[fired] if fired >= 0 else None, dwell, gain))
        old = c.active[s]
        new_timers = {}
        for k in c.active[nxt]:
            if k in old and k != fired:
                new_timers[k] = timers[k] - dwell
            else:
                new_timers[k] = c.delay[k]
        timers = new_timers
        s = nxt
    return total, steps, c.target[s]


class _UniformStream:
    def __init__(self, gen: np.random.Generator, block: int = 1 << 15):
        self.gen = gen
        self.block = block
        self.buf: list[float] = []
        self.pos = 0

    def __call__(self) -> float:
        if self.pos >= len(self.buf):
            # (0, 1]: avoids log(0) for exponential draws
            self.buf = (1.0 - self.gen.random(self.block)).tolist()
            self.pos = 0
        u = self.buf[self.pos]
        self.pos += 1
        return u


def _generator(seed: int | np.random.SeedSequence) -> np.random.Generator:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def simulate_run(
    model: FdctmcModel,
    seed: int | np.random.SeedSequence = 0,
    step_cap: int = DEFAULT_STEP_CAP,
    *,
    exp_draws: Iterable[float] | None = None,
) -> RunResult:
    """One run with its trace.

    ``exp_draws``, when given, supplies the exponential timer values in order
    (used to replay a specific trajectory); successor choices still use the
    seeded stream.
    """
    c = _Compiled(model)
    uniform = _UniformStream(_generator(seed))
    if exp_draws is None:
        exp_time = lambda rate: -math.log(uniform()) / rate  # noqa: E731
    else:
        draws = iter(exp_draws)
        exp_time = lambda rate: next(draws)  # noqa: E731
    reward, steps, reached = _run(c, uniform, exp_time, step_cap, True)
    return RunResult(reward, steps, reached)


def estimate_expected_reward(
    model: FdctmcModel,
    runs: int,
    seed: int = 0,
    step_cap: int = DEFAULT_STEP_CAP,
    *,
    batch: int = DEFAULT_BATCH,
) -> Estimate:
    """Monte Carlo estimate of the expected reward until the target.

    Truncated runs (step cap hit, or stuck without active events) are counted
    in ``truncated_runs`` and excluded from the mean.
    """
    if runs < 1:
        raise ValueError("runs must be positive")
    if not model.target:
        raise ModelError("model has no target states")
    c = _Compiled(model)
    n_batches = -(-runs // batch)
    children = np.random.SeedSequence(seed).spawn(n_batches)
    count = 0
    mean = 0.0
    m2 = 0.0
    truncated = 0
    log = math.log
    for b, child in enumerate(children):
        size = min(batch, runs - b * batch)
        uniform = _UniformStream(_generator(child))

        def exp_time(rate: float) -> float:
            return -log(uniform()) / rate

        vals = []
        for _ in range(size):
            r, _, ok = _run(c, uniform, exp_time, step_cap, False)
            if ok:
                vals.append(r)
            else:
                truncated += 1
        if not vals:
            continue
        # pairwise merge of batch statistics (Chan et al.)
        arr = np.asarray(vals)
        nb = arr.size
        mb = float(arr.mean())
        m2b = float(((arr - mb) ** 2).sum())
        tot = count + nb
        d = mb - mean
        mean += d * nb / tot
        m2 += m2b + d * d * count * nb / tot
        count = tot
    if count == 0:
        raise ModelError(f"all {runs} runs were truncated; no estimate")
    var = m2 / (count - 1) if count > 1 else 0.0
    return Estimate(mean, math.sqrt(var / count), runs, truncated)


def write_trace(result: RunResult, fh: TextIO) -> None:
    w = csv.writer(fh)
    w.writerow(["step", "state", "event", "dwell", "reward"])
    for i, st in enumerate(result.steps):
        w.writerow([i, st.state, st.event or "exp", repr(st.dwell), repr(st.reward)])
