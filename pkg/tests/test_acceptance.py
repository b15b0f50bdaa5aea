"""Acceptance criteria, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line (visible with ``-s`` or
in ``pytest -v`` output through ``capsys.disabled``) and then asserts.
Criteria 2, 3 and 5 take minutes; all of them run by default.
"""

from __future__ import annotations

import io
import json
import math
import time
from contextlib import redirect_stdout
from itertools import combinations

import numpy as np
import pytest

from conftest import BUNDLED, TRADEOFF, bundled
from oracles import birth_death_hitting_time, two_state_closed_form
from test_model import MUTANTS
from test_reward import MM1N
from fdsynth.bounds import discretization_bounds
from fdsynth.cli import main
from fdsynth.language import export_model, load_model, same_structure
from fdsynth.model import apply_delays, build_subordinated_chain, errors, setting_states, validate_synthesis_restrictions
from fdsynth.reward import expected_reward
from fdsynth.simulate import estimate_expected_reward
from fdsynth.synthesis import Grid, synthesize
from fdsynth.transient import (
    UniformizedChain,
    naive_transient_grid,
    sweep_plan,
    transient_point,
    transient_sweep,
)

SIM_SEED = 2024
PAPER_DPM2_PREFIX = 0.336634754


@pytest.fixture
def report(capsys):
    def emit(criterion: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        assert ok, detail

    return emit


def toy(name: str):
    return load_model(TRADEOFF) if name == "tradeoff" else bundled(name)


# 1 -------------------------------------------------------------------------

def test_criterion_1_analytic_ctmc(report):
    t0 = time.perf_counter()
    chain = UniformizedChain.from_rates(2, {0: {1: 1.0}})
    pi = transient_point(chain, 1.0, 1e-14).pi
    err_two = float(np.max(np.abs(pi - np.array(two_state_closed_form(1.0)))))
    errs = []
    for n, lam, mu in [(1, 2.0, 3.0), (3, 1.0, 1.0), (5, 2.0, 3.0), (8, 3.0, 2.0), (12, 1.0, 4.0)]:
        got = expected_reward(load_model(MM1N, {"n": n, "lam": lam, "mu": mu})).value
        exact = birth_death_hitting_time(lam, mu, n)
        # absolute for values up to 1, relative beyond (the last case is ~2e7)
        errs.append(abs(got - exact) / max(1.0, abs(exact)))
    ok = err_two <= 1e-8 and max(errs) <= 1e-8
    report(
        "criterion 1 (analytic CTMC oracle)",
        ok,
        f"two-state error {err_two:.2e}, M/M/1/n max scaled error {max(errs):.2e} "
        f"over {len(errs)} queues (tolerance 1e-8) in {time.perf_counter() - t0:.1f}s",
    )


# 2 -------------------------------------------------------------------------

def test_criterion_2_cross_engine_agreement(report):
    t0 = time.perf_counter()
    lines = []
    ok = len(BUNDLED) >= 5 and {"dpm2", "rejuv"} <= set(BUNDLED)
    for name in BUNDLED:
        m = bundled(name)
        value = expected_reward(m).value
        est = estimate_expected_reward(m, 1_000_000, seed=SIM_SEED)
        z = (est.mean - value) / est.std_error
        good = abs(z) <= 3 and est.truncated_runs == 0
        ok &= good
        lines.append(f"{name} {value:.6f} vs {est.mean:.6f}+-{est.std_error:.1e} (z={z:+.2f})")
    report(
        "criterion 2 (reward engine vs simulator, 1e6 runs, 3 SE)",
        ok,
        "; ".join(lines) + f" in {time.perf_counter() - t0:.0f}s",
    )


# 3 -------------------------------------------------------------------------

def _unimodal(values: np.ndarray, tol: float = 1e-12) -> bool:
    k = int(np.argmin(values))
    left = np.diff(values[: k + 1])
    right = np.diff(values[k:])
    return bool(np.all(left <= tol) and np.all(right >= -tol))


def grid_search_oracle(model, event: str, step: float, upper: float, block: int = 2000):
    """Minimum of the expected reward over the delays ``j * step`` in ``(0, upper]``.

    Every ``j`` is covered: the search narrows a bracket by sampling it at
    ``block`` points, which is exact once the sampled profile is unimodal
    (checked at each level), and scans the final bracket exhaustively.
    """
    def value(j: int) -> float:
        return expected_reward(apply_delays(model, {event: j * step})).value

    lo, hi = 1, int(math.floor(upper / step + 1e-9))
    evaluations = 0
    while hi - lo + 1 > 2 * block:
        js = np.unique(np.linspace(lo, hi, block).round().astype(np.int64))
        vals = np.array([value(int(j)) for j in js])
        evaluations += len(js)
        if not _unimodal(vals):
            raise AssertionError("sampled profile is not unimodal; bracketing not justified")
        k = int(np.argmin(vals))
        lo, hi = int(js[max(k - 1, 0)]), int(js[min(k + 1, len(js) - 1)])
    js = np.arange(lo, hi + 1)
    vals = np.array([value(int(j)) for j in js])
    evaluations += len(js)
    k = int(np.argmin(vals))
    return float(vals[k]), int(js[k]) * step, evaluations


TOYS = ("retry", "rejuv", "sleep", "tradeoff")


def test_criterion_3_epsilon_guarantee(report):
    t0 = time.perf_counter()
    lines = []
    ok = True
    max_k = 0
    for name in TOYS:
        m = toy(name)
        (ev,) = [e.name for e in m.events]
        for eps in (0.01, 0.005):
            res = synthesize(m, eps)
            grid = res.grids[ev]
            max_k = max(max_k, grid.steps)
            oracle, at, n_eval = grid_search_oracle(m, ev, grid.delta / 2, grid.delta * grid.steps)
            good = res.value <= oracle + eps and res.value <= res.val_upper
            ok &= good
            lines.append(
                f"{name} eps={eps}: {res.value:.9f} vs oracle {oracle:.9f} at {at:.6g} "
                f"(gap {res.value - oracle:+.1e}, K={grid.steps}, {n_eval} oracle evaluations)"
            )
    # the same comparison on explicit grids with K <= 200
    small = []
    for name in TOYS:
        m = toy(name)
        (ev,) = [e.name for e in m.events]
        delta, steps = 0.02, 200
        res = synthesize(m, 0.01, grids={ev: Grid(delta, steps, 1e-12)})
        values = [expected_reward(apply_delays(m, {ev: (i + 1) * delta})).value for i in range(steps)]
        best = min(values)
        expected = min(best, res.val_upper)  # declared delays win if no grid point beats them
        good = abs(res.value - expected) <= 0.01
        ok &= good
        small.append(f"{name} {res.value:.9f} vs {expected:.9f}")
    report(
        "criterion 3 (synthesis within eps of delta/2 grid search)",
        ok,
        "; ".join(lines)
        + f". Derived grids have K up to {max_k} (> 200, see README); K=200 explicit grids: "
        + "; ".join(small)
        + f" in {time.perf_counter() - t0:.0f}s",
    )


# 4 -------------------------------------------------------------------------

def test_criterion_4_step_counts(report):
    chain = UniformizedChain.from_rates(10, {i: {(i + 1) % 10: 1.0} for i in range(10)})
    assert chain.rate == 1.0
    plan = sweep_plan(chain, 0.1, 1000, 0.01)
    swept = transient_sweep(chain, 0.1, 1000, 0.01)
    naive = naive_transient_grid(chain, 0.1, 1000, 0.01)[-1].products
    iterative = swept[-1].products
    ok = iterative == plan.J * 1000 == 3000 and naive >= 10 * iterative
    report(
        "criterion 4 (iterative sweep product count)",
        ok,
        f"iterative J*K = {plan.J}*1000 = {iterative}; naive {naive} ({naive / iterative:.1f}x)",
    )


# 5 -------------------------------------------------------------------------

def test_criterion_5_dpm2_epsilon_sweep(report):
    t0 = time.perf_counter()
    values = {}
    delays = {}
    for eps in (0.005, 0.0025, 0.0016, 0.00125, 0.001):
        buf = io.StringIO()
        with redirect_stdout(buf):
            code = main(["synthesize", "dpm2", "--epsilon", str(eps), "--format", "json"])
        assert code == 0
        rep = json.loads(buf.getvalue())
        values[eps] = rep["value"]
        delays[eps] = rep["delays"]
    elapsed = time.perf_counter() - t0
    spread = max(abs(a - b) for a, b in combinations(values.values(), 2))
    ok = spread < 0.005 and elapsed <= 1800
    report(
        "criterion 5 (dpm2 epsilon sweep)",
        ok,
        ", ".join(f"eps={e}: {v:.9f}" for e, v in values.items())
        + f"; max pairwise difference {spread:.2e}; {elapsed:.0f}s total; "
        + f"delays at 0.001: {delays[0.001]}; published prefix {PAPER_DPM2_PREFIX} "
        + "(reconstructed costs, reported only)",
    )


# 6 -------------------------------------------------------------------------

def test_criterion_6_property_suites(report):
    t0 = time.perf_counter()
    parts = {}
    b = discretization_bounds(
        epsilon=0.1, val_upper=1.0, n_decision=2, min_step_reward=0.5, rate=1.0,
        min_prob=1.0, region_size=1, min_reward=1.0, max_reward=1.0,
    )
    upper = math.e * abs(math.log(0.0125 / 2))
    parts["bounds toy"] = (
        b.bound_steps == 2.0 and b.alpha == 0.0125 and b.d1 == 2.0 and b.delta_raw == 0.00625
        and b.upper == upper and b.kappa == 0.1 * 0.00625 / 8 and b.steps == math.ceil(upper / 0.00625)
    )
    rejected = sum(
        [d.code for d in errors(validate_synthesis_restrictions(m))] == [code]
        for code, m in MUTANTS.items()
    )
    parts[f"mutants {rejected}/4"] = rejected == 4
    parts["round trip"] = all(
        same_structure(bundled(n), load_model(export_model(bundled(n)))) for n in BUNDLED
    )

    worst = -math.inf
    sweeps = 0
    for name in BUNDLED:
        m = bundled(name)
        for ev, states in setting_states(m).items():
            for s in states:
                ch = build_subordinated_chain(m, ev, s)
                local = ch.index()
                chain = UniformizedChain.from_rates(len(local), ch.local_rates, rate=ch.rate)
                for delta, steps, kappa in ((0.01, 2000, 1e-6), (0.1, 500, 1e-10)):
                    plan = sweep_plan(chain, delta, steps, kappa)
                    for i, st in enumerate(transient_sweep(chain, delta, steps, kappa), start=1):
                        worst = max(worst, (1 - st.pi.sum()) - i * plan.per_step_error)
                    sweeps += 1
    parts[f"conservation over {sweeps} sweeps"] = worst <= 1e-12

    mono = True
    for name in ("retry", "rejuv", "tradeoff"):
        vals = [synthesize(toy(name), eps).value for eps in (0.04, 0.02, 0.01)]
        mono &= all(f <= c + 1e-9 for c, f in zip(vals, vals[1:]))
    parts["monotone refinement"] = mono
    report(
        "criterion 6 (property suites)",
        all(parts.values()),
        ", ".join(f"{k}: {'ok' if v else 'FAILED'}" for k, v in parts.items())
        + f" in {time.perf_counter() - t0:.0f}s",
    )
