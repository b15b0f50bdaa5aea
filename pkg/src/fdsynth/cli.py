"""Command-line front end: ``fdsynth VERB MODEL [options]``.

Exit codes: 0 success, 1 model or usage error, 2 budget or convergence
failure.  Reports go to standard output (text or JSON), diagnostics to
standard error.  ``--figures DIR`` additionally writes PNG figures and the
CSV data behind them.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from importlib.resources import files
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .language import ElaborationError, ParseError, load_model, parse, unused_events
from .model import (
    FdctmcModel,
    ModelError,
    apply_delays,
    build_subordinated_chain,
    errors,
    setting_state,
    validate_basic,
    validate_synthesis_restrictions,
)
from .reward import ConvergenceError, expected_reward
from .simulate import DEFAULT_STEP_CAP, estimate_expected_reward, simulate_run, write_trace
from .synthesis import DEFAULT_BUDGET, default_threads, synthesize
from .transient import (
    BudgetExceeded,
    UniformizedChain,
    density,
    naive_transient_grid,
    precomputed_sweep,
    sweep_plan,
    transient_sweep,
)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_MODEL, EXIT_BUDGET = 0, 1, 2
BUNDLED = ("dpm2", "dpm4", "dpm6", "dpm8", "rejuv", "retry", "sleep")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_MODEL, f"{self.prog}: error: {message}\n")


def _epsilon(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("epsilon must lie in (0, 1)")
    return v


def _assignment(text: str) -> tuple[str, float]:
    name, sep, value = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    try:
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value!r}")


def model_source(spec: str) -> tuple[str, str]:
    """Text and display name of a model file, or of a bundled model by name."""
    p = Path(spec)
    if p.exists():
        return p.read_text(), str(p)
    if spec in BUNDLED:
        return (files("fdsynth") / "models" / f"{spec}.fdctmc").read_text(), spec
    raise FileNotFoundError(f"no such model file: {spec}")


def _load(args) -> FdctmcModel:
    text, _ = model_source(args.model)
    model = load_model(text, dict(args.const or []), rewards=args.rewards)
    if getattr(args, "delay", None):
        model = apply_delays(model, dict(args.delay))
    return model


def _emit(args, report: dict) -> None:
    if args.format == "json":
        sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
        return
    for key in sorted(report):
        if key == "schema":
            continue
        sys.stdout.write(f"{key}: {_text(report[key])}\n")


def _text(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, dict):
        return ", ".join(f"{k}={_text(x)}" for k, x in sorted(v.items()))
    if isinstance(v, list):
        return "; ".join(_text(x) for x in v)
    return str(v)


def _json_float(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "nan")


def _write_csv(path: Path, header: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def cmd_validate(args) -> int:
    text, name = model_source(args.model)
    ast = parse(text)
    model = load_model(text, dict(args.const or []), rewards=args.rewards)
    diags = validate_basic(model) + validate_synthesis_restrictions(
        model, rewards=not args.reward_only
    )
    for ev in unused_events(ast):
        sys.stderr.write(f"warning: fd event {ev!r} is declared but never used\n")
    for d in diags:
        sys.stderr.write(f"{name}: {d}\n")
    errs = errors(diags)
    _emit(
        args,
        {
            "schema": f"fdsynth/validate/{SCHEMA_VERSION}",
            "states": model.n_states,
            "events": {ev.name: ev.delay for ev in model.events},
            "targets": len(model.target),
            "errors": len(errs),
            "warnings": len(diags) - len(errs),
            "valid": not errs,
        },
    )
    return EXIT_MODEL if errs else EXIT_OK


def cmd_exp_reward(args) -> int:
    model = _load(args)
    res = expected_reward(model, args.epsilon)
    _emit(
        args,
        {
            "schema": f"fdsynth/exp-reward/{SCHEMA_VERSION}",
            "value": _json_float(res.value),
            "delays": dict(model.delays),
            "residual": res.residual,
            "infiniteStates": len(res.infinite_states),
        },
    )
    return EXIT_OK


def _profile(model: FdctmcModel, result, event: str, points: int) -> tuple[np.ndarray, list[float]]:
    chosen = result.delays[event]
    declared = model.delays[event]
    grid = result.grids[event]
    upper = min(grid.delta * grid.steps, max(3 * chosen, 2 * declared))
    xs = np.linspace(upper / points, upper, points)
    xs = np.union1d(xs, [chosen])
    ys = []
    for x in xs:
        d = dict(result.delays)
        d[event] = float(x)
        ys.append(expected_reward(apply_delays(model, d)).value)
    return xs, ys


def cmd_synthesize(args) -> int:
    from .plotting import plot_delay_profile

    model = _load(args)
    t0 = time.perf_counter()
    res = synthesize(
        model,
        args.epsilon,
        method=args.method,
        budget=args.budget,
        memory=args.memory_mb * 2**20,
        threads=args.threads,
    )
    report = res.as_dict()
    report["schema"] = f"fdsynth/synthesize/{SCHEMA_VERSION}"
    if args.timings:
        report["timings"]["total"] = time.perf_counter() - t0
    else:
        report.pop("timings")
    if args.figures:
        out = Path(args.figures)
        for ev in res.delays:
            if ev not in res.grids:
                continue
            xs, ys = _profile(model, res, ev, args.profile_points)
            _write_csv(out / f"synthesize_{ev}.csv", ["delay", "expected_reward"], zip(map(repr, xs), map(repr, ys)))
            plot_delay_profile(
                out / f"synthesize_{ev}.png",
                ev,
                xs,
                ys,
                chosen=res.delays[ev],
                declared=model.delays[ev],
                val_upper=res.val_upper,
            )
    _emit(args, report)
    return EXIT_OK


def cmd_simulate(args) -> int:
    model = _load(args)
    est = estimate_expected_reward(model, args.runs, args.seed, args.step_cap)
    report = est.as_dict()
    report["mean"] = _json_float(report["mean"])
    report["seed"] = args.seed
    report["schema"] = f"fdsynth/simulate/{SCHEMA_VERSION}"
    if args.trace or args.figures:
        run = simulate_run(model, args.seed, args.step_cap)
        if args.trace:
            with open(args.trace, "w", newline="") as fh:
                write_trace(run, fh)
        if args.figures:
            from .plotting import plot_trace

            out = Path(args.figures)
            out.mkdir(parents=True, exist_ok=True)
            with (out / "simulate_trace.csv").open("w", newline="") as fh:
                write_trace(run, fh)
            plot_trace(out / "simulate_trace.png", run)
    _emit(args, report)
    return EXIT_OK


def bench_chain(args) -> UniformizedChain:
    """The chain benchmarked: an event's subordinated chain, or a cycle."""
    if args.model:
        model = _load(args)
        name = args.event or (model.events[0].name if model.events else None)
        if name is None:
            raise ModelError("model has no fd event to benchmark")
        ch = build_subordinated_chain(model, model.event(name), setting_state(model, name))
        local = ch.index()
        rr = np.zeros(len(local))
        rr[: len(ch.region)] = [model.rate_reward[s] for s in ch.region]
        return UniformizedChain.from_rates(len(local), ch.local_rates, rr, rate=ch.rate)
    n = args.size
    rates = {i: {(i + 1) % n: args.rate} for i in range(n)} if n > 1 else {}
    return UniformizedChain.from_rates(max(n, 1), rates, np.ones(max(n, 1)), rate=args.rate)


def cmd_bench(args) -> int:
    chain = bench_chain(args)
    delta, steps, kappa = args.delta, args.steps, args.kappa
    plan = sweep_plan(chain, delta, steps, kappa)
    t0 = time.perf_counter()
    swept = transient_sweep(chain, delta, steps, kappa, budget=args.budget)
    t_iter = time.perf_counter() - t0
    t0 = time.perf_counter()
    naive = naive_transient_grid(chain, delta, steps, kappa, budget=args.budget)
    t_naive = time.perf_counter() - t0
    t0 = time.perf_counter()
    pre, M = precomputed_sweep(chain, delta, steps, kappa)
    t_pre = time.perf_counter() - t0
    counts = {
        "naive": naive[-1].products,
        "iterative": plan.J * steps,
        "precomputed": steps,
        "precomputedSetup": plan.J,
    }
    lost = [float(1.0 - st.pi.sum()) for st in swept]
    report = {
        "schema": f"fdsynth/bench-transient/{SCHEMA_VERSION}",
        "rate": chain.rate,
        "delta": delta,
        "steps": steps,
        "kappa": kappa,
        "truncation": plan.J,
        "perStepError": plan.per_step_error,
        "products": counts,
        "ratio": counts["naive"] / counts["iterative"] if counts["iterative"] else math.nan,
        "density": {"P": density(chain.matrix), "precomputed": density(M)},
        "maxConservationDefect": max(lost[i] - (i + 1) * plan.per_step_error for i in range(len(lost))),
        "wallSeconds": {"naive": t_naive, "iterative": t_iter, "precomputed": t_pre},
    }
    if args.figures:
        from .plotting import plot_bench

        out = Path(args.figures)
        _write_csv(out / "bench_products.csv", ["strategy", "products"], counts.items())
        _write_csv(out / "bench_conservation.csv", ["step", "lost"], ((i + 1, repr(v)) for i, v in enumerate(lost)))
        plot_bench(out / "bench_transient.png", counts, lost, plan.per_step_error)
    _emit(args, report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fdsynth", description="Expected rewards and delay synthesis for fixed-delay CTMCs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(sp, model_required=True):
        if model_required:
            sp.add_argument("model", help=f"model file, or a bundled model: {', '.join(BUNDLED)}")
        else:
            sp.add_argument("model", nargs="?", help="model file or bundled model name")
        sp.add_argument("--const", action="append", type=_assignment, metavar="NAME=VALUE")
        sp.add_argument("--rewards", help="reward structure name (default: the first)")
        sp.add_argument("--format", choices=("text", "json"), default="text")

    v = sub.add_parser("validate", help="check well-formedness and analysis restrictions")
    common(v)
    v.add_argument("--reward-only", action="store_true", help="skip the reward positivity checks needed for synthesis")
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("exp-reward", help="expected total reward until the target")
    common(e)
    e.add_argument("--epsilon", type=_epsilon, default=1e-9, help="linear solve residual tolerance")
    e.add_argument("--delay", action="append", type=_assignment, metavar="EVENT=SECONDS")
    e.set_defaults(func=cmd_exp_reward)

    s = sub.add_parser("synthesize", help="epsilon-optimal fd delays")
    common(s)
    s.add_argument("--epsilon", type=_epsilon, default=1e-3)
    s.add_argument("--delay", action="append", type=_assignment, metavar="EVENT=SECONDS",
                   help="override declared delays (they define the upper bound)")
    s.add_argument("--method", choices=("policy", "value"), default="policy")
    s.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="max vector-matrix products")
    s.add_argument("--memory-mb", type=int, default=256, help="action tables larger than this are streamed")
    s.add_argument("--threads", type=int, default=default_threads())
    s.add_argument("--figures", metavar="DIR", help="write delay-profile figures and CSV here")
    s.add_argument("--profile-points", type=int, default=60)
    s.add_argument("--timings", action="store_true", help="include wall-clock timings in the report")
    s.set_defaults(func=cmd_synthesize)

    m = sub.add_parser("simulate", help="Monte Carlo estimate of the expected reward")
    common(m)
    m.add_argument("--runs", type=int, default=100_000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--step-cap", type=int, default=DEFAULT_STEP_CAP)
    m.add_argument("--delay", action="append", type=_assignment, metavar="EVENT=SECONDS")
    m.add_argument("--trace", metavar="CSV", help="dump one run (seeded) as CSV")
    m.add_argument("--figures", metavar="DIR")
    m.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench-transient", help="compare transient stepping strategies")
    common(b, model_required=False)
    b.add_argument("--event", help="fd event whose subordinated chain is used")
    b.add_argument("--delta", type=float, default=0.1)
    b.add_argument("--steps", type=int, default=1000)
    b.add_argument("--kappa", type=float, default=0.01)
    b.add_argument("--rate", type=float, default=1.0, help="rate of the built-in cycle chain")
    b.add_argument("--size", type=int, default=20, help="states of the built-in cycle chain")
    b.add_argument("--budget", type=int, default=None)
    b.add_argument("--figures", metavar="DIR")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        sys.stderr.write(f"{args.model}:{exc.line}:{exc.column}: error: {exc.message}\n")
    except ElaborationError as exc:
        sys.stderr.write(f"{args.model}: error: {exc}\n")
    except (ModelError, FileNotFoundError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
    except (BudgetExceeded, ConvergenceError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_BUDGET
    return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
