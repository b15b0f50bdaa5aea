from __future__ import annotations

import math

import pytest

from conftest import bundled, fd_model
from fdsynth.bounds import discretization_bounds, min_step_reward
from fdsynth.model import ModelError
from fdsynth.reward import StepBuilders, decision_states
from fdsynth.synthesis import compute_bounds, fd_setting_chains

TOY = dict(
    epsilon=0.1,
    val_upper=1.0,
    n_decision=2,
    min_step_reward=0.5,
    rate=1.0,
    min_prob=1.0,
    region_size=1,
    min_reward=1.0,
    max_reward=1.0,
)


def test_toy_instance_exact():
    b = discretization_bounds(**TOY)
    # hand evaluation: Bound = 1/0.5; alpha = min(0.1/(2*2*2), 1/(2*2*2))
    assert b.bound_steps == 2.0
    assert b.alpha == 0.0125
    assert b.d1 == 2.0
    assert b.delta_raw == 0.00625
    assert b.upper == math.e * abs(math.log(0.00625))
    assert b.upper == pytest.approx(13.795752758, abs=1e-9)
    assert b.kappa == pytest.approx(7.8125e-5, rel=1e-15)
    assert b.steps == 2208
    assert b.steps == math.ceil(b.upper / b.delta_raw)
    assert b.delta * b.steps == pytest.approx(b.upper, rel=1e-15)
    assert b.delta <= b.delta_raw


def test_halving_epsilon_scales_grid():
    b1 = discretization_bounds(**TOY)
    b2 = discretization_bounds(**{**TOY, "epsilon": 0.05})
    assert b2.alpha == pytest.approx(b1.alpha / 2)
    assert b2.delta_raw == pytest.approx(b1.delta_raw / 2)
    assert b2.kappa == pytest.approx(b1.kappa / 4)  # kappa carries eps and delta
    assert b1.upper < b2.upper < b1.upper + math.e * math.log(2) + 1e-12


def test_first_branch_of_upper_bound():
    b = discretization_bounds(**{**TOY, "min_reward": 1e-4, "min_prob": 0.5, "region_size": 3})
    assert b.upper == pytest.approx(1.0 / (0.5**3 * 1e-4))


def test_second_term_of_alpha_can_bind():
    b = discretization_bounds(**{**TOY, "epsilon": 0.9, "val_upper": 0.1, "min_step_reward": 0.05})
    assert b.alpha == pytest.approx(1 / (2 * b.bound_steps * 2))


@pytest.mark.parametrize(
    "override",
    [{"val_upper": math.inf}, {"min_prob": 0.0}, {"min_reward": 0.0}, {"epsilon": 0.0}],
)
def test_refused_inputs(override):
    with pytest.raises((ModelError, ValueError)):
        discretization_bounds(**{**TOY, **override})


def test_min_step_reward_for_fd_to_target():
    m = fd_model(impulse=0.3)
    builders = StepBuilders(m)
    dec = decision_states(m, builders)
    assert min_step_reward(m, dec, fd_setting_chains(m, dec, builders)) == 0.3


def test_min_step_reward_is_a_lower_bound():
    # every realised one-step reward at any delay is at least the bound
    m = bundled("dpm2")
    builders = StepBuilders(m)
    dec = decision_states(m, builders)
    bound = min_step_reward(m, dec, fd_setting_chains(m, dec, builders))
    from fdsynth.reward import build_step_kernel

    for s in dec:
        if s in m.target:
            continue
        for d in ((1e-6, 0.1, 5.0) if m.active_events(s) else (None,)):
            assert build_step_kernel(m, s, d, builders=builders).reward >= bound - 1e-15


def test_epsilon_split_over_events():
    m = bundled("dpm2")
    bounds = compute_bounds(m, 0.01, 1.0)
    assert set(bounds) == {"f1", "f2"}
    assert all(b.epsilon == 0.005 for b in bounds.values())
