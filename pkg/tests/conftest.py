from __future__ import annotations

import sys
from importlib.resources import files
from pathlib import Path

import pytest

from fdsynth.language import load_model
from fdsynth.model import FdctmcModel, FdEvent

sys.path.insert(0, str(Path(__file__).parent))

BUNDLED = ("dpm2", "dpm4", "dpm6", "dpm8", "rejuv", "retry", "sleep")


def bundled_text(name: str) -> str:
    return (files("fdsynth") / "models" / f"{name}.fdctmc").read_text()


def bundled(name: str) -> FdctmcModel:
    return load_model(bundled_text(name))


# The single fd event fires straight into the target; rate reward 1 and
# impulse c make the cost of delay d exactly d + c.
FIRE_TO_TARGET = """fdctmc
const double d = 1.0;
const double c = 0.1;
module m
  fdelay f = d;
  s : [0..1] init 0;
  [go] s=0 --f-> (s'=1);
endmodule
label "target" = s=1;
rewards
  s=0 : 1.0;
  [go] true : c;
endrewards
"""

# A job lands on a fast or a slow worker; the timeout abandons it and
# resubmits at a penalty.  Waiting long pays off only on the fast worker,
# so the best timeout is interior.
TRADEOFF = """fdctmc
module m
  fdelay wait = 1.0;
  s : [0..3] init 0;
  [] s=0 -> 8.0 : (s'=1) + 2.0 : (s'=2);
  [] s=1 -> 2.0 : (s'=3);
  [] s=2 -> 0.05 : (s'=3);
  [retry] s<=2 --wait-> (s'=0);
endmodule
label "target" = s=3;
rewards
  s<=2 : 1.0;
  [retry] true : 0.2;
endrewards
"""


def two_state_model(rate: float = 1.0) -> FdctmcModel:
    return FdctmcModel(
        n_states=2,
        rates={0: {1: rate}},
        events=(),
        initial=0,
        rate_reward=(1.0, 0.0),
        target=frozenset({1}),
    )


def fd_model(delay: float = 1.0, impulse: float = 0.1, exp_rate: float = 0.0) -> FdctmcModel:
    """State 0 with an fd event to the target and optionally a competing exponential."""
    return FdctmcModel(
        n_states=2,
        rates={0: {1: exp_rate}} if exp_rate else {},
        events=(FdEvent("f", delay, {0: {1: 1.0}}),),
        initial=0,
        rate_reward=(1.0, 0.0),
        impulse={(0, "f", 1): impulse},
        target=frozenset({1}),
    )


@pytest.fixture
def dpm2() -> FdctmcModel:
    return bundled("dpm2")
