"""Expected-reward analysis and timeout synthesis for fixed-delay CTMCs."""

from __future__ import annotations

__version__ = "0.1.0"

from .language import load_model, parse  # noqa: E402
from .model import FdctmcModel, FdEvent, ModelError, apply_delays  # noqa: E402
from .reward import expected_reward  # noqa: E402
from .simulate import estimate_expected_reward, simulate_run  # noqa: E402
from .synthesis import Grid, synthesize  # noqa: E402

__all__ = [
    "FdEvent",
    "FdctmcModel",
    "Grid",
    "ModelError",
    "apply_delays",
    "estimate_expected_reward",
    "expected_reward",
    "load_model",
    "parse",
    "simulate_run",
    "synthesize",
]
