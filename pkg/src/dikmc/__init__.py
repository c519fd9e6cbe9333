"""Exact event-driven simulation of dissipative Glauber-Ising dynamics on a ring."""

from .engine import (EVENT_DRIVEN, THINNING, Event, EventLog, InitialCondition, Params, Stop,
                     SystemState, field_at, gamma_auto, new_system, run_until, step, thinning_step)
from .errors import (ConvergenceError, ProfileError, RegimeError, ThinningGuardError,
                     TruncationError)

__all__ = [
    "EVENT_DRIVEN", "THINNING", "Event", "EventLog", "InitialCondition", "Params", "Stop",
    "SystemState", "field_at", "gamma_auto", "new_system", "run_until", "step", "thinning_step",
    "ConvergenceError", "ProfileError", "RegimeError", "ThinningGuardError", "TruncationError",
]
__version__ = "0.1.0"
