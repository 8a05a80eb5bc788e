"""Event-driven simulation and exact checks for the one-dimensional Toom model.

Modules by concern:

* :mod:`toomsim.dynamics` - ring state, event stream, exchange rule
* :mod:`toomsim.tagged` - push-tagged particles and their drift
* :mod:`toomsim.observables` - additive functionals, edge currents, flux
* :mod:`toomsim.coupling` - coupled replicas and discrepancy fronts
* :mod:`toomsim.adjoint` - left-moving dynamics and time reversal
* :mod:`toomsim.oracle` - exact enumeration on small cycles
* :mod:`toomsim.stats` - estimators with error bars
* :mod:`toomsim.experiments` / :mod:`toomsim.cli` - drivers and command line
"""
from .dynamics import Event, EventStream, JumpRecord, Params, SpinConfig, apply_event, find_target, sample_initial, trial_seed
from .tagged import TaggedState, drift_formula, init_tagged, update_tagged

__version__ = "0.1.0"

__all__ = [
    "Event",
    "EventStream",
    "JumpRecord",
    "Params",
    "SpinConfig",
    "TaggedState",
    "apply_event",
    "drift_formula",
    "find_target",
    "init_tagged",
    "sample_initial",
    "trial_seed",
    "update_tagged",
]
