"""Hard-sphere gas in a box: exact event-driven dynamics, initial-measure
samplers, and signed Monte Carlo evaluation of collision-history series,
with a check harness that confirms simulated and series-predicted
correlation functions agree within statistical error."""

from hardsphere.geometry import (
    AdmissibilityClass,
    Configuration,
    Domain,
    PhasePoint,
    SignClass,
    Vec3,
    classify,
    omega_admissible,
    omega_sign_class,
)
from hardsphere.dynamics import (
    DegeneracyError,
    DegeneracyKind,
    Direction,
    Event,
    EventKind,
    Limit,
    TrajectoryLog,
    evolve,
    next_event,
    pair_collide,
    reverse_momenta,
    wall_reflect,
)

__all__ = [
    "AdmissibilityClass",
    "Configuration",
    "DegeneracyError",
    "DegeneracyKind",
    "Direction",
    "Domain",
    "Event",
    "EventKind",
    "Limit",
    "PhasePoint",
    "SignClass",
    "TrajectoryLog",
    "Vec3",
    "classify",
    "evolve",
    "next_event",
    "omega_admissible",
    "omega_sign_class",
    "pair_collide",
    "reverse_momenta",
    "wall_reflect",
]
