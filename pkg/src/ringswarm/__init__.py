"""Ring-state swarm dynamics: simulation, spectra and center-manifold tools."""
__version__ = "0.1.0"

from .core import (RingSpec, Scenario, ScenarioError, SwarmState, make_ring_state,  # noqa: E402
                   nearest_ring_state, project_ring_angles, ring_residual)
from .integrate import RhsId, StepOptions, Trajectory, integrate  # noqa: E402
from .spectral import degenerate_report, ring_report  # noqa: E402
from .manifold import ZVector, anchor_QZ, energy, monitor_channels  # noqa: E402

__all__ = [
    "__version__", "RingSpec", "Scenario", "ScenarioError", "SwarmState", "make_ring_state",
    "nearest_ring_state", "project_ring_angles", "ring_residual", "RhsId", "StepOptions",
    "Trajectory", "integrate", "degenerate_report", "ring_report", "ZVector", "anchor_QZ",
    "energy", "monitor_channels",
]
