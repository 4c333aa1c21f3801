"""Slow-fast SDE averaging toolkit.

Simulates slow-fast stochastic systems and their averaged dynamics,
solves parametrized Poisson equations by probabilistic representation,
verifies the structural drift/ellipticity conditions numerically, and
reproduces uniform-in-time averaging error experiments.
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .model import (AveragedSystem, CoefficientField, FrozenSystem,
                    GrowthProfile, SlowFastSystem, analytic_averaged,
                    evaluate_effective_diffusions, frozen, make_model,
                    registry_names)
from .integrator import (MomentSeries, SimConfig, TrajectoryBatch,
                         em_step_slow_fast, simulate_averaged_batch,
                         simulate_frozen_batch, simulate_slow_fast_batch)
from .streams import make_noise_stream

__all__ = [
    "BACKEND", "__version__",
    "AveragedSystem", "CoefficientField", "FrozenSystem", "GrowthProfile",
    "SlowFastSystem", "analytic_averaged", "evaluate_effective_diffusions",
    "frozen", "make_model", "registry_names",
    "MomentSeries", "SimConfig", "TrajectoryBatch", "em_step_slow_fast",
    "simulate_averaged_batch", "simulate_frozen_batch",
    "simulate_slow_fast_batch", "make_noise_stream",
]
