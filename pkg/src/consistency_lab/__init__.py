"""Iterative consistency training for diffusion models on tractable targets.

The package is organised bottom-up:

- :mod:`.schedule`     learning-rate schedule (beta, alpha, alpha_bar)
- :mod:`.targets`      atomic / Gaussian-mixture data laws with exact smoothed oracles
- :mod:`.forward`      forward-process marginals and the two (X_t, X_{t-1}) couplings
- :mod:`.score`        smoothed score, its Jacobian and the J_t matrix
- :mod:`.flow`         probability-flow ODE in the alpha_bar parametrisation
- :mod:`.consistency`  the consistency-training recursion and one-shot sampling
- :mod:`.transport`    Wasserstein-1 estimators
- :mod:`.checks`       numerical verification of the convergence theory
- :mod:`.harness`      experiment drivers behind the ``consistency-lab`` CLI
"""

from .schedule import Schedule, ScheduleError, build_schedule, verify_schedule_properties
from .targets import AtomicTarget, GaussianMixtureTarget, SmoothedPosterior, load_target
from .flow import FlowConfig, flow, integrate_g, phi_step
from .consistency import ConsistencyStack, RegressorSpec, one_shot_sample, train_stack
from .reports import CheckReport

__all__ = [
    "AtomicTarget",
    "CheckReport",
    "ConsistencyStack",
    "FlowConfig",
    "GaussianMixtureTarget",
    "RegressorSpec",
    "Schedule",
    "ScheduleError",
    "SmoothedPosterior",
    "build_schedule",
    "flow",
    "integrate_g",
    "load_target",
    "one_shot_sample",
    "phi_step",
    "train_stack",
    "verify_schedule_properties",
]

__version__ = "0.1.0"
