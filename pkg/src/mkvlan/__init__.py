"""Simulation and local-asymptotic-normality lab for McKean-Vlasov SDEs."""

__version__ = "0.1.0"

from .errors import (ConfigError, DomainError, MkvError, ModelStructureError, NonFiniteContrastError,
                     PropagationError, UnsupportedModelError)
from .model import MODEL_REGISTRY, MeanFieldOU, MeasureSnapshot, ModelSpec, TanhInteraction, ThetaPair, build_model, validate_model
from .measure import EmpiricalMeasure, TangentMeasure, integrate_tangent, wasserstein_1d, wasserstein_sliced
from .simulate import SimConfig, TangentCloud, TrajectoryGrid, restart_tangents, simulate_particles, simulate_with_tangents
from .oracle import conditional_moments_mc, ou_fisher_exact, ou_logpdf, ou_transition, taylor_mean_identity_check
from .lan import LanReport, LocalPerturbation, centering_check, clt_condition_sums, lan_harness, log_lr_exact, zeta_hat_diff, zeta_hat_drift
from .inference import FisherInfo, contrast, estimate, fisher_exact, fisher_quadrature, rate_study
