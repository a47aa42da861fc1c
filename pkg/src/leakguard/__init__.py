"""Interval-level operational leakage monitoring for multi-tenant quantum job scheduling."""

from .audit import AuditLog, verify, verify_file
from .bound import BoundInputs, advantage_bound, uniform_bound
from .config import ExperimentConfig
from .estimator import EstimatorConfig, ReferenceModel, WindowState, estimate, kl_divergence
from .features import Codebook, IntervalFeatures, QueueState, build_codebook, normalize, quantize
from .orchestrator import Artifacts, JobSpec, run_job
from .pf_timing import PFConfig, ParticleSet, propose
from .policy import Decision, Thresholds, calibrate, evaluate, transfer
from .router import Backend, Router, RoutingPolicy
from .simenv import EnvConfig, SimEnv

__version__ = "0.1.0"

__all__ = [
    "Artifacts",
    "AuditLog",
    "Backend",
    "BoundInputs",
    "Codebook",
    "Decision",
    "EnvConfig",
    "EstimatorConfig",
    "ExperimentConfig",
    "IntervalFeatures",
    "JobSpec",
    "PFConfig",
    "ParticleSet",
    "QueueState",
    "ReferenceModel",
    "Router",
    "RoutingPolicy",
    "SimEnv",
    "Thresholds",
    "WindowState",
    "advantage_bound",
    "build_codebook",
    "calibrate",
    "estimate",
    "evaluate",
    "kl_divergence",
    "normalize",
    "propose",
    "quantize",
    "run_job",
    "transfer",
    "uniform_bound",
    "verify",
    "verify_file",
]
