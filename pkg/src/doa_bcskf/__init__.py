"""Sparse Bayesian DOA estimation and Kalman tracking on a uniform linear array."""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND
from .array_model import (
    AngularGrid,
    ArrayGeometry,
    ComplexSnapshot,
    DomainError,
    RealEmbedding,
    build_dictionary,
    complexify_vector,
    embed,
    realify_dictionary,
    realify_vector,
    steering_vector,
    synthesize_snapshot,
)
from .bcskf import ShiftModel, Tracker, TrackerError, TrackState, kalman_update, predict, track_snapshot
from .sparse_bayes import (
    RvmState,
    SolverConfig,
    SolverError,
    SparseEstimate,
    SparseProblem,
    log_marginal,
    posterior,
    run_modified_rvm,
    threshold_signals,
)

__all__ = [
    "__version__",
    "KERNEL_BACKEND",
    "AngularGrid",
    "ArrayGeometry",
    "ComplexSnapshot",
    "DomainError",
    "RealEmbedding",
    "build_dictionary",
    "complexify_vector",
    "embed",
    "realify_dictionary",
    "realify_vector",
    "steering_vector",
    "synthesize_snapshot",
    "ShiftModel",
    "Tracker",
    "TrackerError",
    "TrackState",
    "kalman_update",
    "predict",
    "track_snapshot",
    "RvmState",
    "SolverConfig",
    "SolverError",
    "SparseEstimate",
    "SparseProblem",
    "log_marginal",
    "posterior",
    "run_modified_rvm",
    "threshold_signals",
]
