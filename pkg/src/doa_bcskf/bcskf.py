"""Kalman tracking of a sparse DOA signal.

Each snapshot the previous estimate is shifted along the grid by the expected
DOA change, the sparse Bayesian solver is re-run with that prediction as the
prior mean to refresh the precisions and the noise level, and a Kalman update
folds in the new measurement.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .array_model import AngularGrid, complexify_vector
from .sparse_bayes import (
    SolverConfig,
    SolverError,
    SparseEstimate,
    SparseProblem,
    dominant_index,
    estimate_doas,
    run_modified_rvm,
    threshold_signals,
)

__all__ = [
    "TrackerError",
    "ShiftModel",
    "TrackState",
    "shift_signal",
    "prior_variances",
    "predict",
    "innovation",
    "kalman_update",
    "initialize",
    "track_snapshot",
    "Tracker",
]


class TrackerError(SolverError):
    pass


@dataclass(frozen=True)
class ShiftModel:
    """Constant DOA change expressed in grid steps per snapshot."""

    delta_indices: int = 0
    boundary_policy: str = "clamp"

    def __post_init__(self):
        if self.boundary_policy != "clamp":
            raise ValueError("only the 'clamp' boundary policy is supported")

    @classmethod
    def from_rate(cls, doa_rate: float, grid: AngularGrid) -> "ShiftModel":
        steps = doa_rate / grid.spacing
        if not np.isclose(steps, round(steps)):
            raise ValueError("DOA rate must be a whole number of grid steps")
        return cls(int(round(steps)))


@dataclass
class TrackState:
    x: np.ndarray
    Sigma: np.ndarray
    k: int
    sigma2: float
    p: np.ndarray
    boundary_hit: bool = False
    estimate: SparseEstimate | None = field(default=None, repr=False)


def shift_signal(x, delta: int):
    """Move the grid support of a stacked real vector by ``delta`` steps.

    Real and imaginary halves shift together.  Entries pushed past either end
    are clamped onto the end index (values add on collision).  Returns the
    shifted vector and whether a non-zero entry was clamped.
    """
    x = np.asarray(x, dtype=float)
    if x.size % 2:
        raise ValueError("stacked signal must have even length")
    n = x.size // 2
    if abs(delta) >= n:
        raise ValueError("shift must be smaller than the grid")
    if delta == 0:
        return x.copy(), False
    halves = x.reshape(2, n)
    target = np.arange(n) + delta
    clipped = (target < 0) | (target >= n)
    target = np.clip(target, 0, n - 1)
    out = np.zeros_like(halves)
    for h in range(2):
        np.add.at(out[h], target, halves[h])
    hit = bool(np.any(halves[:, clipped] != 0))
    return out.reshape(-1), hit


def prior_variances(p, p_cap: float = np.inf):
    """``diag(P^-1)`` with pruned coordinates contributing exactly 0."""
    p = np.asarray(p, dtype=float)
    return np.where(p < p_cap, 1.0 / p, 0.0)


def predict(state: TrackState, shift: ShiftModel, p, A_tilde, p_cap: float = np.inf):
    """Prediction step.

    Returns ``(x_pred, Sigma_pred, y_pred, boundary_hit)`` with
    ``Sigma_pred = Sigma + P^-1`` and ``y_pred = A x_pred``.
    """
    x_pred, hit = shift_signal(state.x, shift.delta_indices)
    Sigma_pred = state.Sigma.copy()
    Sigma_pred[np.diag_indices_from(Sigma_pred)] += prior_variances(p, p_cap)
    return x_pred, Sigma_pred, A_tilde @ x_pred, hit


def innovation(y_tilde, y_pred):
    y_tilde = np.asarray(y_tilde, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_tilde.shape != y_pred.shape:
        raise ValueError(f"shape mismatch {y_tilde.shape} vs {y_pred.shape}")
    return y_tilde - y_pred


def kalman_update(x_pred, Sigma_pred, y_e, sigma2: float, A_tilde):
    """Measurement update; returns ``(x_new, Sigma_new, K)``."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    ASig = A_tilde @ Sigma_pred
    S = ASig @ A_tilde.T
    S[np.diag_indices_from(S)] += sigma2
    try:
        cf = linalg.cho_factor(S, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise TrackerError("innovation covariance not positive definite", np.linalg.cond(S)) from None
    # S symmetric, so K^T = S^-1 A Sigma
    K = linalg.cho_solve(cf, ASig, check_finite=False).T
    x_new = x_pred + K @ y_e
    Sigma_new = Sigma_pred - K @ ASig
    return x_new, 0.5 * (Sigma_new + Sigma_new.T), K


def _readout(x, config: SolverConfig, grid: AngularGrid | None):
    xc = complexify_vector(x)
    kept, _ = threshold_signals(xc, config.threshold_eta)
    doas = estimate_doas(kept, grid) if grid is not None else []
    return xc, kept, doas


def shift_covariance(Sigma, delta: int):
    """Move covariance rows and columns with the support; clamped like :func:`shift_signal`."""
    if delta == 0:
        return Sigma.copy()
    n = Sigma.shape[0] // 2
    target = np.clip(np.arange(n) + delta, 0, n - 1)
    idx = np.concatenate([target, target + n])
    out = np.zeros_like(Sigma)
    src = np.arange(2 * n)
    np.add.at(out, (idx[:, None], idx[None, :]), Sigma[src[:, None], src[None, :]])
    return out


def _carry(x, state_eta):
    if state_eta is None:
        return x.copy()
    kept, _ = threshold_signals(complexify_vector(x), state_eta)
    return _sparsify(x, kept)


def _sparsify(x, kept):
    n = x.size // 2
    mask = np.zeros(n, dtype=bool)
    mask[kept] = True
    return np.where(np.tile(mask, 2), x, 0.0)


def initialize(y_tilde, A_tilde, config: SolverConfig = SolverConfig(), grid=None,
               state_eta: float | None = 0.5) -> TrackState:
    """First snapshot: plain sparse recovery with a zero prior mean.

    The carried estimate keeps only the strongest entries holding
    ``state_eta`` of the energy (``None`` carries the full posterior mean).
    """
    problem = SparseProblem(A_tilde, y_tilde)
    rvm, est = run_modified_rvm(problem, config, grid=grid)
    x = _carry(rvm.mu, state_eta)
    return TrackState(x=x, Sigma=rvm.Sigma, k=0, sigma2=rvm.sigma2, p=rvm.p, estimate=est)


def track_snapshot(state: TrackState, y_tilde, shift: ShiftModel, A_tilde,
                   config: SolverConfig = SolverConfig(), grid=None,
                   warm_start: bool = True, state_eta: float | None = 0.5,
                   shift_cov: bool = False) -> TrackState:
    """Advance the track by one snapshot.

    The solver runs on the full measurement with the shifted estimate as its
    prior mean; the refreshed precisions then set the process noise of the
    prediction covariance.  ``shift_cov`` also moves the previous covariance
    along the grid before adding that process noise.
    """
    x_pred, hit = shift_signal(state.x, shift.delta_indices)
    problem = SparseProblem(A_tilde, y_tilde, x_pred)
    sigma2_0 = state.sigma2 if warm_start else None
    rvm, rvm_est = run_modified_rvm(problem, config, sigma2_0=sigma2_0)
    Sigma_pred = shift_covariance(state.Sigma, shift.delta_indices) if shift_cov else state.Sigma.copy()
    Sigma_pred[np.diag_indices_from(Sigma_pred)] += prior_variances(rvm.p, config.p_cap)
    y_e = innovation(y_tilde, A_tilde @ x_pred)
    x_new, Sigma_new, _ = kalman_update(x_pred, Sigma_pred, y_e, rvm.sigma2, A_tilde)
    xc, kept, doas = _readout(x_new, config, grid)
    est = SparseEstimate(x_opt=xc, kept_indices=kept, doas=doas, sigma2_opt=rvm.sigma2,
                         p_opt=rvm.p, log_evidence=rvm_est.log_evidence,
                         converged=rvm_est.converged, iterations=rvm_est.iterations)
    return TrackState(x=_carry(x_new, state_eta), Sigma=Sigma_new, k=state.k + 1, sigma2=rvm.sigma2, p=rvm.p,
                      boundary_hit=hit, estimate=est)


class Tracker:
    """Sequential driver around :func:`initialize` and :func:`track_snapshot`."""

    def __init__(self, A_tilde, shift: ShiftModel, config: SolverConfig = SolverConfig(),
                 grid: AngularGrid | None = None, warm_start: bool = True,
                 state_eta: float | None = 0.5, shift_cov: bool = False):
        self.A_tilde = A_tilde
        self.shift = shift
        self.config = config
        self.grid = grid
        self.warm_start = warm_start
        self.state_eta = state_eta
        self.shift_cov = shift_cov
        self.state: TrackState | None = None

    def step(self, y_tilde) -> TrackState:
        if self.state is None:
            self.state = initialize(y_tilde, self.A_tilde, self.config, self.grid, self.state_eta)
        else:
            self.state = track_snapshot(self.state, y_tilde, self.shift, self.A_tilde,
                                        self.config, self.grid, self.warm_start,
                                        self.state_eta, self.shift_cov)
        return self.state

    def coast(self) -> TrackState | None:
        """Skip a snapshot: shift the carried estimate and drop the readout."""
        if self.state is not None:
            x, hit = shift_signal(self.state.x, self.shift.delta_indices)
            self.state = replace(self.state, x=x, k=self.state.k + 1, boundary_hit=hit, estimate=None)
        return self.state

    def dominant_doa(self):
        if self.state is None or self.state.estimate is None:
            return None
        est = self.state.estimate
        i = dominant_index(est.x_opt, est.kept_indices)
        return None if i is None else float(self.grid.angles[i])
