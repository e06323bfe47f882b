"""Sparse Bayesian recovery with a non-zero prior mean.

The coefficient prior is ``x ~ N(x_e, diag(p)^-1)`` and the noise model
``y = A x + n`` with ``n ~ N(0, sigma2 I)`` on the stacked real vector.
Setting ``x_e = 0`` gives the classical relevance vector machine.

The hyperparameters ``p`` and ``sigma2`` are fitted by type-II maximum
likelihood with fixed-point updates; coordinates whose precision exceeds
``p_cap`` are pruned and pinned to their prior mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import linalg

from ._kernels import KernelError, get_kernel
from .array_model import AngularGrid, complexify_vector

__all__ = [
    "SolverError",
    "SparseProblem",
    "SolverConfig",
    "RvmState",
    "SparseEstimate",
    "posterior",
    "log_marginal",
    "update_p",
    "update_sigma2",
    "make_state",
    "run_modified_rvm",
    "final_estimate",
    "threshold_signals",
    "estimate_doas",
    "dominant_index",
]

LOG_2PI = np.log(2.0 * np.pi)
P_UPDATE_MODES = ("unit_cross", "exact")
SIGMA2_RULES = {"fixed": 0, "mackay": 1, "em": 2}


class SolverError(ArithmeticError):
    """Numerical failure inside the solver.

    ``condition`` holds a condition-number estimate of the offending matrix
    when one is available.
    """

    def __init__(self, message, condition=None):
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)
        self.condition = condition


@dataclass(frozen=True)
class SparseProblem:
    """Real-embedded dictionary, measurement and prior mean."""

    A_tilde: np.ndarray
    y_tilde: np.ndarray
    x_e: np.ndarray | None = None

    def __post_init__(self):
        A = np.asarray(self.A_tilde, dtype=float)
        y = np.asarray(self.y_tilde, dtype=float)
        if A.ndim != 2:
            raise ValueError("A_tilde must be 2-D")
        if y.shape != (A.shape[0],):
            raise ValueError(f"y_tilde has shape {y.shape}, expected ({A.shape[0]},)")
        x_e = np.zeros(A.shape[1]) if self.x_e is None else np.asarray(self.x_e, dtype=float)
        if x_e.shape != (A.shape[1],):
            raise ValueError(f"x_e has shape {x_e.shape}, expected ({A.shape[1]},)")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y)) and np.all(np.isfinite(x_e))):
            raise ValueError("problem data must be finite")
        object.__setattr__(self, "A_tilde", A)
        object.__setattr__(self, "y_tilde", y)
        object.__setattr__(self, "x_e", x_e)

    @property
    def num_measurements(self) -> int:
        return self.A_tilde.shape[0]

    @property
    def num_coefficients(self) -> int:
        return self.A_tilde.shape[1]

    def with_prior_mean(self, x_e) -> "SparseProblem":
        return replace(self, x_e=x_e)


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the evidence-maximization loop.

    ``beta1`` to ``beta4`` are the Gamma hyperprior parameters; the solver
    uses the flat limit so they do not enter any update.
    """

    max_iters: int = 500
    tol: float = 1e-3
    p_init: float = 0.01
    sigma2_init: float = 0.1
    p_cap: float = 1e12
    denom_eps: float = 1e-30
    sigma2_floor: float = 1e-12
    threshold_eta: float = 0.9
    p_update: str = "unit_cross"
    sigma2_update: str = "mackay"
    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0
    beta4: float = 0.0

    def __post_init__(self):
        for name in ("max_iters", "tol", "p_init", "sigma2_init", "p_cap",
                     "denom_eps", "sigma2_floor", "threshold_eta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.tol >= 1:
            raise ValueError("tol must be < 1")
        if self.threshold_eta > 1:
            raise ValueError("threshold_eta must be <= 1")
        if self.sigma2_update not in SIGMA2_RULES:
            raise ValueError(f"sigma2_update must be one of {tuple(SIGMA2_RULES)}")
        if self.p_update not in P_UPDATE_MODES:
            raise ValueError(f"p_update must be one of {P_UPDATE_MODES}")


@dataclass
class RvmState:
    p: np.ndarray
    sigma2: float
    mu: np.ndarray
    Sigma: np.ndarray
    gamma: np.ndarray
    active: np.ndarray
    iterations: int = 0
    converged: bool = False
    evidence_trace: np.ndarray = field(default_factory=lambda: np.empty(0))
    log_evidence: float = float("nan")

    @property
    def evidence_monotone(self) -> bool:
        """Whether the evidence trace never dropped by more than 1e-8 relative."""
        ev = self.evidence_trace
        if ev.size < 2:
            return True
        slack = 1e-8 * np.maximum(np.abs(ev[:-1]), 1.0)
        return bool(np.all(np.diff(ev) >= -slack))


@dataclass
class SparseEstimate:
    x_opt: np.ndarray
    kept_indices: list
    doas: list
    sigma2_opt: float
    p_opt: np.ndarray
    log_evidence: float
    converged: bool = True
    iterations: int = 0

    @property
    def num_kept(self) -> int:
        return len(self.kept_indices)


def _check_hyper(p, sigma2, n):
    p = np.asarray(p, dtype=float)
    if p.shape != (n,):
        raise ValueError(f"p has shape {p.shape}, expected ({n},)")
    if not np.all(p > 0):
        raise ValueError("hyperparameters p must be positive")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    return p


def _posterior_on(problem, p, sigma2, active):
    """Posterior restricted to ``active``; other coordinates sit at the prior mean.

    Returns ``(Sigma, mu, logdet_precision)`` where the log-determinant is of
    the active block of ``A^T A / sigma2 + P``.
    """
    A, y, x_e = problem.A_tilde, problem.y_tilde, problem.x_e
    n = A.shape[1]
    Aa = A[:, active]
    H = Aa.T @ Aa / sigma2
    H[np.diag_indices_from(H)] += p[active]
    try:
        cf = linalg.cho_factor(H, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise SolverError("posterior precision not positive definite", np.linalg.cond(H)) from None
    rhs = Aa.T @ (y - A @ x_e) / sigma2
    mu = x_e.copy()
    mu[active] += linalg.cho_solve(cf, rhs, check_finite=False)
    Sigma = np.zeros((n, n))
    Sigma[np.ix_(active, active)] = linalg.cho_solve(cf, np.eye(active.size), check_finite=False)
    Sigma = 0.5 * (Sigma + Sigma.T)
    return Sigma, mu, 2.0 * np.log(np.diag(cf[0])).sum()


def posterior(problem: SparseProblem, p, sigma2: float):
    """Posterior covariance and mean of the coefficients.

    ``Sigma = (A^T A / sigma2 + P)^-1`` and
    ``mu = Sigma (A^T y / sigma2 + P x_e)``.
    """
    p = _check_hyper(p, sigma2, problem.num_coefficients)
    Sigma, mu, _ = _posterior_on(problem, p, sigma2, np.arange(p.size))
    return Sigma, mu


def log_marginal(problem: SparseProblem, p, sigma2: float) -> float:
    """Log evidence ``log N(y; A x_e, sigma2 I + A P^-1 A^T)``.

    Evaluated from the posterior statistics; the prior-mean cross term
    enters as the quadratic ``(mu - x_e)^T P (mu - x_e)``.
    """
    p = _check_hyper(p, sigma2, problem.num_coefficients)
    return _log_evidence_on(problem, p, sigma2, np.arange(p.size))


def _log_evidence_on(problem, p, sigma2, active):
    Sigma, mu, logdet_h = _posterior_on(problem, p, sigma2, active)
    return _log_evidence(problem, p[active], sigma2, mu, logdet_h, active)


def _log_evidence(problem, p_active, sigma2, mu, logdet_h, active):
    A, y, x_e = problem.A_tilde, problem.y_tilde, problem.x_e
    m2 = A.shape[0]
    resid = y - A @ mu
    dev = mu[active] - x_e[active]
    return float(-0.5 * (
        m2 * LOG_2PI
        + m2 * np.log(sigma2)
        + logdet_h
        - np.log(p_active).sum()
        + resid @ resid / sigma2
        + dev @ (p_active * dev)
    ))


def update_p(state: RvmState, x_e, mode: str = "unit_cross", denom_eps: float = 1e-30) -> np.ndarray:
    """Fixed-point precision update.

    ``unit_cross`` mode divides ``gamma`` by ``mu^2 + x_e^2 - x_e mu``; ``exact``
    mode by ``(mu - x_e)^2``, the stationary point of the log evidence.
    Pruned coordinates keep their value.
    """
    if mode not in P_UPDATE_MODES:
        raise ValueError(f"unknown p update mode {mode!r}")
    x_e = np.asarray(x_e, dtype=float)
    mu = state.mu
    if mode == "exact":
        denom = (mu - x_e) ** 2
    else:
        denom = mu * mu + x_e * x_e - x_e * mu
    p_new = state.p.copy()
    a = state.active
    p_new[a] = state.gamma[a] / np.maximum(denom[a], denom_eps)
    return p_new


def update_sigma2(state: RvmState, problem: SparseProblem, floor: float = 1e-12) -> float:
    """Noise update ``||y - A mu||^2 / (2M - sum(gamma))``."""
    resid = problem.y_tilde - problem.A_tilde @ state.mu
    dof = problem.num_measurements - state.gamma[state.active].sum()
    if not dof > 0:
        raise SolverError(f"non-positive residual degrees of freedom {dof:.3g}")
    return max(float(resid @ resid) / dof, floor)


def make_state(problem: SparseProblem, p, sigma2: float, p_cap: float = np.inf) -> RvmState:
    """Posterior statistics at ``(p, sigma2)`` with coordinates above ``p_cap`` pruned."""
    p = np.asarray(p, dtype=float)
    active_mask = p < p_cap
    active = np.flatnonzero(active_mask)
    Sigma, mu, logdet_h = _posterior_on(problem, p, sigma2, active)
    gamma = np.where(active_mask, 1.0 - p * np.diag(Sigma), 0.0)
    state = RvmState(p=p, sigma2=float(sigma2), mu=mu, Sigma=Sigma, gamma=gamma, active=active_mask)
    state.log_evidence = _log_evidence(problem, p[active], sigma2, mu, logdet_h, active)
    return state


def final_estimate(state: RvmState, problem: SparseProblem) -> np.ndarray:
    """``(A^T A / sigma2 + P)^-1 (A^T y / sigma2 + P x_e)`` at the optimum."""
    _, mu, _ = _posterior_on(problem, state.p, state.sigma2, np.flatnonzero(state.active))
    return mu


def run_modified_rvm(problem: SparseProblem, config: SolverConfig = SolverConfig(), *,
                     p0=None, sigma2_0=None, grid: AngularGrid | None = None,
                     record: bool = False, backend: str | None = None):
    """Maximize the evidence over ``(p, sigma2)`` and read out the estimate.

    Parameters
    ----------
    problem : SparseProblem
    config : SolverConfig
    p0, sigma2_0 : optional
        Starting hyperparameters; default to ``config.p_init`` and
        ``config.sigma2_init``.
    grid : AngularGrid, optional
        When given, ``SparseEstimate.doas`` is filled from it.
    record : bool
        Keep per-iteration hyperparameter histories in the returned state
        (attributes ``p_history`` and ``sigma2_history``).

    Returns
    -------
    (RvmState, SparseEstimate)
    """
    n = problem.num_coefficients
    p = np.full(n, config.p_init) if p0 is None else np.array(p0, dtype=float)
    sigma2 = config.sigma2_init if sigma2_0 is None else float(sigma2_0)
    _check_hyper(p, sigma2, n)
    loop = get_kernel(backend)
    try:
        p, sigma2, iters, converged, evidence, p_hist, s2_hist = loop(
            problem.A_tilde, problem.y_tilde, problem.x_e, p, sigma2,
            int(config.max_iters), float(config.tol), float(config.p_cap),
            float(config.denom_eps), float(config.sigma2_floor),
            config.p_update == "exact", SIGMA2_RULES[config.sigma2_update], record)
    except KernelError as exc:
        raise SolverError(str(exc)) from exc
    state = make_state(problem, p, sigma2, config.p_cap)
    state.iterations = int(iters)
    state.converged = bool(converged)
    state.evidence_trace = np.asarray(evidence)
    if record:
        state.p_history = p_hist
        state.sigma2_history = s2_hist
    # odd-length problems are plain real regressions with no complex pairing
    x_opt = complexify_vector(state.mu) if n % 2 == 0 else state.mu.astype(complex)
    kept, _ = threshold_signals(x_opt, config.threshold_eta)
    doas = estimate_doas(kept, grid) if grid is not None else []
    est = SparseEstimate(x_opt=x_opt, kept_indices=kept, doas=doas, sigma2_opt=float(sigma2),
                         p_opt=p, log_evidence=state.log_evidence, converged=bool(converged),
                         iterations=int(iters))
    return state, est


def threshold_signals(x_opt, eta: float):
    """Keep the fewest strongest entries holding at least ``eta`` of the energy.

    Returns ``(kept_indices, count)`` with indices in descending-energy order.
    """
    if not 0 < eta <= 1:
        raise ValueError("eta must be in (0, 1]")
    energy = np.abs(np.asarray(x_opt)) ** 2
    total = energy.sum()
    if total <= 0:
        return [], 0
    # stable sort on negated energy keeps lower indices first among ties
    order = np.argsort(-energy, kind="stable")
    order = order[energy[order] > 0]
    cum = np.cumsum(energy[order])
    count = int(np.searchsorted(cum, eta * total * (1 - 1e-12), side="left")) + 1
    count = min(count, order.size)
    return [int(i) for i in order[:count]], count


def estimate_doas(kept_indices: Sequence[int], grid: AngularGrid) -> list:
    """Grid angles of the kept indices, ascending."""
    return sorted(float(grid.angles[i]) for i in kept_indices)


def dominant_index(x_opt, kept_indices: Sequence[int]):
    """Index of the strongest kept entry, or ``None`` when nothing was kept."""
    if not kept_indices:
        return None
    energy = np.abs(np.asarray(x_opt)) ** 2
    kept = np.asarray(kept_indices)
    return int(kept[np.argmax(energy[kept])])
