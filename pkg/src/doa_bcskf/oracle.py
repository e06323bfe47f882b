"""Deliberately naive reference computations for cross-checking the solver.

Nothing here imports from the solver or tracker modules; every quantity is
recomputed from its textbook definition with dense linear algebra, finite
differences or numerical quadrature.  Intended for small problems only.

Problem arguments are duck-typed: anything with ``A_tilde``, ``y_tilde`` and
``x_e`` attributes works.
"""

from dataclasses import dataclass

import numpy as np
from scipy import integrate


class OracleError(ArithmeticError):
    pass


@dataclass(frozen=True)
class FiniteDiffSpec:
    step: float = 1e-6
    scheme: str = "central"

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.scheme != "central":
            raise ValueError("only central differences are implemented")


def _unpack(problem):
    A = np.asarray(problem.A_tilde, dtype=float)
    y = np.asarray(problem.y_tilde, dtype=float)
    x_e = getattr(problem, "x_e", None)
    x_e = np.zeros(A.shape[1]) if x_e is None else np.asarray(x_e, dtype=float)
    return A, y, x_e


def log_marginal_direct(problem, p, sigma2):
    """``log N(y; A x_e, sigma2 I + A P^-1 A^T)`` by dense evaluation."""
    A, y, x_e = _unpack(problem)
    p = np.asarray(p, dtype=float)
    if not (np.all(np.isfinite(p)) and np.all(p > 0)):
        raise OracleError("precisions must be finite and positive")
    cov = sigma2 * np.eye(A.shape[0]) + A @ np.diag(1.0 / p) @ A.T
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise OracleError("marginal covariance is not positive definite")
    r = y - A @ x_e
    return -0.5 * (A.shape[0] * np.log(2 * np.pi) + logdet + r @ np.linalg.solve(cov, r))


def posterior_dense(problem, p, sigma2):
    """Normal-equation posterior ``(Sigma, mu)`` via explicit inversion."""
    A, y, x_e = _unpack(problem)
    P = np.diag(np.asarray(p, dtype=float))
    H = A.T @ A / sigma2 + P
    if np.linalg.matrix_rank(H) < H.shape[0]:
        raise OracleError("posterior precision is singular")
    Sigma = np.linalg.inv(H)
    mu = np.linalg.solve(H, A.T @ y / sigma2 + P @ x_e)
    return Sigma, mu


def finite_diff_gradient(f, at, spec=FiniteDiffSpec()):
    """Central-difference gradient with a per-coordinate relative step."""
    at = np.asarray(at, dtype=float)
    grad = np.empty_like(at)
    for i in range(at.size):
        h = spec.step * max(abs(at[i]), 1.0)
        up, dn = at.copy(), at.copy()
        up[i] += h
        dn[i] -= h
        fu, fd = f(up), f(dn)
        if not (np.isfinite(fu) and np.isfinite(fd)):
            raise OracleError(f"non-finite function value near coordinate {i}")
        grad[i] = (fu - fd) / (2 * h)
    return grad


def evidence_quadrature_1d(problem, p, sigma2):
    """Integrate likelihood times prior over a single latent coefficient."""
    A, y, x_e = _unpack(problem)
    if A.shape[1] != 1:
        raise ValueError("quadrature oracle needs exactly one latent coefficient")
    a = A[:, 0]
    p = float(np.ravel(p)[0])
    xe = float(x_e[0])
    m = y.size

    def integrand(x):
        r = y - a * x
        like = (2 * np.pi * sigma2) ** (-m / 2) * np.exp(-0.5 * (r @ r) / sigma2)
        prior = np.sqrt(p / (2 * np.pi)) * np.exp(-0.5 * p * (x - xe) ** 2)
        return like * prior

    half = 10.0 / np.sqrt(p)
    value, err = integrate.quad(integrand, xe - half, xe + half, epsabs=0.0, epsrel=1e-12, limit=200)
    if not np.isfinite(value) or err > 1e-8 * abs(value) + 1e-300:
        raise OracleError(f"quadrature did not converge (estimate {value}, error {err})")
    return value


def kalman_update_dense(x_pred, P_pred, innovation, R, H):
    """Textbook Kalman measurement update with an explicit inverse."""
    H = np.atleast_2d(H)
    R = np.atleast_2d(R) if np.ndim(R) else R * np.eye(H.shape[0])
    S = H @ P_pred @ H.T + R
    K = P_pred @ H.T @ np.linalg.inv(S)
    x = x_pred + K @ innovation
    P = (np.eye(P_pred.shape[0]) - K @ H) @ P_pred
    return x, P, K


def classical_rvm(Phi, t, alpha0, beta0, n_iter):
    """Zero-mean relevance vector machine in its usual (alpha, beta) form.

    Returns per-iteration arrays of ``alpha`` (precisions) and ``1/beta``
    (noise variance) after each re-estimation.
    """
    Phi = np.asarray(Phi, dtype=float)
    t = np.asarray(t, dtype=float)
    alpha = np.array(alpha0, dtype=float)
    beta = 1.0 / beta0
    n = t.size
    alphas, noise = [], []
    for _ in range(n_iter):
        S = np.linalg.inv(beta * Phi.T @ Phi + np.diag(alpha))
        m = beta * S @ Phi.T @ t
        g = 1.0 - alpha * np.diag(S)
        alpha_new = g / m**2
        beta = (n - g.sum()) / np.sum((t - Phi @ m) ** 2)
        alpha = alpha_new
        alphas.append(alpha.copy())
        noise.append(1.0 / beta)
    return np.array(alphas), np.array(noise)
