"""Pure-numpy evidence-maximization loop (fallback for the compiled kernel).

Works in the measurement-space (Woodbury) form: with ``D = diag(1/p)`` over
the active set and ``C = s2 I + A D A^T = L L^T`` every quantity an update
needs comes from ``Z = L^-1 A_active`` and ``z = L^-1 (y - A x_e)``:

* ``gamma_n = d_n ||Z[:, n]||^2``
* ``mu_active = x_e + d * (Z^T z)``
* ``2M - sum(gamma) = s2 * ||L^-1||_F^2``

Pruned coordinates have zero prior variance, so their posterior mean is the
prior mean and their ``gamma`` is 0.
"""

import numpy as np
from scipy.linalg import cholesky, solve_triangular, LinAlgError

LOG_2PI = np.log(2.0 * np.pi)


class KernelError(ArithmeticError):
    pass


def rvm_loop(A, y, x_e, p, sigma2, max_iters, tol, p_cap, denom_eps,
             sigma2_floor, exact, sigma2_rule=1, record=False):
    """Run at most ``max_iters`` hyperparameter updates.

    ``sigma2_rule`` is 0 (hold fixed), 1 (``||r||^2 / (2M - sum gamma)``) or
    2 (EM: ``(||r||^2 + sigma2 sum gamma) / 2M``).

    Returns ``(p, sigma2, n_iter, converged, evidence, p_hist, s2_hist)``.
    ``evidence[i]`` is the log marginal at the hyperparameters used by
    iteration ``i``; histories hold the values after each update.
    """
    A = np.ascontiguousarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    x_e = np.asarray(x_e, dtype=float)
    p = np.array(p, dtype=float)
    m2, n2 = A.shape
    evidence = np.empty(max_iters)
    p_hist = np.empty((max_iters, n2)) if record else None
    s2_hist = np.empty(max_iters) if record else None
    r0 = y - A @ x_e
    eye = np.eye(m2)
    converged = False
    it = 0
    while it < max_iters:
        active = np.flatnonzero(p < p_cap)
        Aa = A[:, active]
        d = 1.0 / p[active]
        C = (Aa * d) @ Aa.T
        C[np.diag_indices(m2)] += sigma2
        try:
            L = cholesky(C, lower=True, check_finite=False)
        except LinAlgError as exc:
            raise KernelError(f"measurement covariance not positive definite at iteration {it}") from exc
        Z = solve_triangular(L, Aa, lower=True, check_finite=False)
        z = solve_triangular(L, r0, lower=True, check_finite=False)
        gamma = d * np.einsum("ij,ij->j", Z, Z)
        delta = d * (Z.T @ z)
        evidence[it] = -0.5 * (m2 * LOG_2PI + 2.0 * np.log(np.diag(L)).sum() + z @ z)

        mu_a = x_e[active] + delta
        xe_a = x_e[active]
        if exact:
            denom = (mu_a - xe_a) ** 2
        else:
            denom = mu_a * mu_a + xe_a * xe_a - xe_a * mu_a
        p_new = p.copy()
        p_new[active] = gamma / np.maximum(denom, denom_eps)
        if sigma2_rule:
            resid = r0 - Aa @ delta
            rss = resid @ resid
            if sigma2_rule == 1:
                Linv = solve_triangular(L, eye, lower=True, check_finite=False)
                dof = sigma2 * np.einsum("ij,ij->", Linv, Linv)
                if not dof > 0.0:
                    raise KernelError("effective degrees of freedom non-positive")
                sigma2 = max(rss / dof, sigma2_floor)
            else:
                sigma2 = max((rss + sigma2 * gamma.sum()) / m2, sigma2_floor)
        change = np.max(np.abs(p_new[active] - p[active]) / p[active]) if active.size else 0.0
        p = p_new
        if record:
            p_hist[it] = p
            s2_hist[it] = sigma2
        it += 1
        if change < tol:
            converged = True
            break
    if record:
        p_hist = p_hist[:it]
        s2_hist = s2_hist[:it]
    return p, sigma2, it, converged, evidence[:it], p_hist, s2_hist
