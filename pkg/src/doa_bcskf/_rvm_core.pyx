# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled evidence-maximization loop.

Same algorithm and return convention as ``_rvm_py.rvm_loop``; the active
columns are packed column-major so every dense step is a single BLAS/LAPACK
call (dsyrk, dpotrf, dtrsm, dtrsv, dgemv, dtrtri).
"""

import numpy as np
from libc.math cimport log, fabs
from scipy.linalg.cython_blas cimport dsyrk, dtrsm, dtrsv, dgemv, ddot
from scipy.linalg.cython_lapack cimport dpotrf, dtrtri

from ._rvm_py import KernelError

cdef double LOG_2PI = log(2.0 * 3.141592653589793)


def rvm_loop(A, y, x_e, p, double sigma2, int max_iters, double tol, double p_cap,
             double denom_eps, double sigma2_floor, bint exact, int sigma2_rule=1,
             bint record=False):
    cdef double[:, ::1] AT = np.ascontiguousarray(np.asarray(A, dtype=np.float64).T)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] xe = np.ascontiguousarray(x_e, dtype=np.float64)
    p_out = np.array(p, dtype=np.float64)
    cdef double[::1] pv = p_out
    cdef int n2 = AT.shape[0]
    cdef int m2 = AT.shape[1]

    evidence = np.empty(max_iters)
    cdef double[::1] ev = evidence
    p_hist = np.empty((max_iters, n2)) if record else None
    s2_hist = np.empty(max_iters) if record else None
    cdef double[:, ::1] ph
    cdef double[::1] sh
    if record:
        ph = p_hist
        sh = s2_hist

    # column-major work arrays: column j at offset j * m2
    cdef double[::1] Aa = np.empty(n2 * m2)
    cdef double[::1] Sc = np.empty(n2 * m2)
    cdef double[::1] C = np.empty(m2 * m2)
    cdef double[::1] r0 = np.empty(m2)
    cdef double[::1] z = np.empty(m2)
    cdef double[::1] resid = np.empty(m2)
    cdef double[::1] d = np.empty(n2)
    cdef double[::1] delta = np.empty(n2)
    cdef double[::1] gam = np.empty(n2)
    cdef double[::1] p_new = np.empty(n2)
    cdef int[::1] act = np.empty(n2, dtype=np.intc)

    cdef int i, j, n, na, info, it = 0, one = 1
    cdef double dn, sq, val, logdet, zz, rss, dof, gsum, mu_n, xe_n, denom, change, rel
    cdef double done = 1.0, dzero = 0.0, dmone = -1.0
    cdef char lo = b'L', no = b'N', tr = b'T'
    cdef bint converged = False

    for i in range(m2):
        val = yv[i]
        for n in range(n2):
            val -= AT[n, i] * xe[n]
        r0[i] = val

    while it < max_iters:
        na = 0
        for n in range(n2):
            if pv[n] < p_cap:
                act[na] = n
                na += 1
        for j in range(na):
            n = act[j]
            dn = 1.0 / pv[n]
            d[j] = dn
            sq = dn ** 0.5
            for i in range(m2):
                Aa[j * m2 + i] = AT[n, i]
                Sc[j * m2 + i] = AT[n, i] * sq
        # C = s2 I + (A D^1/2)(A D^1/2)^T, lower triangle
        if na > 0:
            dsyrk(&lo, &no, &m2, &na, &done, &Sc[0], &m2, &dzero, &C[0], &m2)
        else:
            for i in range(m2 * m2):
                C[i] = 0.0
        for i in range(m2):
            C[i * m2 + i] += sigma2
        dpotrf(&lo, &m2, &C[0], &m2, &info)
        if info != 0:
            raise KernelError(f"measurement covariance not positive definite at iteration {it}")

        # Z = L^-1 A_active overwrites Aa's copy in Sc
        for i in range(na * m2):
            Sc[i] = Aa[i]
        if na > 0:
            dtrsm(&lo, &lo, &no, &no, &m2, &na, &done, &C[0], &m2, &Sc[0], &m2)
        for i in range(m2):
            z[i] = r0[i]
        dtrsv(&lo, &no, &no, &m2, &C[0], &m2, &z[0], &one)

        logdet = 0.0
        for i in range(m2):
            logdet += log(C[i * m2 + i])
        zz = ddot(&m2, &z[0], &one, &z[0], &one)
        ev[it] = -0.5 * (m2 * LOG_2PI + 2.0 * logdet + zz)

        # delta = d * (Z^T z)
        if na > 0:
            dgemv(&tr, &m2, &na, &done, &Sc[0], &m2, &z[0], &one, &dzero, &delta[0], &one)
        gsum = 0.0
        for j in range(na):
            gam[j] = d[j] * ddot(&m2, &Sc[j * m2], &one, &Sc[j * m2], &one)
            delta[j] *= d[j]
            gsum += gam[j]

        for n in range(n2):
            p_new[n] = pv[n]
        change = 0.0
        for j in range(na):
            n = act[j]
            xe_n = xe[n]
            mu_n = xe_n + delta[j]
            if exact:
                denom = (mu_n - xe_n) * (mu_n - xe_n)
            else:
                denom = mu_n * mu_n + xe_n * xe_n - xe_n * mu_n
            if denom < denom_eps:
                denom = denom_eps
            p_new[n] = gam[j] / denom
            rel = fabs(p_new[n] - pv[n]) / pv[n]
            if rel > change:
                change = rel

        if sigma2_rule:
            for i in range(m2):
                resid[i] = r0[i]
            if na > 0:
                dgemv(&no, &m2, &na, &dmone, &Aa[0], &m2, &delta[0], &one, &done, &resid[0], &one)
            rss = ddot(&m2, &resid[0], &one, &resid[0], &one)
            if sigma2_rule == 1:
                # 2M - sum(gamma) == s2 * ||L^-1||_F^2
                dtrtri(&lo, &no, &m2, &C[0], &m2, &info)
                if info != 0:
                    raise KernelError("singular Cholesky factor")
                dof = 0.0
                for i in range(m2):
                    for j in range(i, m2):
                        dof += C[i * m2 + j] * C[i * m2 + j]
                dof *= sigma2
                if not dof > 0.0:
                    raise KernelError("effective degrees of freedom non-positive")
                sigma2 = rss / dof
            else:
                sigma2 = (rss + sigma2 * gsum) / m2
            if sigma2 < sigma2_floor:
                sigma2 = sigma2_floor

        for n in range(n2):
            pv[n] = p_new[n]
        if record:
            for n in range(n2):
                ph[it, n] = pv[n]
            sh[it] = sigma2
        it += 1
        if change < tol:
            converged = True
            break

    if record:
        p_hist = p_hist[:it]
        s2_hist = s2_hist[:it]
    return p_out, sigma2, it, converged, evidence[:it], p_hist, s2_hist
