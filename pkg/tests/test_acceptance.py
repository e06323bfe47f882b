"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

The lines are collected into an "acceptance criteria" section at the end of
the pytest run.
"""

import csv
import io

import numpy as np
import pytest
from conftest import random_problem

from doa_bcskf import _kernels, oracle
from doa_bcskf.array_model import realify_vector, synthesize_snapshot
from doa_bcskf.bcskf import kalman_update
from doa_bcskf.cli import main
from doa_bcskf.cli_io import load_scenario
from doa_bcskf.scenarios import compare_methods
from doa_bcskf.sparse_bayes import (
    SolverConfig,
    SparseProblem,
    dominant_index,
    log_marginal,
    make_state,
    posterior,
    run_modified_rvm,
    update_sigma2,
)


def _verdict(report, number, ok, detail):
    report(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
    return ok


@pytest.fixture(scope="module")
def benchmarks():
    """Paired Monte Carlo runs (Q=25) of the three bundled scenarios."""
    out = {}
    for name in ("endfire", "non_endfire", "random_init"):
        spec, _ = load_scenario(name)
        assert spec.num_trials == 25 and spec.num_snapshots == 20
        out[name] = compare_methods(spec).results
    return out


def test_criterion_1_endfire_ordering(benchmarks, report):
    b, m = benchmarks["endfire"]["baseline"].mean_rmse, benchmarks["endfire"]["modified"].mean_rmse
    ok = _verdict(report, 1, m < 3.0 and b > 2 * m,
                  f"endfire mean RMSE modified {m:.3f} deg (< 3.0), baseline {b:.3f} deg (> 2x modified); "
                  "reference 0.98 vs 11.03")
    assert ok


def test_criterion_2_non_endfire_ordering(benchmarks, report):
    b, m = benchmarks["non_endfire"]["baseline"].mean_rmse, benchmarks["non_endfire"]["modified"].mean_rmse
    ok = _verdict(report, 2, m < 1.5 and m < b,
                  f"non-endfire mean RMSE modified {m:.3f} deg (< 1.5), baseline {b:.3f} deg; reference 0.36 vs 5.59")
    assert ok


def test_criterion_3_random_ordering(benchmarks, report):
    b, m = benchmarks["random_init"]["baseline"].mean_rmse, benchmarks["random_init"]["modified"].mean_rmse
    ok = _verdict(report, 3, m < b,
                  f"random-initial mean RMSE modified {m:.3f} deg < baseline {b:.3f} deg; reference 3.52 vs 10.98")
    assert ok


def test_criterion_4_cost_ratio(benchmarks, report):
    tb, tm = benchmarks["endfire"]["baseline"].mean_time_s, benchmarks["endfire"]["modified"].mean_time_s
    ok = _verdict(report, 4, tm <= 3 * tb,
                  f"per-snapshot solver time modified {tm * 1e3:.2f} ms vs baseline {tb * 1e3:.2f} ms "
                  f"(ratio {tm / tb:.2f} <= 3)")
    assert ok


def test_criterion_5_oracle_equivalence(report):
    rng = np.random.default_rng(20240505)
    worst = dict(posterior=0.0, log_marginal=0.0, kernel_evidence=0.0, woodbury=0.0, kalman=0.0)
    for _ in range(200):
        prob, p, s2 = random_problem(rng)
        A, m2, n2 = prob.A_tilde, prob.num_measurements, prob.num_coefficients

        Sigma, mu = posterior(prob, p, s2)
        S_ref, mu_ref = oracle.posterior_dense(prob, p, s2)
        worst["posterior"] = max(worst["posterior"],
                                 np.abs(mu - mu_ref).max() / max(np.abs(mu_ref).max(), 1.0),
                                 np.abs(Sigma - S_ref).max() / max(np.abs(S_ref).max(), 1.0))

        L_ref = oracle.log_marginal_direct(prob, p, s2)
        worst["log_marginal"] = max(worst["log_marginal"], abs(log_marginal(prob, p, s2) - L_ref) / abs(L_ref))
        # the iteration kernel evaluates the evidence in measurement space
        ev = _kernels.rvm_loop(A, prob.y_tilde, prob.x_e, p, s2, 1, 0.5, np.inf, 1e-30, 1e-12, False, 1)[4][0]
        worst["kernel_evidence"] = max(worst["kernel_evidence"], abs(ev - L_ref) / abs(L_ref))

        lhs = np.linalg.inv(s2 * np.eye(m2) + A @ np.diag(1 / p) @ A.T)
        rhs = np.eye(m2) / s2 - A @ Sigma @ A.T / s2**2
        worst["woodbury"] = max(worst["woodbury"], np.abs(lhs - rhs).max() / np.abs(lhs).max())

        B = rng.standard_normal((n2, n2))
        P_pred = B @ B.T + 0.1 * np.eye(n2)
        x_pred, y_e = rng.standard_normal(n2), rng.standard_normal(m2)
        got = kalman_update(x_pred, P_pred, y_e, s2, A)
        ref = oracle.kalman_update_dense(x_pred, P_pred, y_e, s2, A)
        worst["kalman"] = max(worst["kalman"], *(np.abs(g - r).max() / max(np.abs(r).max(), 1.0)
                                                 for g, r in zip(got, ref)))
    limits = dict(posterior=1e-10, log_marginal=1e-8, kernel_evidence=1e-8, woodbury=1e-8, kalman=1e-9)
    ok = all(worst[k] <= limits[k] for k in limits)
    _verdict(report, 5, ok, "200 instances, worst relative error " +
             ", ".join(f"{k} {worst[k]:.1e} (<= {limits[k]:.0e})" for k in limits))
    assert ok


def _dense_instance(rng, n2):
    A = rng.standard_normal((16, n2))
    x = rng.choice([-1.0, 1.0], n2) * rng.uniform(0.5, 2.0, n2)
    return A, x, A @ x + 0.3 * rng.standard_normal(16)


def test_criterion_6_stationarity(report):
    rng = np.random.default_rng(6)
    worst_s2 = worst_s2_joint = worst_exact = worst_unit = 0.0
    for _ in range(20):
        A, x, y = _dense_instance(rng, int(rng.integers(2, 7)))
        prob = SparseProblem(A, y, x + 0.5 * rng.standard_normal(x.size))

        # noise update iterated to its fixed point with p held
        p = rng.uniform(0.2, 5.0, x.size)
        s2 = 0.1
        for _ in range(10_000):
            new = update_sigma2(make_state(prob, p, s2), prob)
            done = abs(new - s2) <= 1e-14 * s2
            s2 = new
            if done:
                break
        L = log_marginal(prob, p, s2)
        g = oracle.finite_diff_gradient(lambda v: log_marginal(prob, p, v[0]), [s2])[0]
        worst_s2 = max(worst_s2, abs(g) / abs(L))

        for mode in ("exact", "unit_cross"):
            st, _ = run_modified_rvm(prob, SolverConfig(p_update=mode, tol=1e-12, max_iters=50_000))
            L = st.log_evidence
            a = st.active
            gp = oracle.finite_diff_gradient(lambda q: log_marginal(prob, q, st.sigma2), st.p)
            rel = np.max(np.abs(gp[a] * st.p[a])) / abs(L) if a.any() else 0.0
            if mode == "exact":
                gs = oracle.finite_diff_gradient(lambda v: log_marginal(prob, st.p, v[0]), [st.sigma2])[0]
                worst_s2_joint = max(worst_s2_joint, abs(gs) / abs(L))
                worst_exact = max(worst_exact, rel)
            else:
                worst_unit = max(worst_unit, rel)
    ok = worst_s2 < 1e-4 and worst_s2_joint < 1e-4 and worst_exact < 1e-4
    _verdict(report, 6, ok,
             f"|dL/dsigma2|/|L| worst {worst_s2:.1e} (noise fixed point), {worst_s2_joint:.1e} (joint); "
             f"exact-mode |p dL/dp|/|L| worst {worst_exact:.1e} (< 1e-4)")
    report(f"criterion 6 note: unit_cross-mode fixed point is not stationary, |p dL/dp|/|L| up to {worst_unit:.2e}")
    assert ok


def test_criterion_7_zero_mean_reduction(report):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        n2 = int(rng.integers(2, 7))
        A, _, y = _dense_instance(rng, n2)
        prob = SparseProblem(A, y)
        alphas, noise = oracle.classical_rvm(A, y, np.full(n2, 0.01), 0.1, 10)
        for backend in _kernels.available_backends():
            st, _ = run_modified_rvm(prob, SolverConfig(max_iters=10, tol=1e-300, p_cap=np.inf),
                                     record=True, backend=backend)
            n = st.iterations
            worst = max(worst, np.max(np.abs(st.p_history - alphas[:n]) / alphas[:n]),
                        np.max(np.abs(st.sigma2_history - noise[:n]) / noise[:n]))
    ok = _verdict(report, 7, worst <= 1e-10,
                  f"50 zero-mean instances, worst per-iteration relative deviation from classical updates "
                  f"{worst:.1e} (<= 1e-10)")
    assert ok


ALIASED = (0, 180)


@pytest.mark.parametrize("theta", [
    pytest.param(t, marks=pytest.mark.xfail(
        strict=True, reason="0 and 180 degrees share one steering vector at half-wavelength spacing"))
    if t in ALIASED else t
    for t in range(0, 181, 10)])
def test_criterion_8_noiseless_recovery(ula20, theta, report):
    geom, grid, A, At = ula20
    y = realify_vector(synthesize_snapshot(geom, grid, {float(theta): 1.0}, 0.0, dictionary=A).y)
    _, est = run_modified_rvm(SparseProblem(At, y), grid=grid)
    i = dominant_index(est.x_opt, est.kept_indices)
    doa = None if i is None else float(grid.angles[i])
    amp_err = np.inf if i is None else abs(est.x_opt[i] - 1.0)
    ok = doa == theta and amp_err < 1e-3
    _verdict(report, 8, ok, f"theta {theta:3d} deg -> estimate {doa} deg, amplitude error {amp_err:.1e}"
             + (" (aliased endpoint, expected to fail)" if theta in ALIASED else ""))
    assert ok


def _records_without_timing(path):
    rows = list(csv.reader(open(path, newline="")))
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(r[:-1] for r in rows)
    return buf.getvalue().encode()


def test_criterion_9_bench_determinism(tmp_path, monkeypatch, report):
    args = ["bench", "--config", "endfire", "--trials", "4"]
    monkeypatch.delenv("DOA_BCSKF_THREADS", raising=False)
    assert main(args + ["--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--threads", "1"]) == 0
    assert main(args + ["--out", str(tmp_path / "c"), "--threads", "3"]) == 0
    monkeypatch.setenv("DOA_BCSKF_THREADS", "2")
    assert main(args + ["--out", str(tmp_path / "d")]) == 0
    same = True
    for method in ("baseline", "modified"):
        ref = _records_without_timing(tmp_path / "a" / method / "records.csv")
        for run in "bcd":
            same &= _records_without_timing(tmp_path / run / method / "records.csv") == ref
    ok = _verdict(report, 9, same, "records.csv byte-identical (timing column excluded) across repeat runs "
                  "and 1, 2, 3 worker processes")
    assert ok
