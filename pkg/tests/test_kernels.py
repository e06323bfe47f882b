import os
import subprocess
import sys

import numpy as np
import pytest
from conftest import random_problem

from doa_bcskf import _kernels
from doa_bcskf.sparse_bayes import SolverConfig, run_modified_rvm

needs_ext = pytest.mark.skipif("cython" not in _kernels.available_backends(), reason="extension not built")


def test_python_backend_always_available():
    assert "python" in _kernels.available_backends()
    with pytest.raises(ValueError):
        _kernels.get_kernel("fortran")


@pytest.mark.parametrize("value,expected", [("1", "python"), ("0", None)])
def test_env_var_selects_fallback(value, expected):
    env = dict(os.environ, DOA_BCSKF_PURE_PYTHON=value)
    out = subprocess.run([sys.executable, "-c", "import doa_bcskf; print(doa_bcskf.KERNEL_BACKEND)"],
                         env=env, capture_output=True, text=True, check=True).stdout.strip()
    assert out == (expected or _kernels.BACKEND)


@needs_ext
@pytest.mark.parametrize("mode", ["unit_cross", "exact"])
@pytest.mark.parametrize("rule", ["fixed", "mackay", "em"])
def test_backends_agree(mode, rule):
    rng = np.random.default_rng([len(mode), len(rule), ord(rule[0])])
    for _ in range(10):
        # overdetermined and noisy so the noise variance stays well away from its floor
        prob, _, _ = random_problem(rng, 16, 6)
        cfg = SolverConfig(p_update=mode, sigma2_update=rule, max_iters=12, tol=1e-15)
        a, _ = run_modified_rvm(prob, cfg, record=True, backend="python")
        b, _ = run_modified_rvm(prob, cfg, record=True, backend="cython")
        n = min(a.iterations, b.iterations)
        # p = gamma / mu^2 with mu -> 0 amplifies round-off in diverging precisions
        bounded = a.p_history[:n] < 1e6
        np.testing.assert_allclose(b.p_history[:n][bounded], a.p_history[:n][bounded], rtol=1e-9)
        np.testing.assert_allclose(b.p_history[:n], a.p_history[:n], rtol=1e-5)
        np.testing.assert_allclose(b.sigma2_history[:n], a.sigma2_history[:n], rtol=1e-9)
        np.testing.assert_allclose(b.evidence_trace[:n], a.evidence_trace[:n], rtol=1e-10)


@needs_ext
def test_backends_agree_on_array_problem(ula20):
    from doa_bcskf.array_model import realify_vector, synthesize_snapshot
    from doa_bcskf.sparse_bayes import SparseProblem
    geom, grid, A, At = ula20
    y = realify_vector(synthesize_snapshot(geom, grid, {20.0: 1.0}, 0.4, 0, dictionary=A).y)
    a, ea = run_modified_rvm(SparseProblem(At, y), backend="python")
    b, eb = run_modified_rvm(SparseProblem(At, y), backend="cython")
    assert ea.kept_indices[0] == eb.kept_indices[0]
    np.testing.assert_allclose(b.evidence_trace[:20], a.evidence_trace[:20], rtol=1e-9)
