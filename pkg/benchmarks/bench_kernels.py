"""Time the compiled and numpy evidence-maximization kernels on the same inputs.

Run with ``python3 benchmarks/bench_kernels.py [--repeats N]``.  Both
backends must return the same hyperparameters before timings are reported.
"""

import argparse
import statistics
import time

import numpy as np

from doa_bcskf import AngularGrid, ArrayGeometry, SolverConfig, build_dictionary, realify_dictionary
from doa_bcskf import realify_vector, synthesize_snapshot
from doa_bcskf._kernels import available_backends, get_kernel
from doa_bcskf.sparse_bayes import SIGMA2_RULES


def workloads(num_sensors=20, grid_spacing=1.0, seeds=range(5)):
    geom = ArrayGeometry.ula(num_sensors)
    grid = AngularGrid.uniform(grid_spacing)
    A = build_dictionary(geom, grid)
    At = realify_dictionary(A)
    for s in seeds:
        y = synthesize_snapshot(geom, grid, {20.0: 1.0}, 0.4, s, dictionary=A).y
        yield At, realify_vector(y), np.zeros(At.shape[1])


def run(kernel, cases, cfg):
    out = []
    for At, y, xe in cases:
        out.append(kernel(At, y, xe, np.full(At.shape[1], cfg.p_init), cfg.sigma2_init, cfg.max_iters,
                          cfg.tol, cfg.p_cap, cfg.denom_eps, cfg.sigma2_floor, False,
                          SIGMA2_RULES[cfg.sigma2_update]))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--sensors", type=int, default=20)
    ap.add_argument("--max-iters", type=int, default=100)
    args = ap.parse_args(argv)

    cfg = SolverConfig(max_iters=args.max_iters)
    cases = list(workloads(args.sensors))
    backends = available_backends()
    results, timings = {}, {}
    for name in backends:
        kernel = get_kernel(name)
        results[name] = run(kernel, cases, cfg)
        ts = []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            run(kernel, cases, cfg)
            ts.append(time.perf_counter() - t0)
        iters = sum(r[2] for r in results[name])
        timings[name] = statistics.median(ts) / iters

    # once sigma2 reaches its floor the systems are ill-conditioned, so the
    # backends only agree to about 1e-5 relative in p
    if len(backends) > 1:
        ref = results["python"]
        for other in backends:
            for a, b in zip(ref, results[other]):
                if a[2] != b[2] or not np.allclose(a[0], b[0], rtol=1e-4, atol=0.0):
                    raise SystemExit(f"backend {other} disagrees with python")
    for name in backends:
        print(f"{name:>8}: {timings[name] * 1e6:9.1f} us per iteration")
    if "cython" in timings:
        print(f"speedup: {timings['python'] / timings['cython']:.2f}x")


if __name__ == "__main__":
    main()
