"""Benchmark: compiled banded sweep kernels vs the pure SciPy fallback.

Times raw forward/transpose sweeps and a full dual-CG null-control
solve with each kernel implementation, on the acceptance baseline
geometry. Run from the repository root:

    python3 benchmarks/bench_kernels.py [--nodes 100] [--steps 200] [--reps 20]
"""

import argparse
import time

import numpy as np

import pecontrol as pc
from pecontrol import kernels
from pecontrol.coefficients import HYP_C_CONST, random_smooth_field
from pecontrol.hum import HumProblem, solve_hum
from pecontrol.weights import make_weight_params


def _best_of(fn, reps):
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_raw_sweeps(impl, lap, coeffs, t, reps, rng):
    from pecontrol.stepping import BandSweeper

    sweeper = BandSweeper(lap, coeffs, t)
    n2 = 2 * lap.mesh.ndof
    nt = len(t) - 1
    u0 = rng.standard_normal(n2)
    term = rng.standard_normal(n2)
    out = np.empty((nt + 1, n2))
    fwd = _best_of(lambda: impl.sweep_forward(sweeper.lu, sweeper.ipiv,
                                              sweeper.step_factor, 0.0, None,
                                              u0, out), reps)
    bwd = _best_of(lambda: impl.sweep_transpose(sweeper.lu, sweeper.ipiv,
                                                sweeper.step_factor, 0.0, None,
                                                term, out), reps)
    return fwd, bwd


def bench_hum(lap, region, params, coeffs, t, y0, reps):
    prob = HumProblem(lap=lap, coeffs=coeffs, region=region, params=params, t=t,
                      y0=y0, penalty=1e-8, cg_tol=1e-10, cg_max_iter=2000,
                      enforce_hypothesis=False)
    res = solve_hum(prob)
    elapsed = _best_of(lambda: solve_hum(prob), max(1, reps // 4))
    return elapsed, res.cg_iters


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, default=100)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--reps", type=int, default=20)
    args = ap.parse_args()

    mesh = pc.build_mesh(1, [1.0], [args.nodes])
    lap = pc.assemble_laplacian(mesh)
    region = pc.build_control_region(mesh, [(0.2, 0.5)], [(0.3, 0.4)])
    t = pc.time_nodes(0.5, args.steps)
    params = make_weight_params(mesh, region, T=0.5, K=1.0)
    rng = np.random.default_rng(0)
    a = random_smooth_field(mesh, t, seed=1, amplitude=1.0)
    coeffs = pc.make_coefficients(mesh.ndof, args.steps, a=a, b=1.0, c=1.0, d=0.0,
                                  tag=HYP_C_CONST)
    x = mesh.coords()[:, 0]
    y0 = np.sin(np.pi * x) + 0.3 * np.sin(3 * np.pi * x)

    impls = kernels.implementations()
    print(f"nodes={args.nodes} steps={args.steps} "
          f"(time-varying coefficients, one factorization per step)")
    print(f"{'impl':<10} {'forward sweep':>14} {'transpose sweep':>16}")
    raw = {}
    for name, impl in impls.items():
        fwd, bwd = bench_raw_sweeps(impl, lap, coeffs, t, args.reps, rng)
        raw[name] = (fwd, bwd)
        print(f"{name:<10} {fwd * 1e3:>11.3f} ms {bwd * 1e3:>13.3f} ms")
    if "compiled" in raw:
        f_ratio = raw["fallback"][0] / raw["compiled"][0]
        b_ratio = raw["fallback"][1] / raw["compiled"][1]
        print(f"speedup: forward x{f_ratio:.1f}, transpose x{b_ratio:.1f}")

    print()
    print(f"{'impl':<10} {'full dual-CG solve':>20} {'cg iters':>9}")
    # stepping looks the sweeps up on the kernels module at call time,
    # so swapping the module attributes switches the implementation
    results = {}
    saved_fwd, saved_bwd = kernels.sweep_forward, kernels.sweep_transpose
    try:
        for name, impl in impls.items():
            kernels.sweep_forward = impl.sweep_forward
            kernels.sweep_transpose = impl.sweep_transpose
            elapsed, iters = bench_hum(lap, region, params, coeffs, t, y0,
                                       args.reps)
            results[name] = elapsed
            print(f"{name:<10} {elapsed * 1e3:>17.1f} ms {iters:>9}")
    finally:
        kernels.sweep_forward, kernels.sweep_transpose = saved_fwd, saved_bwd
    if "compiled" in results:
        print(f"speedup: x{results['fallback'] / results['compiled']:.1f}")


if __name__ == "__main__":
    main()
