"""Compare the compiled and pure-python kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--n 64] [--repeat 5]

Times the three kernel entry points on representative workloads plus one
full MCF step, prints a table with the speedup, and cross-checks that both
backends agree to machine precision.
"""

import argparse
import time

import numpy as np

from lagflow import _kernels
from lagflow.grids import GridSpec
from lagflow.mcf import dt_cfl, induced_geometry, mcf_step, stability_factor
from lagflow.torus_maps import TorusMap


def _best_of(repeat, fn, *args):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def build_workloads(n):
    grid = GridSpec(n)
    mx, my = grid.mesh()
    values = 0.4 * np.sin(mx) * np.cos(my) + 0.1 * np.cos(2.0 * mx)
    coef = _kernels.bspline_coeffs(values)
    # scattered but reproducible query points
    rng = np.random.default_rng(2024)
    qx = rng.uniform(0.0, 2.0 * np.pi, size=(n, n))
    qy = rng.uniform(0.0, 2.0 * np.pi, size=(n, n))
    f = TorusMap.from_displacement(grid, 0.2 * np.sin(my), 0.2 * np.sin(mx))
    state = induced_geometry(f)
    dt = dt_cfl(state, 0.5) * stability_factor(grid)

    def run_eval():
        return _kernels.bspline_eval(coef, grid.h, qx, qy)

    def run_grad():
        return _kernels.bspline_eval_grad(coef, grid.h, qx, qy)

    def run_invert():
        cx = _kernels.bspline_coeffs(f.u.x.values)
        cy = _kernels.bspline_coeffs(f.u.y.values)
        return _kernels.invert_displacement(cx, cy, grid.h, mx, my, 1e-12, 50)

    def run_step():
        return mcf_step(state, dt).f.u.x.values

    return {
        "bspline_eval": run_eval,
        "bspline_eval_grad": run_grad,
        "invert_displacement": run_invert,
        "mcf_step": run_step,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=64, help="grid size per axis")
    parser.add_argument("--repeat", type=int, default=5, help="timing repetitions (best-of)")
    args = parser.parse_args()

    backends = _kernels.available_backends()
    if "compiled" not in backends:
        print("compiled backend unavailable; timing python backend only")

    workloads = build_workloads(args.n)
    times: dict[str, dict[str, float]] = {name: {} for name in workloads}
    results: dict[str, dict[str, np.ndarray]] = {name: {} for name in workloads}

    for backend in backends:
        previous = _kernels.set_backend(backend)
        try:
            for name, fn in workloads.items():
                best, out = _best_of(args.repeat, fn)
                times[name][backend] = best
                first = out[0] if isinstance(out, tuple) else out
                results[name][backend] = np.asarray(first)
        finally:
            _kernels.set_backend(previous)

    print(f"n = {args.n}, best of {args.repeat}")
    header = f"{'workload':<22}" + "".join(f"{b:>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name in workloads:
        row = f"{name:<22}"
        for b in backends:
            row += f"{times[name][b] * 1e3:>12.2f}ms"
        if len(backends) == 2:
            row += f"{times[name]['python'] / times[name]['compiled']:>9.1f}x"
        print(row)

    if len(backends) == 2:
        print("\nagreement (max abs difference):")
        for name in workloads:
            gap = float(np.abs(results[name]["compiled"] - results[name]["python"]).max())
            print(f"  {name:<22} {gap:.3e}")
            if gap > 1e-10:
                raise SystemExit(f"backends disagree on {name}: {gap:.3e}")


if __name__ == "__main__":
    main()
