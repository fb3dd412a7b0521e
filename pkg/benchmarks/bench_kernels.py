"""
Compare the numba kernels with their numpy fallbacks.

Per-kernel timings run in this process (both paths are importable when numba
is enabled). The end-to-end time per integrator step is measured in two
subprocesses, one with ``GMNSE_DISABLE_JIT=1``.

    python benchmarks/bench_kernels.py [--n 24] [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from gmnse import kernels
from gmnse import spectral as sp


def _best(func, repeat, number):
    return min(timeit.repeat(func, repeat=repeat, number=number)) / number


def kernel_cases(n, rng):
    grid = sp.make_grid(n)
    u = sp.random_field(grid, rng, exponent=1.0, norm=1.0).physical()
    v = sp.random_field(grid, rng, exponent=1.0, norm=1.0).physical()
    prods = sp.to_spectral(kernels.np_tensor_products(u))
    s, t, N = (rng.uniform(0, 10, 100_000) for _ in range(3))
    mesh = np.linspace(1e-3, 1.0, 600)
    return {
        "l4_sum_and_max": ((u,), {}),
        "tensor_products": ((u,), {}),
        "scaled_tensor_diff_sq": ((u, v, 0.7, 0.3), {}),
        "projected_divergence": ((prods, grid.kx, grid.ky, grid.kz, grid.inv_k2,
                                  grid.active_mask), {}),
        "taper_lipschitz_ratios": ((s, t, N), {}),
        "volterra_weights": ((mesh, 0.5), {}),
    }


def bench_kernels(n, repeat):
    rng = np.random.default_rng(0)
    rows = []
    for name, (args, kw) in kernel_cases(n, rng).items():
        np_f = getattr(kernels, f"np_{name}")
        nb_f = getattr(kernels, f"nb_{name}")
        number = 3 if name == "volterra_weights" else 20
        t_np = _best(lambda: np_f(*args, **kw), repeat, number)
        t_nb = None
        if nb_f is not None:
            nb_f(*args, **kw)  # compile
            t_nb = _best(lambda: nb_f(*args, **kw), repeat, number)
        rows.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb,
                     "speedup": None if t_nb is None else t_np / t_nb})
    return rows


_STEP_SCRIPT = """
import json, timeit, numpy as np
from gmnse import spectral as sp, rhs, integrator as it, kernels
g = sp.make_grid({n})
p = rhs.SimParams(g, 1.0, 2.0, rhs.taylor_green_forcing(g, 2.0), dt=0.01)
u = sp.random_field(g, np.random.default_rng(0), 1.0, norm=5.0)
it.step(u, p)
t = min(timeit.repeat(lambda: it.step(u, p), repeat={repeat}, number=10)) / 10
print(json.dumps({{"backend": kernels.backend(), "step_s": t}}))
"""


def bench_step(n, repeat):
    out = []
    for flag in ("0", "1"):
        env = dict(os.environ, GMNSE_DISABLE_JIT=flag)
        res = subprocess.run([sys.executable, "-c", _STEP_SCRIPT.format(n=n, repeat=repeat)],
                             env=env, capture_output=True, text=True, check=True)
        out.append(json.loads(res.stdout.strip().splitlines()[-1]))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--n", type=int, default=24)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="print machine-readable output")
    args = ap.parse_args(argv)

    rows = bench_kernels(args.n, args.repeat)
    steps = bench_step(args.n, args.repeat)
    if args.json:
        print(json.dumps({"n": args.n, "kernels": rows, "step": steps}, indent=1))
        return 0
    print(f"n = {args.n}, active backend: {kernels.backend()}")
    print(f"{'kernel':<24}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>9}")
    for r in rows:
        nb = "-" if r["numba_s"] is None else f"{1e3 * r['numba_s']:.3f}"
        sp_ = "-" if r["speedup"] is None else f"{r['speedup']:.1f}x"
        print(f"{r['kernel']:<24}{1e3 * r['numpy_s']:>12.3f}{nb:>12}{sp_:>9}")
    for s in steps:
        print(f"integrator step ({s['backend']}): {1e3 * s['step_s']:.2f} ms")
    return 0


if __name__ == "__main__":
    sys.exit(main())
