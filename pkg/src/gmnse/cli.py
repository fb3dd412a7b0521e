"""
Command-line entry point.

    gmnse {simulate,verify,attractor,semicontinuity,gronwall,rates}
          [--config PATH] [--out DIR] [--seed U64] [--threads N]

Exit status: 0 when every embedded check passes, 1 when a check fails, 2 on
a usage or configuration error.
"""

import argparse
import math
import sys

import numpy as np

from . import analysis as an
from . import attractor as at
from . import config as cf
from . import integrator as it
from . import rhs
from . import spectral as sp
from .errors import ConfigError, DivergenceError, ProtocolError, StepSizeError
from .output import RunWriter, emit_plot_data
from .report import CheckReport

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def set_threads(n):
    """Worker count for the FFTs; the compiled kernels are serial."""
    if n < 1:
        raise ConfigError("--threads", f"must be >= 1, got {n}")
    sp.set_fft_workers(n)


# ---------------------------------------------------------------------------
# experiments; each returns a list of CheckReport
# ---------------------------------------------------------------------------

def initial_field(cfg, p):
    ini = cfg["initial"]
    kind = ini["kind"]
    grid = p.grid
    if kind == "zero":
        return sp.SpectralField.zeros(grid)
    if kind == "shear":
        return sp.shear_field(grid, ini["amplitude"])
    if kind == "random":
        return sp.random_field(grid, np.random.default_rng(cfg.require_seed()),
                               exponent=ini["exponent"], norm=ini["norm"])
    if kind == "rough":
        return an.rough_field(grid, cfg.require_seed(), ini["norm"], ini["exponent"])
    try:
        u = sp.read_snapshot(ini["path"])
    except (OSError, ValueError) as exc:
        raise ConfigError("initial.path", str(exc)) from None
    if u.grid.n != grid.n:
        raise ConfigError("initial.path", f"snapshot has n={u.grid.n}, grid has n={grid.n}")
    return u


def run_simulate(cfg, writer):
    p = cfg.params()
    u0 = initial_field(cfg, p)
    sched = cfg["schedule"]
    traj = it.integrate(u0, p, sched["t_end"], stride=sched["stride"])
    diag = writer.path(f"diagnostics_{cfg.run_id}.csv")
    it.write_diagnostics_csv(traj, diag)
    writer.register(diag, "diagnostics")
    for u, t in zip(traj.snapshots, traj.snapshot_times):
        step = int(round(t / p.dt))
        path = writer.path(it.snapshot_name(cfg.run_id, step))
        sp.write_snapshot(path, u)
        writer.register(path, "snapshot")
    emit_plot_data(traj, writer)
    budget = np.abs(it.energy_budget(traj)) if traj.stride == 1 else np.zeros(1)
    info = CheckReport("simulate", True, {"steps": len(traj.times) - 1,
                                          "max_budget_residual": float(budget.max())})
    return [info, at.absorbing_bound_check(traj)]


def run_verify(cfg, writer):
    seed = cfg.require_seed()
    v = cfg["verify"]
    grid = cf._grid(cfg["grid"]["n"])
    steps = v["stokes_steps"]
    return [
        rhs.lipschitz_check_taper(v["taper_samples"], seed),
        rhs.tensor_lipschitz_check(v["tensor_pairs"], grid, seed),
        sp.spectral_identity_check(v["identity_pairs"], grid, seed),
        it.stokes_oracle_check(n=grid.n, t_end=5.0, dt=5.0 / steps),
        an.gronwall_controls(),
    ]


def _ensemble(cfg, offset=0):
    e = cfg["ensemble"]
    seed = e["seed"] if e["seed"] is not None else cfg.require_seed()
    return at.Ensemble(seed + offset, e["count"], e["radius"], e["exponent"])


def _transient(p, ensemble, eps):
    t = at.transient_time(p, ensemble.radius_for(p), eps)
    return math.ceil(t / p.dt - 1e-9) * p.dt


def run_attractor(cfg, writer):
    p = cfg.params()
    sched = cfg["schedule"]
    ens = _ensemble(cfg)
    T = _transient(p, ens, sched["eps"])
    t_list = sched["t_list"] or [T]
    cloud = at.build_A_union(p, sched["N_list"], t_list, ens, sched["offsets"])
    for path in at.write_cloud(cloud, writer.directory, cfg.run_id, p.dt):
        writer.register(path, "cloud" if path.suffix == ".json" else "snapshot")
    r0 = at.absorbing_radius(p)
    return [CheckReport(
        "attractor_cloud",
        cloud.max_norm() <= math.sqrt(r0 ** 2 + at.B0_SLACK),
        {"samples": len(cloud), "transient": min(t_list), "max_norm_H": cloud.max_norm(),
         "radius_B0": r0, "diameter": cloud.diameter()},
        reference="all cloud samples lie in B0",
    )]


def run_semicontinuity(cfg, writer):
    p = cfg.params()
    sched = cfg["schedule"]
    tol = cfg["tolerances"]
    ens = _ensemble(cfg)
    T = _transient(p, ens, sched["eps"])
    ref_ens = _ensemble(cfg, sched["ref_seed_offset"])
    N_ref = sched["N_ref"]
    if max(N_ref) <= max(sched["N_list"]):
        raise ConfigError("schedule.N_ref", "reference thresholds must exceed max(N_list)")
    t_ref = [T + 2.0 * (j + 1) for j in range(len(N_ref))]
    reference = at.build_A_union(p, N_ref, t_ref, ref_ens, sched["offsets"])
    res = at.semicontinuity_experiment(p, sched["N_list"], reference, ens, T, sched["offsets"])
    emit_plot_data(res, writer)
    ok = res.nonincreasing(tol["trend"], tol["trend_abs"])
    return [CheckReport(
        "semicontinuity", ok,
        {"N": res.N, "dist_w": res.dist_w, "trend": res.trend, "transient": T},
        reference="dist_w(A_N, A) nonincreasing in N within the noise tolerance",
    )]


def run_gronwall(cfg, writer):
    g = cfg["gronwall"]
    rtol = cfg["tolerances"]["gronwall_rtol"]
    reports = [an.gronwall_controls(g["alpha"], g["beta"])]
    for i, setting in enumerate(g["settings"]):
        if len(setting) != 3:
            raise ConfigError(f"gronwall.settings[{i}]", "expected [c, gamma, T]")
        c, gamma, T = (float(x) for x in setting)
        try:
            prob = an.GronwallProblem(1.0, 1.0, c, g["alpha"], g["beta"], gamma, T)
        except ValueError as exc:
            raise ConfigError(f"gronwall.settings[{i}]", str(exc)) from None
        rep = an.gronwall_bound_check(prob, scales=g["scales"], rtol=rtol)
        writer.write_json(f"gronwall_{i}.json", an.gronwall_report_dict(rep), "gronwall")
        reports.append(rep)
    return reports


def run_rates(cfg, writer):
    p = cfg.params()
    r = cfg["rates"]
    tol = cfg["tolerances"]
    u0 = an.rough_field(p.grid, cfg.require_seed(), r["norm"], r["exponent"])
    window = tuple(r["window"])
    traj = it.integrate(u0, p, r["t_end"])
    half = it.integrate(u0, p.replace(dt=p.dt / 2), r["t_end"])
    thetas = sorted(set(r["theta"]) | {0.375})
    fits = [an.smoothing_rate_fit(traj, th, window) for th in thetas]
    der = an.derivative_rate_fit(traj, r["eta"], window, r["p"])
    der_half = an.derivative_rate_fit(half, r["eta"], window, r["p"])
    for th, fit in zip(thetas, fits):
        writer.write_json(f"rate_smoothing_theta{th:g}.json", fit.to_dict(), "rate")
    writer.write_json("rate_derivative.json", der.to_dict(), "rate")
    change = abs(der.extra["Lp_norm"] / der_half.extra["Lp_norm"] - 1.0)
    slopes = [f.slope for f in fits]
    reports = [
        CheckReport("smoothing_rate",
                    fits[thetas.index(0.375)].slope >= -0.375 - tol["smoothing_margin"],
                    {"slope_H38": fits[thetas.index(0.375)].slope, "theta": thetas,
                     "slopes": slopes},
                    reference="||u(t)||_{H_{3/8}} <= C t^{-3/8}"),
        CheckReport("smoothing_family", bool(np.all(np.diff(slopes) <= 0)),
                    {"slopes": slopes}, reference="slopes nonincreasing in theta"),
        CheckReport("derivative_rate",
                    der.slope >= -(0.5 + r["eta"]) - tol["derivative_margin"] and change <= 0.05,
                    {"slope": der.slope, "eta": r["eta"], "Lp_norm": der.extra["Lp_norm"],
                     "Lp_change_half_dt": change},
                    reference="||du/dt||_{H_{-3/8}} <= C t^{-1/2-eta}; du/dt in L^p(0,T; H_{-3/8})"),
    ]
    return reports


EXPERIMENTS = {
    "simulate": run_simulate,
    "verify": run_verify,
    "attractor": run_attractor,
    "semicontinuity": run_semicontinuity,
    "gronwall": run_gronwall,
    "rates": run_rates,
}


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def run(cfg, out_dir, threads=1):
    """Run an experiment; returns ``(status, manifest_path, reports)``."""
    set_threads(threads)
    writer = RunWriter(out_dir)
    try:
        reports = EXPERIMENTS[cfg.kind](cfg, writer)
    except (ProtocolError, StepSizeError, DivergenceError) as exc:
        reports = [CheckReport(cfg.kind, False, failures=[{"error": str(exc)}],
                               reference=type(exc).__name__)]
    writer.write_json("report.json", {
        "kind": cfg.kind, "seed": cfg.seed, "run_id": cfg.run_id, "threads": threads,
        "passed": all(r.passed for r in reports),
        "checks": [r.to_dict() for r in reports],
    }, "report")
    manifest = writer.write_manifest()
    status = EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL
    return status, manifest, reports


def _u64(text):
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="gmnse", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)
    for name in cf.KINDS:
        s = sub.add_parser(name)
        s.add_argument("--config", metavar="PATH")
        s.add_argument("--out", metavar="DIR", default=None)
        s.add_argument("--seed", metavar="U64", type=_u64, default=None)
        s.add_argument("--threads", metavar="N", type=int, default=1)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = args.out or f"gmnse-out/{args.command}"
    try:
        if args.config:
            cfg = cf.load(args.config, args.command, args.seed)
        else:
            cfg = cf.default(args.command, args.seed)
        status, manifest, reports = run(cfg, out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for r in reports:
        print(r.line())
        if not r.passed:
            print(f"  failed check '{r.name}' ({r.reference})", file=sys.stderr)
            for f in r.failures[:5]:
                print(f"    {f}", file=sys.stderr)
    print(f"manifest: {manifest}")
    return status


if __name__ == "__main__":
    sys.exit(main())
