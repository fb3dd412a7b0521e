"""
Absorbing ball, attractor clouds and the weak-topology experiments.

The weak topology of H on bounded sets is metrized by the ``H_{-1/2}`` norm
of the difference. Attractors are approximated by finite clouds of states
``S_N(t) u0`` sampled after an analytically chosen transient.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import integrator as it
from . import spectral as sp
from .errors import ContractViolation, DivergenceError, ProtocolError
from .report import CheckReport

B0_SLACK = 1e-8


# ---------------------------------------------------------------------------
# absorbing ball
# ---------------------------------------------------------------------------

def absorbing_radius(p):
    """Radius of ``B0``: ``sqrt(1 + ||f||^2_{H_{-1/2}} / (lambda1 nu^2))``."""
    lam = p.grid.lambda1
    return math.sqrt(1.0 + p.forcing_norm_Hm12 ** 2 / (lam * p.nu ** 2))


def entry_time(p, norm_u0):
    """Analytic time after which a ball of radius ``norm_u0`` lies in ``B0``."""
    if norm_u0 <= 1.0:
        return 0.0
    return math.log(norm_u0 ** 2) / (p.nu * p.grid.lambda1)


def transient_time(p, norm_u0, eps=1e-3):
    """``max(T_B, -log(eps^2 lambda1 nu^2 / ||u0||^2) / (nu lambda1))``."""
    lam = p.grid.lambda1
    t_b = entry_time(p, norm_u0)
    if norm_u0 == 0.0:
        return t_b
    t_eps = -math.log(eps ** 2 * lam * p.nu ** 2 / norm_u0 ** 2) / (p.nu * lam)
    return max(t_b, t_eps)


def absorbing_bound_check(traj, slack=B0_SLACK):
    """Check ``||u(t)||^2 <= ||u0||^2 e^{-nu lambda1 t} + ||f||^2_{H_{-1/2}}/(lambda1 nu^2)``.

    Also records the first sample inside ``B0`` and whether the orbit stays
    there, against the analytic entry time.
    """
    p = traj.params
    lam = p.grid.lambda1
    t = traj.times - traj.times[0]
    h2 = traj.diagnostics["norm_H"] ** 2
    f_term = p.forcing_norm_Hm12 ** 2 / (lam * p.nu ** 2)
    rhs = h2[0] * np.exp(-p.nu * lam * t) + f_term
    excess = h2 - rhs
    bad = np.nonzero(excess > slack)[0]
    failures = [{"t": float(traj.times[i]), "lhs": float(h2[i]), "rhs": float(rhs[i])}
                for i in bad[:20]]

    r2 = absorbing_radius(p) ** 2
    inside = h2 <= r2 + slack
    t_b = entry_time(p, math.sqrt(h2[0]))
    if inside.any():
        first = int(np.argmax(inside))
        t_entry = float(t[first])
        stays = bool(inside[first:].all())
    else:
        t_entry, stays = math.inf, False
    # first sample at or after the analytic entry time
    later = np.nonzero(t >= t_b - 1e-12)[0]
    t_b_grid = float(t[later[0]]) if later.size else math.inf
    on_time = t_entry <= t_b_grid or not later.size
    if not on_time:
        failures.append({"entry_time": t_entry, "T_B": t_b})
    if inside.any() and not stays:
        failures.append({"left_B0_after": t_entry})
    return CheckReport(
        name="absorbing_bound",
        passed=not failures,
        metrics={
            "worst_margin": float(excess.max()),
            "entry_time": t_entry,
            "T_B": t_b,
            "radius": math.sqrt(r2),
            "samples": int(t.size),
        },
        failures=failures,
        reference="||S_N(t)u0||^2 <= ||u0||^2 exp(-nu lambda1 t) + ||f||^2_{H_{-1/2}}/(lambda1 nu^2)",
    )


# ---------------------------------------------------------------------------
# weak metric and semidistance
# ---------------------------------------------------------------------------

def weak_metric(u, v):
    """``||u - v||_{H_{-1/2}}``, a metric for the weak topology on ``B0``."""
    return sp.fractional_norm(u - v, -0.5)


def _weak_vectors(fields):
    """Real vectors whose Euclidean distances are the weak metric."""
    grid = fields[0].grid
    scale = np.sqrt(sp.VOLUME * grid.weights * sp._multiplier(grid.n, -0.5))
    out = np.empty((len(fields), 2, 3) + grid.spectral_shape[1:])
    for i, u in enumerate(fields):
        if u.grid.n != grid.n:
            raise sp.GridMismatchError(f"grids n={grid.n} and n={u.grid.n} differ")
        out[i, 0] = u.coeffs.real * scale
        out[i, 1] = u.coeffs.imag * scale
    return out.reshape(len(fields), -1)


def semidistance_detail(A, B):
    """``(max_a min_b rho_w(a, b), argmax a, argmin b)``; ties go to the first index."""
    a_samples = A.samples if isinstance(A, AttractorCloud) else list(A)
    b_samples = B.samples if isinstance(B, AttractorCloud) else list(B)
    if not a_samples or not b_samples:
        raise ValueError("semidistance needs two nonempty clouds")
    xa = _weak_vectors(a_samples)
    xb = _weak_vectors(b_samples)
    best = np.empty(len(xa))
    where = np.empty(len(xa), dtype=int)
    for i, x in enumerate(xa):
        d = np.sqrt(np.sum((xb - x) ** 2, axis=1))
        where[i] = int(np.argmin(d))
        best[i] = d[where[i]]
    i = int(np.argmax(best))
    return float(best[i]), i, int(where[i])


def hausdorff_semidistance(A, B):
    """``dist_w(A, B) = max_{a in A} min_{b in B} rho_w(a, b)``."""
    return semidistance_detail(A, B)[0]


# ---------------------------------------------------------------------------
# clouds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleMeta:
    taper_N: float
    t: float
    seed: int


@dataclass
class AttractorCloud:
    samples: list
    meta: list
    label: str
    transient: float = 0.0

    def __post_init__(self):
        if len(self.samples) != len(self.meta):
            raise ValueError("samples and meta differ in length")

    def __len__(self):
        return len(self.samples)

    def sorted(self):
        order = sorted(range(len(self)), key=lambda i: (self.meta[i].taper_N, self.meta[i].seed,
                                                        self.meta[i].t))
        return AttractorCloud([self.samples[i] for i in order], [self.meta[i] for i in order],
                              self.label, self.transient)

    def diameter(self):
        return hausdorff_semidistance(self, self) if len(self) == 1 else max(
            weak_metric(a, b) for i, a in enumerate(self.samples) for b in self.samples[i + 1:])

    def max_norm(self):
        return max(sp.norm_H(u) for u in self.samples)


@dataclass(frozen=True)
class Ensemble:
    """Initial data: ``count`` random fields from ``seed``.

    Member ``i`` uses ``numpy.random.default_rng([seed, i])``; its H norm is
    ``radius`` times a uniform factor in ``[0.5, 1]``. ``radius=None`` means
    the absorbing radius.
    """

    seed: int
    count: int
    radius: float = None
    exponent: float = 1.0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("ensemble count must be >= 1")

    def radius_for(self, p):
        return absorbing_radius(p) if self.radius is None else float(self.radius)

    def members(self, p):
        r = self.radius_for(p)
        for i in range(self.count):
            rng = np.random.default_rng([self.seed, i])
            scale = rng.uniform(0.5, 1.0)
            u0 = sp.random_field(p.grid, rng, exponent=self.exponent, norm=r * scale)
            yield self.seed * 100_000 + i, u0


def sample_attractor(p, N, ensemble, t_transient, offsets=(0.0,), eps=None):
    """Cloud of ``S_N(t_transient + s) u0`` over the ensemble and the offsets ``s``.

    ``t_transient`` must not undercut the analytic entry time of the
    ensemble radius; if ``eps`` is given the transient is raised to the
    analytic value making the decaying term smaller than ``eps``.
    """
    pN = p.replace(taper_N=N)
    r = ensemble.radius_for(p)
    t_b = entry_time(pN, r)
    if t_transient < t_b - 1e-12:
        raise ContractViolation(f"t_transient={t_transient:g} is below the entry time {t_b:g}")
    if eps is not None:
        t_transient = max(t_transient, transient_time(pN, r, eps))
        t_transient = math.ceil(t_transient / p.dt - 1e-9) * p.dt
    offsets = sorted(float(s) for s in offsets)
    if not offsets or offsets[0] < 0:
        raise ValueError("offsets must be nonempty and >= 0")

    r0 = absorbing_radius(pN)
    samples, meta = [], []
    for seed, u0 in ensemble.members(p):
        u = it.advance(u0, pN, t_transient)
        done = 0.0
        for s in offsets:
            if s > done:
                u = it.advance(u, pN, s - done)
                done = s
            t = t_transient + s
            h = sp.norm_H(u)
            if h ** 2 > r0 ** 2 + B0_SLACK:
                raise ProtocolError(f"sample at t={t:g} (seed {seed}) has ||u||_H={h:.6g} outside "
                                    f"B0 (radius {r0:.6g}); transient too short")
            samples.append(u)
            meta.append(SampleMeta(float(N), t, seed))
    return AttractorCloud(samples, meta, f"A_N={N:g}", t_transient).sorted()


def build_A_union(p, N_list, t_list, ensemble, offsets=(0.0,)):
    """Union of ``sample_attractor`` clouds over the pairs ``(N_j, t_j)``."""
    N_list, t_list = list(N_list), list(t_list)
    if not N_list or not t_list:
        raise ValueError("N_list and t_list must be nonempty")
    if len(t_list) == 1:
        t_list = t_list * len(N_list)
    if len(N_list) != len(t_list):
        raise ValueError("N_list and t_list differ in length")
    samples, meta = [], []
    for N, t in zip(N_list, t_list):
        c = sample_attractor(p, N, ensemble, t, offsets)
        samples += c.samples
        meta += c.meta
    return AttractorCloud(samples, meta, "A_union", min(t_list)).sorted()


def cloud_contains(big, small):
    """Every sample of ``small`` appears bit-identically in ``big``."""
    return all(any(u.bitwise_equal(v) for v in big.samples) for u in small.samples)


# ---------------------------------------------------------------------------
# upper semicontinuity
# ---------------------------------------------------------------------------

def nonincreasing_within(values, rel_tol=0.1, abs_tol=0.0):
    """Each value is at most ``(1 + rel_tol)`` times its predecessor plus ``abs_tol``."""
    v = np.asarray(values, dtype=float)
    return bool(np.all(v[1:] <= v[:-1] * (1.0 + rel_tol) + abs_tol))


@dataclass
class SemicontinuityResult:
    N: list
    dist_w: list
    trend: float
    clouds: dict = field(default_factory=dict, repr=False)

    def rows(self):
        return list(zip(self.N, self.dist_w))

    def nonincreasing(self, rel_tol=0.1, abs_tol=0.0):
        return nonincreasing_within(self.dist_w, rel_tol, abs_tol)


def semicontinuity_experiment(p, N_list, reference, ensemble, t_transient, offsets=(0.0,)):
    """``dist_w(A_N, reference)`` for each ``N``.

    ``trend`` is the fraction of successive steps along ``N_list`` where the
    distance does not increase.
    """
    N_list = sorted(N_list)
    dists, clouds = [], {}
    for N in N_list:
        cloud = sample_attractor(p, N, ensemble, t_transient, offsets)
        clouds[N] = cloud
        dists.append(hausdorff_semidistance(cloud, reference))
    steps = np.diff(dists)
    trend = float(np.mean(steps <= 0)) if steps.size else 1.0
    return SemicontinuityResult(N_list, dists, trend, clouds)


def positive_invariance_shadow(cloud, p, N_list, tau):
    """Evolve every sample for ``tau`` under each ``N`` and measure ``dist_w`` back.

    The resolution scale ``eps_cloud`` is the largest nearest-neighbour
    distance inside the cloud (zero for a singleton).
    """
    moved = []
    for N in N_list:
        pN = p.replace(taper_N=N)
        moved += [it.advance(u, pN, tau) for u in cloud.samples]
    d = hausdorff_semidistance(moved, cloud)
    if len(cloud) > 1:
        x = _weak_vectors(cloud.samples)
        nn = []
        for i in range(len(x)):
            dd = np.sqrt(np.sum((x - x[i]) ** 2, axis=1))
            dd[i] = np.inf
            nn.append(dd.min())
        eps = float(max(nn))
    else:
        eps = 0.0
    return CheckReport(
        name="positive_invariance",
        passed=d <= eps,
        metrics={"dist_w": d, "eps_cloud": eps, "tau": tau, "n_moved": len(moved)},
        reference="S_N(tau) A stays within the cloud resolution of A",
    )


# ---------------------------------------------------------------------------
# energy inequality
# ---------------------------------------------------------------------------

def energy_drift(traj):
    """``max V - min V`` along the trajectory."""
    v = it.energy_functional(traj)
    return float(v.max() - v.min())


def calibrate_energy_tolerance(u0, p, t_end, safety=2.0):
    """Fit ``tol_V = C dt^2`` from runs at ``dt`` and ``dt/2``.

    Returns ``(C, drift_dt, drift_half)``; ``C`` is ``safety`` times the
    larger of the two scaled drifts.
    """
    d1 = energy_drift(it.integrate(u0, p, t_end, keep_snapshots=False))
    half = p.replace(dt=p.dt / 2)
    d2 = energy_drift(it.integrate(u0, half, t_end, keep_snapshots=False))
    C = safety * max(d1 / p.dt ** 2, d2 / half.dt ** 2)
    return C, d1, d2


def energy_inequality_check(traj, tol_V, equality=True):
    """``V(t) <= V(s) + tol_V`` for all ``s <= t``; with ``equality`` also
    ``|V(t) - V(s)| <= tol_V``."""
    v = it.energy_functional(traj)
    rise = v - np.minimum.accumulate(v)
    worst_rise = float(rise.max())
    spread = float(v.max() - v.min())
    failures = []
    if worst_rise > tol_V:
        i = int(np.argmax(rise))
        failures.append({"t": float(traj.times[i]), "rise": worst_rise})
    if equality and spread > tol_V:
        failures.append({"spread": spread})
    return CheckReport(
        name="energy_inequality",
        passed=not failures,
        metrics={"max_rise": worst_rise, "spread": spread, "tol_V": tol_V, "dt": traj.dt},
        failures=failures,
        reference="V(u(t)) <= V(u(s)) for s <= t",
    )


# ---------------------------------------------------------------------------
# agreement with the unmodified system
# ---------------------------------------------------------------------------

@dataclass
class AgreementResult:
    threshold: float
    sup_l4: float
    distances: dict
    nonincreasing: bool


def _l2_time_distance(snaps_a, snaps_b, h):
    d2 = np.array([sp.norm_H(a - b) ** 2 for a, b in zip(snaps_a, snaps_b)])
    return math.sqrt(float(np.sum(0.5 * h * (d2[1:] + d2[:-1]))))


def _same_orbit(ta, tb):
    keys = ("norm_H", "norm_V", "norm_L4", "norm_H38")
    return (all(np.array_equal(ta.diagnostics[k], tb.diagnostics[k]) for k in keys)
            and ta.final.bitwise_equal(tb.final)
            and all(a.bitwise_equal(b) for a, b in zip(ta.snapshots, tb.snapshots)))


def nse_agreement_threshold(u0, p, N_grid, t_end, max_snapshots=200):
    """Least ``N`` in the grid whose orbit is bit-identical to the ``N = inf`` orbit.

    Also returns ``L^2(0, T; H)`` distances to the ``N = inf`` orbit for every
    grid value (zero from the threshold on). Without agreement the threshold
    is ``inf``.
    """
    N_grid = sorted(float(N) for N in N_grid)
    if not N_grid:
        raise ValueError("N_grid must be nonempty")
    nsteps = int(round(t_end / p.dt))
    stride = max(1, math.ceil(nsteps / max_snapshots))
    while nsteps % stride:
        stride += 1
    ref = it.integrate(u0, p.replace(taper_N=math.inf), t_end, stride=stride)
    h = stride * p.dt
    threshold = math.inf
    dist = {}
    for N in N_grid:
        tr = it.integrate(u0, p.replace(taper_N=N), t_end, stride=stride)
        if _same_orbit(tr, ref):
            dist[N] = 0.0
            if threshold == math.inf:
                threshold = N
        else:
            dist[N] = _l2_time_distance(tr.snapshots, ref.snapshots, h)
    vals = [dist[N] for N in N_grid]
    return AgreementResult(
        threshold=threshold,
        sup_l4=float(ref.diagnostics["norm_L4"].max()),
        distances=dist,
        nonincreasing=bool(np.all(np.diff(vals) <= 0)),
    )


# ---------------------------------------------------------------------------
# stationary oracle
# ---------------------------------------------------------------------------

def stationary_solution(p, tol=1e-13, max_iter=500):
    """Steady state of ``nu A u + F_N(u) P div(u u) = P f`` by fixed-point iteration.

    Converges when the flow is close to the Stokes regime (small forcing,
    large viscosity); raises ``DivergenceError`` otherwise.
    """
    from .rhs import modification_factor

    grid = p.grid
    inv = np.where(grid.k2 > 0, 1.0 / np.where(grid.k2 > 0, grid.k2, 1.0), 0.0) / p.nu
    f = p.forcing.coeffs
    c = f * inv
    for _ in range(max_iter):
        u = sp.SpectralField(c, grid)
        F = modification_factor(u, p.taper_N)
        conv = sp.tensor_divergence(u, check=False).coeffs if F != 0.0 else 0.0
        new = (f - F * conv) * inv * grid.dealias_mask
        change = float(np.abs(new - c).max())
        c = new
        if change <= tol * max(float(np.abs(c).max()), 1e-300):
            return sp.SpectralField(c, grid)
    raise DivergenceError(f"stationary iteration did not converge in {max_iter} steps")


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------

def _json_N(N):
    return N if math.isfinite(N) else "inf"


def write_cloud(cloud, directory, run_id, dt):
    """Write every sample as a snapshot plus the manifest ``cloud_{run_id}.json``.

    Sample ``i`` is stored under run id ``{run_id}-{i:04d}`` at its step
    index ``t / dt``. Returns the written paths, manifest last.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, paths = [], []
    for i, (u, m) in enumerate(zip(cloud.samples, cloud.meta)):
        name = it.snapshot_name(f"{run_id}-{i:04d}", int(round(m.t / dt)))
        path = directory / name
        sp.write_snapshot(path, u)
        paths.append(path)
        entries.append({"file": name, "N": _json_N(m.taper_N), "t": m.t, "seed": m.seed,
                        "norm_H": sp.norm_H(u)})
    manifest = directory / f"cloud_{run_id}.json"
    manifest.write_text(json.dumps(entries, indent=1))
    paths.append(manifest)
    return paths


def write_distances_csv(rows, path):
    """``N,dist_w`` rows, ``N = inf`` written as ``inf``."""
    rows = list(rows)
    if not rows:
        raise ValueError("no distances to write")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("N", "dist_w"))
        for N, d in rows:
            w.writerow((format(float(N), ".17g"), format(float(d), ".17g")))
