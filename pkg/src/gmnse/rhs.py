"""
The globally modified convection and the full right-hand side.

The state evolves by

    du/dt = -nu |k|^2 u - F_N(u) P div(u (x) u) + P f,

with ``F_N(u) = min(1, N / ||u||_{L^4})``. ``N = inf`` recovers the plain
Galerkin Navier-Stokes system and ``N = 0`` the Stokes system.
"""

import dataclasses
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels
from . import spectral as sp
from .errors import ConfigError, ContractViolation
from .report import CheckReport


def taper(r, N):
    """``f_N(r) = min(1, N / r)`` with ``f_N(0) = 1``."""
    if r < 0 or N < 0 or math.isnan(r) or math.isnan(N):
        raise ValueError(f"taper needs r >= 0 and N >= 0, got r={r}, N={N}")
    if r == 0 or math.isinf(N):
        return 1.0
    return min(1.0, N / r)


@dataclass(frozen=True, eq=False)
class SimParams:
    grid: sp.Grid
    nu: float
    taper_N: float = math.inf
    forcing: sp.SpectralField = None
    dt: float = 0.01
    cfl: float = 1.0

    def __post_init__(self):
        if not (self.nu > 0 and math.isfinite(self.nu)):
            raise ConfigError("nu", f"viscosity must be positive, got {self.nu}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("dt", f"time step must be positive, got {self.dt}")
        if not self.taper_N >= 0:
            raise ConfigError("taper_N", f"must be >= 0 or inf, got {self.taper_N}")
        if not self.cfl > 0:
            raise ConfigError("cfl", f"must be positive, got {self.cfl}")
        if self.forcing is None:
            object.__setattr__(self, "forcing", sp.SpectralField.zeros(self.grid))
        elif self.forcing.grid.n != self.grid.n:
            raise ConfigError("forcing", "forcing lives on a different grid")
        elif not self.forcing.is_divergence_free():
            raise ConfigError("forcing", "forcing must be divergence-free")

    @cached_property
    def forcing_norm_Hm12(self):
        return sp.fractional_norm(self.forcing, -0.5)

    @cached_property
    def has_forcing(self):
        return bool(np.any(self.forcing.coeffs))

    @cached_property
    def decay(self):
        return np.exp(-self.nu * self.grid.k2 * self.dt)

    @cached_property
    def half_decay(self):
        return np.exp(-0.5 * self.nu * self.grid.k2 * self.dt)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def forcing_from_entries(entries, grid):
    """Build ``P f`` from ``[{k: [..3], re: [..3], im: [..3]}, ...]``.

    Each entry contributes ``z exp(i k.x) + c.c.`` with ``z = re + i im``; the
    sum is Leray projected.
    """
    total = sp.SpectralField.zeros(grid)
    for i, entry in enumerate(entries):
        extra = set(entry) - {"k", "re", "im"}
        if extra:
            raise ConfigError(f"forcing[{i}]", f"unknown keys {sorted(extra)}")
        try:
            k = [int(c) for c in entry["k"]]
            re = [float(c) for c in entry.get("re", [0.0, 0.0, 0.0])]
            im = [float(c) for c in entry.get("im", [0.0, 0.0, 0.0])]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"forcing[{i}]", f"malformed entry: {exc}") from None
        if len(k) != 3 or len(re) != 3 or len(im) != 3:
            raise ConfigError(f"forcing[{i}]", "k, re and im need three components")
        if not any(k):
            raise ConfigError(f"forcing[{i}].k", "the mean mode cannot be forced")
        if any(3 * abs(c) >= grid.n for c in k):
            raise ConfigError(f"forcing[{i}].k", f"{k} lies outside the dealiased band")
        vec = np.array(re) + 1j * np.array(im)
        if not np.all(np.isfinite(vec)):
            raise ConfigError(f"forcing[{i}]", "non-finite amplitude")
        total = total + sp.mode_pair(grid, k, vec)
    return sp.leray_project(total)


def taylor_green_forcing(grid, amplitude):
    """``amplitude * (sin x cos y cos z, -cos x sin y cos z, 0)``."""
    x, y, z = sp.physical_coordinates(grid)
    vals = np.zeros(grid.physical_shape)
    vals[0] = amplitude * np.sin(x) * np.cos(y) * np.cos(z)
    vals[1] = -amplitude * np.cos(x) * np.sin(y) * np.cos(z)
    return sp.leray_project(sp.SpectralField.from_physical(vals, grid))


def modification_factor(u, N):
    return taper(sp.l4_norm(u), N)


def nonlinear_part(coeffs, p):
    """``-F_N(u) P div(u u) + P f`` plus ``(l4, max|u|, F_N)`` of the input."""
    conv, l4, umax = sp.convective_term(coeffs, p.grid)
    F = taper(l4, p.taper_N)
    out = conv * (-F)
    if p.has_forcing:
        out += p.forcing.coeffs
    return out, l4, umax, F


def gmnse_rhs(u, p):
    if not u.is_divergence_free():
        raise ContractViolation("gmnse_rhs requires a divergence-free field")
    nl, _, _, _ = nonlinear_part(u.coeffs, p)
    return sp.SpectralField(nl - p.nu * p.grid.k2 * u.coeffs, u.grid)


# ---------------------------------------------------------------------------
# inequality sweeps
# ---------------------------------------------------------------------------

def lipschitz_check_taper(samples, seed, slack=1e-12):
    """Random sweep of the taper Lipschitz bound and of ``f_N(r) r <= N``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    scale = 10.0 ** rng.uniform(-3, 3, size=samples)
    s = rng.uniform(0, 1, size=samples) * scale
    t = rng.uniform(0, 1, size=samples) * scale
    N = rng.uniform(0, 1, size=samples) * scale
    # a slice of exact ties and zeros
    m = max(1, samples // 50)
    t[:m] = s[:m]
    s[m:2 * m] = 0.0
    keep = (s + t) > 0
    s, t, N = s[keep], t[keep], N[keep]

    ratio, excess = kernels.taper_lipschitz_ratios(s, t, N)
    bad = np.nonzero(excess > slack)[0]

    r = np.concatenate([s, t])
    NN = np.concatenate([N, N])
    fr = np.where(r > 0, np.minimum(1.0, NN / np.where(r > 0, r, 1.0)), 1.0)
    cap_excess = fr * r - NN
    bad_cap = np.nonzero(cap_excess > slack)[0]
    mono = np.all(np.diff(np.minimum(1.0, 1.0 / np.linspace(1e-3, 10, 1000))) <= 0)

    failures = [{"s": float(s[i]), "t": float(t[i]), "N": float(N[i])} for i in bad[:20]]
    failures += [{"r": float(r[i]), "N": float(NN[i])} for i in bad_cap[:20]]
    return CheckReport(
        name="taper",
        passed=len(failures) == 0 and bool(mono),
        metrics={
            "samples": int(s.size),
            "max_ratio": float(ratio.max()),
            "max_lipschitz_excess": float(excess.max()),
            "max_cap_excess": float(cap_excess.max()),
        },
        failures=failures,
        reference="taper Lipschitz bound and F_N(u)||u||_L4 <= N",
    )


def _random_pair(grid, rng):
    u = sp.random_field(grid, rng, exponent=rng.uniform(0.0, 2.0),
                        norm=10.0 ** rng.uniform(-1, 1.5))
    kind = rng.integers(3)
    if kind == 0:
        v = sp.random_field(grid, rng, exponent=rng.uniform(0.0, 2.0),
                            norm=10.0 ** rng.uniform(-1, 1.5))
    elif kind == 1:
        dv = sp.random_field(grid, rng, norm=sp.norm_H(u) * 10.0 ** rng.uniform(-4, -1))
        v = u + dv
    else:
        v = u * rng.uniform(0.2, 5.0)
    return u, v


def tensor_lipschitz_check(pairs, grid, seed, rtol=1e-10):
    """Sweep both estimates on the globally modified tensor ``F_N(u) u (x) u``."""
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    rng = np.random.default_rng(seed)
    dx = grid.cell_volume
    worst_lip = 0.0
    worst_cap = 0.0
    failures = []
    for i in range(pairs):
        u, v = _random_pair(grid, rng)
        up, vp = u.physical(), v.physical()
        lu = sp.l4_norm_from_physical(up, grid)
        lv = sp.l4_norm_from_physical(vp, grid)
        N = float(np.exp(rng.uniform(np.log(0.1), np.log(3.0))) * max(lu, lv))
        Fu, Fv = taper(lu, N), taper(lv, N)
        lhs = np.sqrt(kernels.scaled_tensor_diff_sq(up, vp, Fu, Fv) * dx)
        duv = sp.l4_norm_from_physical(up - vp, grid)
        rhs = 3.0 * N * duv
        cap_lhs = np.sqrt(kernels.scaled_tensor_diff_sq(up, np.zeros_like(up), Fu, 0.0) * dx)
        cap_rhs = N * lu
        if rhs > 0:
            worst_lip = max(worst_lip, lhs / rhs)
        if cap_rhs > 0:
            worst_cap = max(worst_cap, cap_lhs / cap_rhs)
        if lhs > rhs * (1 + rtol) or cap_lhs > cap_rhs * (1 + rtol):
            failures.append({"pair": i, "seed": seed, "N": N, "lhs": lhs, "rhs": rhs,
                             "cap_lhs": cap_lhs, "cap_rhs": cap_rhs})
    return CheckReport(
        name="tensor_lipschitz",
        passed=not failures,
        metrics={"pairs": pairs, "n": grid.n, "max_ratio_3N": worst_lip,
                 "max_ratio_cap": worst_cap},
        failures=failures,
        reference="||F_N(u)u(x)u - F_N(v)v(x)v||_L2 <= 3N||u-v||_L4, ||F_N(u)u(x)u||_L2 <= N||u||_L4",
    )


def very_weak_residual(traj, phi, p):
    """Residual of the tested equation at interior snapshots.

    ``d/dt (u, phi)`` by central differences against
    ``-nu (u, A phi) + F_N(u) int u(x)u : grad phi + (f, phi)``, with the
    convective pairing evaluated pointwise (divergence form). ``phi`` must be
    divergence-free and inside the dealiased band.

    Returns ``(times, residuals)``.
    """
    snaps = traj.snapshots
    if len(snaps) < 3:
        raise ValueError("need at least 3 snapshots")
    if not phi.is_divergence_free():
        raise ContractViolation("test field must be divergence-free")
    if np.any(np.abs(phi.coeffs) * ~phi.grid.dealias_mask > 0):
        raise ContractViolation("test field must lie in the dealiased band")
    times = np.asarray(traj.snapshot_times)
    h = np.diff(times)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0):
        raise ValueError("snapshots are not uniformly spaced")
    h = float(h[0])
    a_phi = sp.SpectralField(phi.coeffs * p.grid.k2, phi.grid)
    pairing = np.array([sp.inner_product(u, phi) for u in snaps])
    forc = sp.inner_product(p.forcing, phi)
    res = []
    for m in range(1, len(snaps) - 1):
        u = snaps[m]
        ddt = (pairing[m + 1] - pairing[m - 1]) / (2 * h)
        F = modification_factor(u, p.taper_N)
        conv = sp.divergence_pairing(u, phi) if F != 0.0 else 0.0
        rhs = -p.nu * sp.inner_product(u, a_phi) + F * conv + forc
        res.append(ddt - rhs)
    return times[1:-1], np.array(res)
