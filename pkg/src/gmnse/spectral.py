"""
Truncated Fourier representation of velocity fields on the 2*pi-periodic 3-torus.

Storage convention
------------------
A field is kept as the half-spectrum returned by a real-to-complex transform,
``coeffs`` of shape ``(3, n, n, n//2 + 1)``, normalised as Fourier-series
coefficients::

    u(x) = sum_k  c(k) exp(i k.x)

i.e. ``scipy.fft.rfftn(u, norm="forward")``. With this convention

    (u, v)_{L^2} = (2*pi)^3 * sum_k  Re(c_u(k) . conj(c_v(k)))

where the sum runs over the full lattice; on the half-spectrum the
``k_z > 0`` plane entries are counted twice (see ``Grid.weights``). Reality
``c(-k) = conj(c(k))`` is implicit in the half storage.

Nyquist modes (any component equal to -n/2) have no conjugate partner on the
grid and are always zero. The mean mode ``k = 0`` is always zero.
"""

import functools
import os
import struct
from dataclasses import dataclass

import numpy as np
import scipy.fft

from . import kernels
from .errors import ContractViolation, GridMismatchError, InvalidGridError

TWO_PI = 2.0 * np.pi
VOLUME = TWO_PI ** 3

_fft_workers = int(os.environ.get("GMNSE_FFT_WORKERS", "1"))


def set_fft_workers(workers):
    """Thread count handed to scipy.fft (results are bitwise identical per count)."""
    global _fft_workers
    _fft_workers = max(1, int(workers))


def fft_workers():
    return _fft_workers


@dataclass(frozen=True, eq=False)
class Grid:
    """Wavevector bookkeeping for an ``n**3`` collocation grid."""

    n: int
    kx: np.ndarray
    ky: np.ndarray
    kz: np.ndarray
    k2: np.ndarray
    inv_k2: np.ndarray
    dealias_mask: np.ndarray
    retained: np.ndarray
    weights: np.ndarray
    active_mask: np.ndarray

    @property
    def domain_length(self):
        return TWO_PI

    @property
    def lambda1(self):
        return float(self.k2[self.k2 > 0].min())

    @property
    def spectral_shape(self):
        return (3, self.n, self.n, self.n // 2 + 1)

    @property
    def physical_shape(self):
        return (3, self.n, self.n, self.n)

    @property
    def cell_volume(self):
        return (TWO_PI / self.n) ** 3

    @property
    def kvec(self):
        return (self.kx, self.ky, self.kz)

    def wavevectors(self):
        """All ``n**3`` integer triples in ``[-n/2, n/2)``, C-ordered."""
        k = np.fft.fftfreq(self.n, 1.0 / self.n).astype(np.int64)
        return np.stack(np.meshgrid(k, k, k, indexing="ij"), axis=-1).reshape(-1, 3)

    def full_dealias_mask(self):
        """Two-thirds rule mask over the full lattice, aligned with ``wavevectors``."""
        return np.all(3 * np.abs(self.wavevectors()) < self.n, axis=1)

    def index(self, k):
        """Half-spectrum index of wavevector ``k`` and whether it is stored conjugated."""
        k = [int(c) for c in k]
        n = self.n
        if any(c < -n // 2 or c >= n // 2 for c in k):
            raise IndexError(f"wavevector {k} outside the grid")
        conj = k[2] < 0
        if conj:
            k = [-c for c in k]
        return (k[0] % n, k[1] % n, k[2]), conj

    def __repr__(self):
        return f"Grid(n={self.n})"


@functools.lru_cache(maxsize=None)
def make_grid(n):
    """Build the grid for ``n`` points per direction (``n`` even, ``n >= 4``)."""
    if not isinstance(n, (int, np.integer)) or n < 4 or n % 2:
        raise InvalidGridError(f"modes_per_dim must be an even integer >= 4, got {n!r}")
    n = int(n)
    k = np.fft.fftfreq(n, 1.0 / n)
    kz1 = np.arange(n // 2 + 1, dtype=float)
    kx = k.reshape(n, 1, 1)
    ky = k.reshape(1, n, 1)
    kz = kz1.reshape(1, 1, -1)
    k2 = kx ** 2 + ky ** 2 + kz ** 2
    inv_k2 = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    absmax = np.maximum(np.maximum(np.abs(kx), np.abs(ky)), np.abs(kz))
    # strict 3|k| < n: when 3 divides n the boundary shell |k_i| = n/3 would let
    # cubic products alias onto the mean and break energy neutrality
    dealias = 3.0 * absmax < n
    nyq = (np.abs(kx) == n // 2) | (np.abs(ky) == n // 2) | (kz == n // 2)
    retained = ~nyq & (k2 > 0)
    weights = np.where((kz1 > 0) & (kz1 < n // 2), 2.0, 1.0).reshape(1, 1, -1)
    active = dealias & retained
    arrays = [kx, ky, kz, k2, inv_k2, dealias, retained, weights, active]
    for a in arrays:
        a.setflags(write=False)
    return Grid(n, *arrays)


def _check_same_grid(u, v):
    if u.grid.n != v.grid.n:
        raise GridMismatchError(f"grid mismatch: n={u.grid.n} vs n={v.grid.n}")


def to_physical(coeffs, grid):
    return scipy.fft.irfftn(coeffs, s=(grid.n,) * 3, axes=(-3, -2, -1),
                            norm="forward", workers=_fft_workers)


def to_spectral(values):
    return scipy.fft.rfftn(values, axes=(-3, -2, -1), norm="forward",
                           workers=_fft_workers)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable velocity field in half-spectrum Fourier coefficients."""

    coeffs: np.ndarray
    grid: Grid

    def __post_init__(self):
        if self.coeffs.shape != self.grid.spectral_shape:
            raise ValueError(f"coefficient shape {self.coeffs.shape} does not match "
                             f"{self.grid.spectral_shape}")
        if self.coeffs.dtype != np.complex128:
            object.__setattr__(self, "coeffs", self.coeffs.astype(np.complex128))
        self.coeffs.setflags(write=False)

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros(grid.spectral_shape, dtype=np.complex128), grid)

    @classmethod
    def from_physical(cls, values, grid):
        """Transform a real ``(3, n, n, n)`` array; drops the mean and Nyquist modes."""
        c = to_spectral(np.asarray(values, dtype=float))
        c *= grid.retained
        return cls(c, grid)

    @classmethod
    def from_coefficients(cls, coeffs, grid):
        """Wrap arbitrary half-spectrum coefficients, keeping only their real-field part."""
        c = to_spectral(to_physical(np.asarray(coeffs, dtype=np.complex128), grid))
        c *= grid.retained
        return cls(c, grid)

    def physical(self):
        return to_physical(self.coeffs, self.grid)

    def __add__(self, other):
        _check_same_grid(self, other)
        return SpectralField(self.coeffs + other.coeffs, self.grid)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return SpectralField(self.coeffs - other.coeffs, self.grid)

    def __mul__(self, scalar):
        return SpectralField(self.coeffs * float(scalar), self.grid)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(-self.coeffs, self.grid)

    def divergence_residual(self):
        """``max_k |k . c(k)|`` over the stored half-spectrum."""
        kx, ky, kz = self.grid.kvec
        c = self.coeffs
        return float(np.abs(kx * c[0] + ky * c[1] + kz * c[2]).max())

    def is_divergence_free(self, rtol=1e-10):
        scale = float((np.sqrt(self.grid.k2) * np.abs(self.coeffs)).max())
        return self.divergence_residual() <= rtol * max(scale, 1e-300)

    def bitwise_equal(self, other):
        return self.grid.n == other.grid.n and np.array_equal(self.coeffs, other.coeffs)


# ---------------------------------------------------------------------------
# projections and norms
# ---------------------------------------------------------------------------

def _leray(c, grid):
    kx, ky, kz = grid.kvec
    kdotc = (kx * c[0] + ky * c[1] + kz * c[2]) * grid.inv_k2
    out = np.empty_like(c)
    out[0] = c[0] - kx * kdotc
    out[1] = c[1] - ky * kdotc
    out[2] = c[2] - kz * kdotc
    return out


def leray_project(v):
    """Orthogonal projection onto divergence-free fields: ``c - k (k.c)/|k|^2``."""
    return SpectralField(_leray(v.coeffs, v.grid), v.grid)


def _weighted_sum(a, grid):
    return VOLUME * float(np.sum(grid.weights * a))


def inner_product(u, v):
    _check_same_grid(u, v)
    prod = u.coeffs.real * v.coeffs.real + u.coeffs.imag * v.coeffs.imag
    return _weighted_sum(prod.sum(axis=0), u.grid)


@functools.lru_cache(maxsize=64)
def _multiplier(n, alpha):
    grid = make_grid(n)
    k2 = grid.k2
    m = np.where(k2 > 0, np.where(k2 > 0, k2, 1.0) ** (2.0 * alpha), 0.0)
    m.setflags(write=False)
    return m


def fractional_norm(u, alpha):
    """Norm of ``A^alpha u``, i.e. ``(sum |k|^(4 alpha) |c(k)|^2 (2 pi)^3)^(1/2)``.

    ``alpha = 0`` is the L^2 norm, ``alpha = 1/2`` the gradient norm and
    ``alpha = -1/2`` the dual-space norm used as the weak metric.
    """
    mag2 = (u.coeffs.real ** 2 + u.coeffs.imag ** 2).sum(axis=0)
    return float(np.sqrt(_weighted_sum(_multiplier(u.grid.n, float(alpha)) * mag2, u.grid)))


def norm_H(u):
    return fractional_norm(u, 0.0)


def l4_norm_from_physical(values, grid):
    s, _ = kernels.l4_sum_and_max(values)
    return (s * grid.cell_volume) ** 0.25


def l4_norm(u):
    """L^4 norm by collocation quadrature on the ``n**3`` grid."""
    return l4_norm_from_physical(u.physical(), u.grid)


# ---------------------------------------------------------------------------
# quadratic term
# ---------------------------------------------------------------------------

def _divergence_of_products(prods_hat, grid):
    return kernels.projected_divergence(prods_hat, grid.kx, grid.ky, grid.kz, grid.inv_k2,
                                        grid.active_mask)


def convective_term(coeffs, grid):
    """``P div(u u)`` from coefficients, with the by-products of the physical pass.

    Returns ``(term_coeffs, l4_norm, max|u|)``.
    """
    u = to_physical(coeffs, grid)
    s, qmax = kernels.l4_sum_and_max(u)
    prods = to_spectral(kernels.tensor_products(u))
    term = _divergence_of_products(prods, grid)
    return term, (s * grid.cell_volume) ** 0.25, float(np.sqrt(qmax))


def tensor_divergence(u, check=True):
    """Dealiased, projected ``P div(u (x) u)``."""
    if check and not u.is_divergence_free():
        raise ContractViolation("tensor_divergence requires a divergence-free field "
                                f"(max |k.c| = {u.divergence_residual():.3e})")
    term, _, _ = convective_term(u.coeffs, u.grid)
    return SpectralField(term, u.grid)


def _gradient_physical(u):
    grid = u.grid
    grads = np.empty((3, 3) + (grid.n,) * 3)
    for j, kj in enumerate(grid.kvec):
        grads[:, j] = to_physical(1j * kj * u.coeffs, grid)
    return grads  # grads[i, j] = d_j u_i


def advective_pairing(u, phi):
    """``int ((u . grad) u) . phi`` by pointwise collocation."""
    _check_same_grid(u, phi)
    uu = u.physical()
    du = _gradient_physical(u)
    pp = phi.physical()
    adv = np.einsum("jxyz,ijxyz->ixyz", uu, du)
    return float(np.sum(adv * pp)) * u.grid.cell_volume


def divergence_pairing(u, phi):
    """``int (u (x) u) : grad phi`` by pointwise collocation."""
    _check_same_grid(u, phi)
    uu = u.physical()
    dphi = _gradient_physical(phi)
    return float(np.einsum("ixyz,jxyz,ijxyz->", uu, uu, dphi)) * u.grid.cell_volume


# ---------------------------------------------------------------------------
# field constructors
# ---------------------------------------------------------------------------

def physical_coordinates(grid):
    x = np.arange(grid.n) * (TWO_PI / grid.n)
    return np.meshgrid(x, x, x, indexing="ij")


def shear_field(grid, amplitude=1.0):
    """``u(x) = (amplitude * sin x_2, 0, 0)``."""
    _, x2, _ = physical_coordinates(grid)
    vals = np.zeros(grid.physical_shape)
    vals[0] = amplitude * np.sin(x2)
    return SpectralField.from_physical(vals, grid)


def mode_pair(grid, k, vec):
    """Field with coefficient ``vec`` at ``k`` and ``conj(vec)`` at ``-k``."""
    k = np.asarray(k, dtype=int)
    vec = np.asarray(vec, dtype=np.complex128)
    if not np.any(k):
        raise ValueError("the mean mode carries no field")
    c = np.zeros(grid.spectral_shape, dtype=np.complex128)
    n = grid.n
    if k[2] < 0 or (k[2] == 0 and (k[1] < 0 or (k[1] == 0 and k[0] < 0))):
        k, vec = -k, vec.conj()
    c[:, k[0] % n, k[1] % n, k[2]] += vec
    if k[2] == 0:
        c[:, (-k[0]) % n, (-k[1]) % n, 0] += vec.conj()
    c *= grid.retained
    return SpectralField(c, grid)


def scale_to_norm(u, target):
    h = norm_H(u)
    if h == 0.0:
        return u
    return u * (target / h)


def random_field(grid, rng, exponent=0.0, norm=None, dealias=True, project=True):
    """Random real field with coefficient magnitudes ``~ |k|^-exponent``.

    Phases are uniform; the result is Leray projected (unless ``project`` is
    false) and rescaled to ``norm`` in L^2 when given.
    """
    shape = grid.spectral_shape
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    amp = np.where(grid.k2 > 0, np.where(grid.k2 > 0, grid.k2, 1.0) ** (-0.5 * exponent), 0.0)
    c *= amp
    if dealias:
        c *= grid.dealias_mask
    u = SpectralField.from_coefficients(c, grid)
    if project:
        u = leray_project(u)
    if norm is not None:
        u = scale_to_norm(u, norm)
    return u


# ---------------------------------------------------------------------------
# embedding constants
# ---------------------------------------------------------------------------

def embedding_constant_bound(grid):
    """Rigorous ``k`` with ``||u||_{L^4} <= k ||u||_{H_{3/8}}`` on this grid.

    Hausdorff-Young plus Hoelder against ``|k|^{-3/4}`` in ``l^4``:
    ``k = |Omega|^{-1/4} (sum_{k != 0} |k|^{-3})^{1/4}`` summed over retained modes.
    """
    k2 = grid.k2
    mask = grid.retained
    s = float(np.sum(grid.weights * np.where(mask, np.where(mask, k2, 1.0) ** -1.5, 0.0)))
    return VOLUME ** -0.25 * s ** 0.25


def embedding_ratio(u):
    h = fractional_norm(u, 0.375)
    return 0.0 if h == 0.0 else l4_norm(u) / h


# ---------------------------------------------------------------------------
# snapshot files
# ---------------------------------------------------------------------------

SNAPSHOT_MAGIC = b"GMNSEFLD"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<8sIIQ")


def snapshot_bytes(u):
    """Serialise a field.

    Layout: ``magic (8 bytes) | version u32 | n u32 | mode count u64`` then, for
    component 0, 1, 2 in turn, every half-spectrum mode in C order of
    ``(k_x index, k_y index, k_z)`` as little-endian float64 ``(re, im)``.
    Index ``i`` along x/y maps to wavenumber ``i`` for ``i < n/2`` and ``i - n``
    otherwise; ``k_z`` runs ``0 .. n/2``. Mode count is ``n * n * (n/2 + 1)``.
    """
    n = u.grid.n
    count = n * n * (n // 2 + 1)
    header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, n, count)
    return header + np.ascontiguousarray(u.coeffs).astype("<c16").tobytes()


def snapshot_from_bytes(data):
    magic, version, n, count = _HEADER.unpack_from(data, 0)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError("not a field snapshot")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    grid = make_grid(n)
    if count != n * n * (n // 2 + 1):
        raise ValueError("mode count does not match n")
    body = np.frombuffer(data, dtype="<c16", offset=_HEADER.size)
    if body.size != 3 * count:
        raise ValueError("truncated snapshot")
    return SpectralField(body.astype(np.complex128).reshape(grid.spectral_shape), grid)


def write_snapshot(path, u):
    with open(path, "wb") as fh:
        fh.write(snapshot_bytes(u))


def read_snapshot(path):
    with open(path, "rb") as fh:
        return snapshot_from_bytes(fh.read())


# ---------------------------------------------------------------------------
# identity sweep
# ---------------------------------------------------------------------------

def spectral_identity_check(pairs, grid, seed):
    """Leray idempotence, divergence annihilation, convective neutrality and
    the advective/divergence-form identity on random fields.

    Each pair draws an arbitrary (unprojected) field ``v`` and divergence-free
    ``u``, ``phi``.
    """
    from .report import CheckReport

    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    rng = np.random.default_rng(seed)
    worst = {"idempotence": 0.0, "divergence": 0.0, "neutrality": 0.0, "identity": 0.0}
    limits = {"idempotence": 1e-14, "divergence": 1e-12, "neutrality": 1e-10, "identity": 1e-10}
    failures = []
    for i in range(pairs):
        v = random_field(grid, rng, exponent=rng.uniform(0, 2), project=False,
                         norm=10.0 ** rng.uniform(-1, 1))
        pv = leray_project(v)
        ppv = leray_project(pv)
        hv = norm_H(pv)
        u = random_field(grid, rng, exponent=rng.uniform(0, 2), norm=10.0 ** rng.uniform(-1, 1))
        phi = random_field(grid, rng, exponent=rng.uniform(0, 2), norm=1.0)
        l4 = l4_norm(u)
        hu, vu = norm_H(u), fractional_norm(u, 0.5)
        vals = {
            "idempotence": float(np.abs(ppv.coeffs - pv.coeffs).max() / np.abs(pv.coeffs).max()),
            "divergence": pv.divergence_residual() / hv,
            "neutrality": abs(inner_product(tensor_divergence(u), u)) / (vu ** 2 * hu),
            "identity": abs(advective_pairing(u, phi) + divergence_pairing(u, phi))
            / (fractional_norm(phi, 0.5) * l4 ** 2),
        }
        for key, val in vals.items():
            worst[key] = max(worst[key], val)
            if val > limits[key]:
                failures.append({"pair": i, "check": key, "value": val})
    return CheckReport(
        name="spectral_identities",
        passed=not failures,
        metrics={"pairs": pairs, "n": grid.n, **{f"max_{k}": v for k, v in worst.items()}},
        failures=failures,
        reference="P P = P; k.Pv = 0; <P div(uu), u> = 0; "
                  "<(u.grad)u, phi> = -<u(x)u, grad phi>",
    )
