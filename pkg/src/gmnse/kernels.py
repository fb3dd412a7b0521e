"""
Hot inner loops.

Every kernel has two implementations: a loop version compiled with numba and a
vectorised numpy version. The public names bind to the numba versions unless
``GMNSE_DISABLE_JIT`` is set (see :mod:`gmnse._jit`). Both are exposed as
``nb_*`` / ``np_*`` so the benchmark and the agreement tests can call each
explicitly.
"""

import numpy as np

from ._jit import JIT_ENABLED, njit

# 8-point Gauss-Legendre rule mapped to [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
GL_NODES = 0.5 * (_GL_X + 1.0)
GL_WEIGHTS = 0.5 * _GL_W

# cells farther than FAR_CELLS cell-widths from the kernel singularity use the
# Gauss rule; closed-form moments cancel badly there
FAR_CELLS = 8.0


# ---------------------------------------------------------------------------
# pointwise velocity kernels
# ---------------------------------------------------------------------------

def np_l4_sum_and_max(u):
    """Return ``(sum |u|^4, max |u|^2)`` over a ``(3, n, n, n)`` real array."""
    q = u[0] * u[0] + u[1] * u[1] + u[2] * u[2]
    return float(np.sum(q * q)), float(q.max())


def _loop_l4_sum_and_max(u):
    n0, n1, n2 = u.shape[1], u.shape[2], u.shape[3]
    acc = 0.0
    qmax = 0.0
    for i in range(n0):
        for j in range(n1):
            for k in range(n2):
                a = u[0, i, j, k]
                b = u[1, i, j, k]
                c = u[2, i, j, k]
                q = a * a + b * b + c * c
                acc += q * q
                if q > qmax:
                    qmax = q
    return acc, qmax


def np_tensor_products(u):
    """Upper-triangle products ``u_i u_j`` ordered 00, 01, 02, 11, 12, 22."""
    out = np.empty((6,) + u.shape[1:], dtype=u.dtype)
    m = 0
    for i in range(3):
        for j in range(i, 3):
            np.multiply(u[i], u[j], out=out[m])
            m += 1
    return out


def _loop_tensor_products(u):
    n0, n1, n2 = u.shape[1], u.shape[2], u.shape[3]
    out = np.empty((6, n0, n1, n2))
    for i in range(n0):
        for j in range(n1):
            for k in range(n2):
                a = u[0, i, j, k]
                b = u[1, i, j, k]
                c = u[2, i, j, k]
                out[0, i, j, k] = a * a
                out[1, i, j, k] = a * b
                out[2, i, j, k] = a * c
                out[3, i, j, k] = b * b
                out[4, i, j, k] = b * c
                out[5, i, j, k] = c * c
    return out


def np_scaled_tensor_diff_sq(u, v, a, b):
    """``sum_x sum_ij (a u_i u_j - b v_i v_j)^2`` (full 3x3 tensor)."""
    acc = 0.0
    for i in range(3):
        for j in range(3):
            d = a * u[i] * u[j] - b * v[i] * v[j]
            acc += float(np.sum(d * d))
    return acc


def _loop_scaled_tensor_diff_sq(u, v, a, b):
    n0, n1, n2 = u.shape[1], u.shape[2], u.shape[3]
    acc = 0.0
    for x in range(n0):
        for y in range(n1):
            for z in range(n2):
                for i in range(3):
                    ui = u[i, x, y, z]
                    vi = v[i, x, y, z]
                    for j in range(3):
                        d = a * ui * u[j, x, y, z] - b * vi * v[j, x, y, z]
                        acc += d * d
    return acc


def np_projected_divergence(prods, kx, ky, kz, inv_k2, mask):
    """Masked, Leray-projected ``i k_j (u_i u_j)^`` from the six product spectra."""
    p00, p01, p02, p11, p12, p22 = prods
    d0 = 1j * (kx * p00 + ky * p01 + kz * p02) * mask
    d1 = 1j * (kx * p01 + ky * p11 + kz * p12) * mask
    d2 = 1j * (kx * p02 + ky * p12 + kz * p22) * mask
    kd = (kx * d0 + ky * d1 + kz * d2) * inv_k2
    return np.stack([d0 - kx * kd, d1 - ky * kd, d2 - kz * kd])


def _loop_projected_divergence(prods, kx, ky, kz, inv_k2, mask):
    n0, n1, n2 = prods.shape[1], prods.shape[2], prods.shape[3]
    out = np.zeros((3, n0, n1, n2), dtype=np.complex128)
    for i in range(n0):
        a = kx[i]
        for j in range(n1):
            b = ky[j]
            for k in range(n2):
                if not mask[i, j, k]:
                    continue
                c = kz[k]
                d0 = 1j * (a * prods[0, i, j, k] + b * prods[1, i, j, k] + c * prods[2, i, j, k])
                d1 = 1j * (a * prods[1, i, j, k] + b * prods[3, i, j, k] + c * prods[4, i, j, k])
                d2 = 1j * (a * prods[2, i, j, k] + b * prods[4, i, j, k] + c * prods[5, i, j, k])
                kd = (a * d0 + b * d1 + c * d2) * inv_k2[i, j, k]
                out[0, i, j, k] = d0 - a * kd
                out[1, i, j, k] = d1 - b * kd
                out[2, i, j, k] = d2 - c * kd
    return out


# ---------------------------------------------------------------------------
# taper sweep
# ---------------------------------------------------------------------------

def np_taper_lipschitz_ratios(s, t, N):
    """Ratios ``|f_N(s) - f_N(t)| / (|s - t| / max(s, t))`` (0 where s == t)."""
    fs = np.where(s > 0, np.minimum(1.0, N / np.where(s > 0, s, 1.0)), 1.0)
    ft = np.where(t > 0, np.minimum(1.0, N / np.where(t > 0, t, 1.0)), 1.0)
    lhs = np.abs(fs - ft)
    rhs = np.abs(s - t) / np.maximum(s, t)
    return np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), 0.0), lhs - rhs


def _loop_taper_lipschitz_ratios(s, t, N):
    m = s.shape[0]
    ratio = np.zeros(m)
    excess = np.zeros(m)
    for i in range(m):
        fs = 1.0 if s[i] <= 0.0 else min(1.0, N[i] / s[i])
        ft = 1.0 if t[i] <= 0.0 else min(1.0, N[i] / t[i])
        lhs = abs(fs - ft)
        rhs = abs(s[i] - t[i]) / max(s[i], t[i])
        if rhs > 0.0:
            ratio[i] = lhs / rhs
        excess[i] = lhs - rhs
    return ratio, excess


# ---------------------------------------------------------------------------
# product-integration weights for (t - s)^(-gamma)
# ---------------------------------------------------------------------------

def np_volterra_weights(t, gamma):
    """Weights ``W`` with ``int_{t_0}^{t_j} (t_j - s)^-gamma r(s) ds = (W r)_j``.

    ``r`` is taken piecewise linear between the mesh nodes ``t``.
    """
    m = t.shape[0]
    g1 = 1.0 - gamma
    g2 = 2.0 - gamma
    tj = t[:, None]
    ti = t[None, :-1]
    tip = t[None, 1:]
    h = tip - ti
    active = np.arange(m - 1)[None, :] < np.arange(m)[:, None]
    d1 = np.where(active, tj - ti, 1.0)
    d0 = np.where(active, np.maximum(tj - tip, 0.0), 0.0)
    far = active & (d0 >= FAR_CELLS * h)

    with np.errstate(divide="ignore", invalid="ignore"):
        i0 = (d1 ** g1 - d0 ** g1) / g1
        i1 = (d1 ** g2 - d0 ** g2) / g2
        wr = (d1 * i0 - i1) / h
        wl = (i1 - d0 * i0) / h

    hf = np.broadcast_to(h, d1.shape)
    gl_r = np.zeros_like(d1)
    gl_l = np.zeros_like(d1)
    for x, w in zip(GL_NODES, GL_WEIGHTS):
        kern = np.where(far, d1 - hf * x, 1.0) ** (-gamma)
        gl_r += w * kern * x
        gl_l += w * kern * (1.0 - x)
    wr = np.where(far, hf * gl_r, wr)
    wl = np.where(far, hf * gl_l, wl)
    wr = np.where(active, wr, 0.0)
    wl = np.where(active, wl, 0.0)

    W = np.zeros((m, m))
    W[:, :-1] += wl
    W[:, 1:] += wr
    return W


def _loop_volterra_weights(t, gamma, gl_nodes, gl_weights):
    m = t.shape[0]
    g1 = 1.0 - gamma
    g2 = 2.0 - gamma
    W = np.zeros((m, m))
    for j in range(1, m):
        for i in range(j):
            h = t[i + 1] - t[i]
            d1 = t[j] - t[i]
            d0 = t[j] - t[i + 1]
            if d0 < 0.0:
                d0 = 0.0
            if d0 >= FAR_CELLS * h:
                sr = 0.0
                sl = 0.0
                for q in range(gl_nodes.shape[0]):
                    x = gl_nodes[q]
                    kern = (d1 - h * x) ** (-gamma)
                    sr += gl_weights[q] * kern * x
                    sl += gl_weights[q] * kern * (1.0 - x)
                wr = h * sr
                wl = h * sl
            else:
                i0 = (d1 ** g1 - d0 ** g1) / g1
                i1 = (d1 ** g2 - d0 ** g2) / g2
                wr = (d1 * i0 - i1) / h
                wl = (i1 - d0 * i0) / h
            W[j, i] += wl
            W[j, i + 1] += wr
    return W


# ---------------------------------------------------------------------------
# binding
# ---------------------------------------------------------------------------

if JIT_ENABLED:
    nb_l4_sum_and_max = njit(cache=True)(_loop_l4_sum_and_max)
    nb_tensor_products = njit(cache=True)(_loop_tensor_products)
    nb_scaled_tensor_diff_sq = njit(cache=True)(_loop_scaled_tensor_diff_sq)
    nb_taper_lipschitz_ratios = njit(cache=True)(_loop_taper_lipschitz_ratios)
    _nb_volterra = njit(cache=True)(_loop_volterra_weights)
    _nb_projected_divergence = njit(cache=True)(_loop_projected_divergence)

    def nb_projected_divergence(prods, kx, ky, kz, inv_k2, mask):
        return _nb_projected_divergence(prods, kx.ravel(), ky.ravel(), kz.ravel(),
                                        inv_k2, mask)

    projected_divergence = nb_projected_divergence

    def nb_volterra_weights(t, gamma):
        return _nb_volterra(np.ascontiguousarray(t, dtype=np.float64), float(gamma),
                            GL_NODES, GL_WEIGHTS)

    def l4_sum_and_max(u):
        return nb_l4_sum_and_max(np.ascontiguousarray(u))

    def tensor_products(u):
        return nb_tensor_products(np.ascontiguousarray(u))

    def scaled_tensor_diff_sq(u, v, a, b):
        return nb_scaled_tensor_diff_sq(np.ascontiguousarray(u), np.ascontiguousarray(v),
                                        float(a), float(b))

    def taper_lipschitz_ratios(s, t, N):
        return nb_taper_lipschitz_ratios(np.ascontiguousarray(s, dtype=np.float64),
                                         np.ascontiguousarray(t, dtype=np.float64),
                                         np.ascontiguousarray(N, dtype=np.float64))

    volterra_weights = nb_volterra_weights
else:
    nb_l4_sum_and_max = nb_tensor_products = nb_scaled_tensor_diff_sq = None
    nb_taper_lipschitz_ratios = nb_volterra_weights = nb_projected_divergence = None

    projected_divergence = np_projected_divergence

    l4_sum_and_max = np_l4_sum_and_max
    tensor_products = np_tensor_products
    scaled_tensor_diff_sq = np_scaled_tensor_diff_sq
    taper_lipschitz_ratios = np_taper_lipschitz_ratios
    volterra_weights = np_volterra_weights


def backend():
    """Name of the active kernel path."""
    return "numba" if JIT_ENABLED else "numpy"


__all__ = [
    "backend",
    "l4_sum_and_max",
    "tensor_products",
    "scaled_tensor_diff_sq",
    "taper_lipschitz_ratios",
    "volterra_weights",
    "projected_divergence",
]
