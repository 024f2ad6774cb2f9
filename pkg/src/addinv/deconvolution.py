"""Fourier inversion of backfitted components and their variance.

Integrals over frequency are taken in the rescaled variable ``v = h w`` on
``[-1, 1]`` (the support of ``phi_K``) with a composite Simpson rule whose
nodes are exactly symmetric about zero, so imaginary parts cancel up to
rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .backfitting import BackfitResult, compose_with_ecdf
from .empirical import Dataset
from .kernels import SINC, ConvolutionFamily, DeconvKernel, simpson_rule

_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class DeconvConfig:
    """Bandwidth ``h``, truncation level ``a_N`` and quadrature size."""

    h: float
    a_N: float = 0.5
    kernel: DeconvKernel = SINC
    n_panels: int = 2048

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not self.a_N > 0:
            raise ValueError("a_N must be positive")

    @property
    def edge(self) -> float:
        """Point ``1 / a_N`` where the density floor is read off."""
        return 1.0 / self.a_N


@dataclass(frozen=True, eq=False)
class ComponentEstimate:
    axis: int
    grid: np.ndarray
    values: np.ndarray
    imag: np.ndarray
    variance: np.ndarray | None = None
    band: tuple | None = field(default=None)

    def __call__(self, x):
        return np.interp(x, self.grid, self.values)


def frequency_rule(n_panels: int = 2048):
    v, q = simpson_rule(-1.0, 1.0, n_panels)
    return 0.5 * (v - v[::-1]), q


def inverse_filter(fam: ConvolutionFamily, j: int, config: DeconvConfig, v) -> np.ndarray:
    """``phi_K(v) / phi_psi_j(v / h)``."""
    return config.kernel.fourier(v) / fam.fourier(j, np.asarray(v) / config.h)


def residuals(data: Dataset, fit: BackfitResult, j: int) -> np.ndarray:
    """Responses with the intercept and all other fitted components removed."""
    U = np.array(data.Y, dtype=float) - fit.intercept
    for i in range(data.dim):
        if i != j:
            U = U - compose_with_ecdf(fit, data, i, data.X[:, i])
    return U


def truncated_density_weight(f_value, f_edge):
    f_value = np.asarray(f_value, dtype=float)
    floor = np.maximum(f_value, f_edge)
    if np.any(floor <= 0):
        raise ValueError("density and its truncation level are both non-positive")
    out = 1.0 / floor
    return out if out.ndim else float(out)


def density_weights(X_j, density, config: DeconvConfig) -> np.ndarray:
    """Truncated inverse-density weights ``1 / max(f(X_k), f(1/a_N))``."""
    return truncated_density_weight(density(np.asarray(X_j, dtype=float)), float(density(config.edge)))


def empirical_fourier_g(X_j, U, weights, w) -> np.ndarray:
    """``(1/N) sum_k exp(i w X_k) U_k weights_k`` at each frequency in ``w``."""
    X_j = np.asarray(X_j, dtype=float)
    coef = np.asarray(U, dtype=float) * np.asarray(weights, dtype=float)
    w_arr = np.atleast_1d(np.asarray(w, dtype=float))
    out = np.zeros(w_arr.shape, dtype=complex)
    for start in range(0, X_j.size, _CHUNK):
        sl = slice(start, start + _CHUNK)
        out += np.exp(1j * np.multiply.outer(w_arr, X_j[sl])) @ coef[sl]
    out /= X_j.size
    return out if np.ndim(w) else complex(out[0])


def invert_component(X_j, U, weights, fam: ConvolutionFamily, j: int, config: DeconvConfig, x,
                     return_imag: bool = False):
    """Smoothed Fourier inversion of the weighted residual transform.

    Returns the real part; with ``return_imag`` the imaginary part of the
    quadrature is returned as well.
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    v, q = frequency_rule(config.n_panels)
    phi_g = empirical_fourier_g(X_j, U, weights, v / config.h)
    integrand = q * inverse_filter(fam, j, config, v) * phi_g
    value = np.exp(-1j * np.multiply.outer(x_arr, v / config.h)) @ integrand / (2 * np.pi * config.h)
    real, imag = value.real, value.imag
    if not np.ndim(x):
        real, imag = float(real[0]), float(imag[0])
    return (real, imag) if return_imag else real


def invert_synthetic(phi_g, fam: ConvolutionFamily, j: int, config: DeconvConfig, x):
    """Inversion with a user supplied transform ``phi_g(w)`` in place of the data."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    v, q = frequency_rule(config.n_panels)
    integrand = q * inverse_filter(fam, j, config, v) * phi_g(v / config.h)
    value = np.exp(-1j * np.multiply.outer(x_arr, v / config.h)) @ integrand / (2 * np.pi * config.h)
    return value if np.ndim(x) else complex(value[0])


def deconvolution_kernel(fam: ConvolutionFamily, j: int, config: DeconvConfig, t) -> np.ndarray:
    """``int exp(-i v t) phi_K(v) / phi_psi_j(v / h) dv`` over ``[-1, 1]``.

    Both transforms are even, so the integral is real and is summed as a
    cosine transform over the non-negative half of the symmetric nodes.
    """
    t_arr = np.asarray(t, dtype=float)
    v, q = frequency_rule(config.n_panels)
    half = v.size // 2
    c = q * inverse_filter(fam, j, config, v)
    # fold the mirrored nodes onto v >= 0; the centre node is counted once
    c_half = c[half:].copy()
    c_half[1:] += c[:half][::-1]
    v_half = v[half:]
    flat = t_arr.reshape(-1)
    out = np.empty(flat.shape)
    for start in range(0, flat.size, _CHUNK):
        out[start:start + _CHUNK] = np.cos(np.multiply.outer(flat[start:start + _CHUNK], v_half)) @ c_half
    return out.reshape(t_arr.shape)


def linear_weights(X_j, weights, fam: ConvolutionFamily, j: int, config: DeconvConfig, x) -> np.ndarray:
    """Matrix ``W`` with ``W[a, k] = w_{j,N}(x_a, X_k)``, real part.

    ``W @ U`` reproduces ``invert_component`` for any residual vector ``U``.
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    X_j = np.asarray(X_j, dtype=float)
    v, q = frequency_rule(config.n_panels)
    left = np.exp(-1j * np.multiply.outer(x_arr, v / config.h)) * (q * inverse_filter(fam, j, config, v))
    W = np.empty((x_arr.size, X_j.size))
    for start in range(0, X_j.size, _CHUNK):
        sl = slice(start, start + _CHUNK)
        W[:, sl] = (left @ np.exp(1j * np.multiply.outer(v / config.h, X_j[sl]))).real
    W *= np.asarray(weights, dtype=float)[None, :] / (2 * np.pi * X_j.size * config.h)
    return W if np.ndim(x) else W[0]


def _floor(density, config):
    return float(density(config.edge))


def variance_Vnj(x, fam: ConvolutionFamily, j: int, config: DeconvConfig, density, g, sigma2: float,
                 n: int, support, n_nodes: int = 1000) -> np.ndarray:
    """Asymptotic variance of the component estimator at ``x``.

    ``density`` is the marginal design density, ``g`` the (centred) convolved
    component and ``support`` an interval carrying all of the design mass.
    """
    if sigma2 < 0:
        raise ValueError("noise variance must be non-negative")
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    y, qy = simpson_rule(support[0], support[1], n_nodes)
    fy = density(y)
    weight = (np.asarray(g(y)) ** 2 + sigma2) * fy / np.maximum(fy, _floor(density, config)) ** 2
    k = deconvolution_kernel(fam, j, config, np.subtract.outer(x_arr, y) / config.h)
    out = (k ** 2 @ (qy * weight)) / (n * config.h ** 2 * (2 * np.pi) ** 2)
    return out if np.ndim(x) else float(out[0])


def variance_cross(x_k: float, x_l: float, fam: ConvolutionFamily, k: int, l: int, config: DeconvConfig,
                   joint_density, density_k, density_l, g_k, g_l, sigma2: float, n: int,
                   support_k, support_l, n_nodes: int = 800) -> complex:
    """Covariance term between components ``k`` and ``l`` at ``(x_k, x_l)``.

    ``joint_density(y, z)`` must broadcast over a ``(n_y, n_z)`` mesh.
    """
    if k == l:
        raise ValueError("cross term needs two distinct axes")
    if sigma2 < 0:
        raise ValueError("noise variance must be non-negative")
    y, qy = simpson_rule(support_k[0], support_k[1], n_nodes)
    z, qz = simpson_rule(support_l[0], support_l[1], n_nodes)
    ky = deconvolution_kernel(fam, k, config, (x_k - y) / config.h)
    kz = deconvolution_kernel(fam, l, config, (x_l - z) / config.h)
    fy, fz = density_k(y), density_l(z)
    ay = qy * ky / np.maximum(fy, _floor(density_k, config))
    az = qz * kz / np.maximum(fz, _floor(density_l, config))
    fyz = joint_density(y[:, None], z[None, :])
    mesh = (sigma2 + np.multiply.outer(np.asarray(g_k(y)), np.asarray(g_l(z)))) * fyz
    return complex(ay @ mesh @ az) / (n * config.h ** 2 * (2 * np.pi) ** 2)


def confidence_band(values, variance, alpha: float = 0.05):
    """Pointwise normal-theory band ``values +- z_{1-alpha/2} sqrt(variance)``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    half = stats.norm.ppf(1 - alpha / 2) * np.sqrt(np.asarray(variance, dtype=float))
    values = np.asarray(values, dtype=float)
    return values - half, values + half


def assemble_additive(components, intercept: float, x):
    """``intercept + sum_j theta_j(x_j)`` at points ``x`` of shape ``(..., d)``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != len(components):
        raise ValueError(f"expected {len(components)} coordinates, got {x.shape[-1]}")
    total = np.full(x.shape[:-1], float(intercept))
    for j, comp in enumerate(components):
        total = total + comp(x[..., j])
    return total if total.ndim else float(total)
