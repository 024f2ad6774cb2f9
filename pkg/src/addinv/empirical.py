"""Marginal distribution transforms and kernel density estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import EPANECHNIKOV, SmoothingKernel


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observations ``(X_k, Y_k)``; ``X`` has shape ``(N, d)``."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        Y = np.array(self.Y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValueError("X must be an (N, d) array")
        if Y.shape[:1] != X.shape[:1]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if X.shape[0] < 2:
            raise ValueError("need at least two observations")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("observations must be finite")
        X.flags.writeable = False
        Y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def column(self, j: int) -> np.ndarray:
        if not 0 <= j < self.dim:
            raise IndexError(f"axis {j} out of range for d={self.dim}")
        return self.X[:, j]


@dataclass(frozen=True, eq=False)
class TransformedDataset:
    """Predictors mapped to the unit cube by their marginal ECDFs."""

    Z: np.ndarray
    source: Dataset

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def dim(self) -> int:
        return self.Z.shape[1]


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    grid: np.ndarray
    values: np.ndarray
    bandwidth: float

    def mass(self) -> float:
        return float(np.trapezoid(self.values, self.grid))


def unit_grid(n_points: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_points)


def trapezoid_weights(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    dx = np.diff(grid)
    q = np.zeros_like(grid)
    q[:-1] += dx / 2
    q[1:] += dx / 2
    return q


def ecdf_values(column, x) -> np.ndarray:
    """``#{m : column_m <= x} / (N + 1)`` for each entry of ``x``."""
    srt = np.sort(np.asarray(column, dtype=float))
    return np.searchsorted(srt, np.asarray(x, dtype=float), side="right") / (srt.size + 1.0)


def ecdf_transform(data: Dataset) -> TransformedDataset:
    Z = np.column_stack([ecdf_values(data.X[:, j], data.X[:, j]) for j in range(data.dim)])
    Z.flags.writeable = False
    return TransformedDataset(Z=Z, source=data)


def empirical_quantile(data: Dataset, j: int, u):
    """Map a probability back to an observation of column ``j``.

    Inverts ``ecdf_transform``: probabilities in ``[m/(N+1), (m+1)/(N+1))``
    go to the ``m``-th order statistic, clamped to the sample range.
    """
    u_arr = np.asarray(u, dtype=float)
    if np.any((u_arr <= 0) | (u_arr >= 1)):
        raise ValueError("u must lie in (0, 1)")
    srt = np.sort(data.column(j))
    n = srt.size
    # tolerate representation error right at a jump, e.g. 0.5 * 4
    idx = np.floor(u_arr * (n + 1) + 1e-9).astype(int)
    out = srt[np.clip(idx, 1, n) - 1]
    return out if np.ndim(u) else float(out)


def normal_reference_bandwidth(column) -> float:
    column = np.asarray(column, dtype=float)
    return 1.06 * float(np.std(column, ddof=1)) * column.size ** (-0.2)


def kde_marginal(data: Dataset, j: int, h_dj: float, x, kernel: SmoothingKernel = EPANECHNIKOV):
    """Kernel density estimate of the ``j``-th predictor on the real line."""
    return kde_values(data.column(j), h_dj, x, kernel)


def kde_values(column, h: float, x, kernel: SmoothingKernel = EPANECHNIKOV):
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    column = np.asarray(column, dtype=float)
    x_arr = np.asarray(x, dtype=float)
    flat = x_arr.reshape(-1)
    out = np.empty(flat.shape)
    # chunked to bound the (n_eval, N) kernel matrix
    for start in range(0, flat.size, 2048):
        u = (column[None, :] - flat[start:start + 2048, None]) / h
        out[start:start + 2048] = kernel(u).sum(axis=1)
    out /= column.size * h
    return out.reshape(x_arr.shape) if x_arr.ndim else float(out[0])


def unit_kernel_matrix(z, centers, h: float, kernel: SmoothingKernel = EPANECHNIKOV) -> np.ndarray:
    """Boundary-renormalised kernel weights on ``[0, 1]``.

    Entry ``[a, k]`` is ``L((z_a - c_k)/h) / h`` divided by the mass that
    kernel bump keeps inside the unit interval, so every column integrates
    to one over ``z``.
    """
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    z = np.asarray(z, dtype=float)
    if np.any((z < 0) | (z > 1)):
        raise ValueError("evaluation points must lie in [0, 1]")
    centers = np.asarray(centers, dtype=float)
    inside = kernel.cdf((1.0 - centers) / h) - kernel.cdf(-centers / h)
    return kernel((z[:, None] - centers[None, :]) / h) / (h * inside[None, :])


def kde_unit_marginal(Z: TransformedDataset, j: int, h_B: float, z):
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    out = unit_kernel_matrix(z_arr, Z.Z[:, j], h_B).mean(axis=1)
    return out if np.ndim(z) else float(out[0])


def kde_unit_joint(Z: TransformedDataset, j: int, k: int, h_B: float, z_j, z_k):
    """Product-kernel estimate of the ``(j, k)`` density at paired points."""
    if j == k:
        raise ValueError("joint density needs two distinct axes")
    zj, zk = np.broadcast_arrays(np.asarray(z_j, dtype=float), np.asarray(z_k, dtype=float))
    A = unit_kernel_matrix(zj.ravel(), Z.Z[:, j], h_B)
    B = unit_kernel_matrix(zk.ravel(), Z.Z[:, k], h_B)
    out = (A * B).mean(axis=1).reshape(zj.shape)
    return out if out.ndim else float(out)


def kde_unit_joint_grid(Z: TransformedDataset, j: int, k: int, h_B: float, grid) -> np.ndarray:
    """``p_jk`` tabulated on ``grid x grid``; rows index ``z_j``."""
    if j == k:
        raise ValueError("joint density needs two distinct axes")
    A = unit_kernel_matrix(grid, Z.Z[:, j], h_B)
    B = unit_kernel_matrix(grid, Z.Z[:, k], h_B)
    return A @ B.T / Z.n


def marginal_over_j(Z: TransformedDataset, j: int, k: int, h_B: float, z_k, grid=None):
    """``p_{k,[j+]}``: the ``z_j``-integral of ``p_jk`` over that of ``p_j``."""
    if j == k:
        raise ValueError("joint density needs two distinct axes")
    grid = unit_grid() if grid is None else np.asarray(grid, dtype=float)
    q = trapezoid_weights(grid)
    zk = np.atleast_1d(np.asarray(z_k, dtype=float))
    A = unit_kernel_matrix(grid, Z.Z[:, j], h_B)
    B = unit_kernel_matrix(zk, Z.Z[:, k], h_B)
    mass_j = float(q @ A.mean(axis=1))
    if mass_j < 1e-12:
        raise ValueError("degenerate marginal density mass")
    out = B @ (q @ A) / Z.n / mass_j
    return out if np.ndim(z_k) else float(out[0])
