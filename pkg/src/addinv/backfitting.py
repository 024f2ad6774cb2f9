"""Smooth backfitting of additive components on the unit cube.

All curves live on one shared grid in ``[0, 1]`` and every inner integral is
a trapezoid sum on that grid.  Responses may carry extra trailing columns;
each column is fitted independently by the same linear operator, which is
how the leave-one-out smoother diagonal is obtained in one pass.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .empirical import (
    Dataset,
    TransformedDataset,
    ecdf_values,
    trapezoid_weights,
    unit_grid,
    unit_kernel_matrix,
)
from .kernels import EPANECHNIKOV

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CurveOnGrid:
    grid: np.ndarray
    values: np.ndarray

    def __call__(self, x):
        return np.interp(x, self.grid, self.values)


@dataclass(frozen=True, eq=False)
class BackfitConfig:
    """Settings for the backfitting iteration.

    The iteration stops once the sup-norm change of all components drops
    below ``tolerance * (1 + max|Y|)``.
    """

    h_B: float
    max_iterations: int = 100
    tolerance: float = 1e-8
    grid: np.ndarray = field(default_factory=unit_grid)

    def __post_init__(self):
        if not self.h_B > 0:
            raise ValueError("h_B must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=float))


@dataclass(frozen=True, eq=False)
class BackfitEstimates:
    """Data-side quantities that stay fixed across sweeps.

    ``nw[j]`` is the marginal Nadaraya-Watson curve, ``density[j]`` the
    boundary corrected marginal density, ``cross[j][k]`` the matrix turning
    component ``k`` into its contribution to the update of ``j`` and
    ``centering[j]`` the constant subtracted from ``nw[j]``.
    """

    grid: np.ndarray
    nw: np.ndarray
    density: np.ndarray
    cross: list
    centering: np.ndarray
    intercept: np.ndarray

    @property
    def dim(self) -> int:
        return self.nw.shape[0]


@dataclass(frozen=True, eq=False)
class BackfitResult:
    intercept: np.ndarray
    grid: np.ndarray
    components: np.ndarray
    iterations: int
    final_change: float
    converged: bool
    history: tuple
    residual: float
    estimates: BackfitEstimates = field(repr=False)
    config: BackfitConfig = field(repr=False)

    @property
    def dim(self) -> int:
        return self.components.shape[0]

    def curve(self, j: int, column: int | None = None) -> CurveOnGrid:
        values = self.components[j]
        if values.ndim > 1:
            values = values[:, 0 if column is None else column]
        return CurveOnGrid(self.grid, values)


def _as_columns(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    return Y[:, None] if Y.ndim == 1 else Y


def _nw_matrix(grid, centers, h_B):
    return EPANECHNIKOV((centers[None, :] - grid[:, None]) / h_B)


def nadaraya_watson(Z: TransformedDataset, Y, j: int, h_B: float, z):
    """Kernel weighted average of ``Y`` around ``z`` along axis ``j``."""
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    W = _nw_matrix(z_arr, Z.Z[:, j], h_B)
    denom = W.sum(axis=1)
    if np.any(denom <= 0):
        raise ValueError(f"no observation within h_B={h_B} of some evaluation point; bandwidth too small")
    out = W @ np.asarray(Y, dtype=float) / denom
    return out if np.ndim(z) else float(out[0])


def centering_constant(g_values, p_values, grid) -> float:
    q = trapezoid_weights(grid)
    p_values = np.asarray(p_values, dtype=float)
    return float(q @ (np.asarray(g_values, dtype=float) * p_values) / (q @ p_values))


def precompute_estimates(Z: TransformedDataset, Y, config: BackfitConfig) -> BackfitEstimates:
    Ycols = _as_columns(Y)
    Zmat = Z.Z
    # canonical row order makes every sum independent of the input order
    order = np.lexsort(tuple(Ycols.T[::-1]) + tuple(Zmat.T[::-1]))
    Zmat, Ycols = Zmat[order], Ycols[order]
    n, d = Zmat.shape
    grid = config.grid
    q = trapezoid_weights(grid)
    intercept = Ycols.mean(axis=0)

    nw = np.empty((d, grid.size, Ycols.shape[1]))
    density = np.empty((d, grid.size))
    unit = []
    for j in range(d):
        W = _nw_matrix(grid, Zmat[:, j], config.h_B)
        denom = W.sum(axis=1)
        empty = denom <= 0
        with np.errstate(invalid="ignore", divide="ignore"):
            nw[j] = (W @ Ycols) / denom[:, None]
        if np.any(empty):
            logger.warning("axis %d: %d grid points have no observation within h_B=%g; using the intercept",
                           j, int(empty.sum()), config.h_B)
            nw[j][empty] = intercept
        A = unit_kernel_matrix(grid, Zmat[:, j], config.h_B)
        unit.append(A)
        density[j] = A.mean(axis=1)
        if np.any(density[j] < 1e-12):
            raise ValueError(f"axis {j}: estimated density vanishes on the grid (degenerate design)")

    mass = density @ q
    # each renormalised bump has unit mass, so only grid quadrature error remains
    if np.any(np.abs(mass - 1.0) > 1e-2):
        logger.warning("density mass on the grid is %s; the grid is too coarse for h_B=%g", mass, config.h_B)
    centering = np.stack([(q * density[j]) @ nw[j] / mass[j] for j in range(d)])

    cross = [[None] * d for _ in range(d)]
    for j in range(d):
        for k in range(d):
            if j == k:
                continue
            joint = unit[j] @ unit[k].T / n
            marg = (q @ joint) / mass[j]
            cross[j][k] = (joint / density[j][:, None] - marg[None, :]) * q[None, :]
    return BackfitEstimates(grid=grid, nw=nw, density=density, cross=cross,
                            centering=centering, intercept=intercept)


def _update(j, curves, est):
    new = est.nw[j] - est.centering[j]
    for k in range(est.dim):
        if k != j:
            new = new - est.cross[j][k] @ curves[k]
    return new


def backfit_sweep(curves: np.ndarray, est: BackfitEstimates) -> np.ndarray:
    """One Gauss-Seidel pass over the components in ascending order."""
    curves = np.array(curves, dtype=float, copy=True)
    for j in range(est.dim):
        curves[j] = _update(j, curves, est)
    return curves


def fixed_point_residual(curves: np.ndarray, est: BackfitEstimates) -> float:
    curves = np.asarray(curves, dtype=float)
    return float(max(np.max(np.abs(curves[j] - _update(j, curves, est))) for j in range(est.dim)))


def backfit(Z: TransformedDataset, Y, config: BackfitConfig) -> BackfitResult:
    Y = np.asarray(Y, dtype=float)
    est = precompute_estimates(Z, Y, config)
    curves = np.zeros_like(est.nw)
    threshold = config.tolerance * (1.0 + float(np.max(np.abs(Y))))
    history = []
    converged = False
    for _ in range(config.max_iterations):
        new = backfit_sweep(curves, est)
        change = float(np.max(np.abs(new - curves)))
        curves = new
        history.append(change)
        if change < threshold:
            converged = True
            break
    if not converged:
        logger.warning("backfitting stopped after %d sweeps with change %.3g", len(history), history[-1])
    if Y.ndim == 1:
        curves = curves[..., 0]
        intercept = est.intercept[0]
    else:
        intercept = est.intercept
    residual = fixed_point_residual(curves if Y.ndim > 1 else curves[..., None], est)
    return BackfitResult(intercept=intercept, grid=config.grid, components=curves,
                         iterations=len(history), final_change=history[-1], converged=converged,
                         history=tuple(history), residual=residual, estimates=est, config=config)


def compose_with_ecdf(result: BackfitResult, data: Dataset, j: int, x):
    """Component ``j`` on the original predictor scale."""
    u = ecdf_values(data.column(j), x)
    values = result.components[j]
    if values.ndim == 1:
        return np.interp(u, result.grid, values)
    return np.stack([np.interp(u, result.grid, values[:, c]) for c in range(values.shape[1])], axis=-1)


def fitted_values(result: BackfitResult, Z: TransformedDataset) -> np.ndarray:
    """Additive fit at the observed unit-cube points."""
    out = np.asarray(result.intercept, dtype=float)
    total = 0.0
    for j in range(result.dim):
        values = result.components[j]
        if values.ndim == 1:
            total = total + np.interp(Z.Z[:, j], result.grid, values)
        else:
            total = total + np.stack([np.interp(Z.Z[:, j], result.grid, values[:, c])
                                      for c in range(values.shape[1])], axis=-1)
    return out + total
