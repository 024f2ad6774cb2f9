"""Monte Carlo study of the additive inverse regression estimator.

Signals, designs and noise follow the two-dimensional benchmark with a
Laplace product operator (rate 3 on both axes).  Component targets are
identified the same way the estimator identifies them: the truth for
``theta_j`` is ``theta_j - E[g_j(X_j)]``, because backfitting centres every
``g_j`` with respect to the design and leaves the constant in the intercept.
"""

from __future__ import annotations

import functools
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, stats

from .backfitting import backfit, compose_with_ecdf, fitted_values
from .deconvolution import (
    DeconvConfig,
    density_weights,
    frequency_rule,
    invert_component,
    residuals,
)
from .empirical import Dataset, ecdf_transform, kde_values, trapezoid_weights
from .kernels import ConvolutionFamily
from .pipeline import KDEDensity, PipelineConfig, fit_additive_inverse

logger = logging.getLogger(__name__)

THREADS_ENV = "ADDINV_THREADS"
REPLICATE_STREAM = 0
PILOT_STREAM = 1


def _gauss(center):
    return lambda x: np.exp(-(np.asarray(x, dtype=float) - center) ** 2)


def _x_exp_abs(x):
    x = np.asarray(x, dtype=float)
    return x * np.exp(-np.abs(x))


def _exp_abs(x):
    return np.exp(-np.abs(np.asarray(x, dtype=float)))


def _cauchy_like(x):
    x = np.asarray(x, dtype=float)
    return 1.0 / (1.0 + x * x)


# (component functions, points where a component is not smooth)
MODELS = {
    "sig1": ((_gauss(0.4), _gauss(0.1)), ((), ())),
    "sig2": ((_x_exp_abs, _cauchy_like), ((0.0,), ())),
    "sig3": ((_exp_abs, _cauchy_like), ((0.0,), ())),
}

DESIGNS = ("uniform", "correlated-normal")

# published backfitting and marginal-integration IMSE, keyed (model, design, component)
PUBLISHED_BACKFIT = {
    ("sig1", "uniform", 0): 0.00179, ("sig1", "uniform", 1): 0.00154,
    ("sig2", "uniform", 0): 0.00189, ("sig2", "uniform", 1): 0.00258,
    ("sig1", "correlated-normal", 0): 0.00500, ("sig1", "correlated-normal", 1): 0.00488,
    ("sig2", "correlated-normal", 0): 0.00353, ("sig2", "correlated-normal", 1): 0.00345,
}
PUBLISHED_MI = {
    ("sig1", "uniform", 0): 0.00347, ("sig1", "uniform", 1): 0.00311,
    ("sig2", "uniform", 0): 0.00365, ("sig2", "uniform", 1): 0.00354,
    ("sig1", "correlated-normal", 0): 0.02219, ("sig1", "correlated-normal", 1): 0.01917,
    ("sig2", "correlated-normal", 0): 0.00934, ("sig2", "correlated-normal", 1): 0.01092,
}


def _model(model):
    try:
        return MODELS[model]
    except KeyError:
        raise ValueError(f"unknown model {model!r}; expected one of {sorted(MODELS)}") from None


def eval_signal(model: str, x):
    """Component values and their sum at points ``x`` of shape ``(..., 2)``."""
    (t1, t2), _ = _model(model)
    x = np.asarray(x, dtype=float)
    a, b = t1(x[..., 0]), t2(x[..., 1])
    return a, b, a + b


def benchmark_family() -> ConvolutionFamily:
    return ConvolutionFamily.laplace(3.0, 3.0)


def sample_design(design: str, n: int, a_N: float = 0.5, seed=None) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    if design == "uniform":
        return rng.uniform(-1.0 / a_N, 1.0 / a_N, size=(n, 2))
    if design == "correlated-normal":
        r = 1.0 / np.sqrt(2.0)
        cov = np.array([[1.0, r], [r, 1.0]])
        return rng.multivariate_normal(np.zeros(2), cov, size=n, method="cholesky")
    raise ValueError(f"unknown design {design!r}; expected one of {DESIGNS}")


class DesignDensity:
    """Exact marginal density of one design axis."""

    def __init__(self, design: str, a_N: float = 0.5):
        if design not in DESIGNS:
            raise ValueError(f"unknown design {design!r}")
        self.design = design
        self.a_N = a_N

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.design == "uniform":
            edge = 1.0 / self.a_N
            return np.where(np.abs(x) <= edge, 0.5 * self.a_N, 0.0)
        return stats.norm.pdf(x)

    @property
    def support(self):
        if self.design == "uniform":
            return -1.0 / self.a_N, 1.0 / self.a_N
        return -9.0, 9.0


def joint_design_density(design: str, a_N: float = 0.5):
    if design == "uniform":
        f = DesignDensity(design, a_N)
        return lambda y, z: f(y) * f(z)
    r = 1.0 / np.sqrt(2.0)
    mvn = stats.multivariate_normal(np.zeros(2), [[1.0, r], [r, 1.0]])

    def density(y, z):
        y, z = np.broadcast_arrays(y, z)
        return mvn.pdf(np.stack([y, z], axis=-1))

    return density


def convolve_truth(model: str, fam: ConvolutionFamily, j: int, x):
    """``(psi_j * theta_j)(x)`` by adaptive quadrature over ``[x - 30/l, x + 30/l]``."""
    (thetas, kinks) = _model(model)
    theta = thetas[j]
    lam = fam.rates[j]
    span = 30.0 / lam

    def one(x0):
        # integrate over s = x0 - t so that psi's kink sits at s = 0
        pts = sorted({0.0} | {x0 - k for k in kinks[j] if abs(x0 - k) < span})
        val, err = integrate.quad(lambda s: fam.marginal(j, s) * theta(x0 - s), -span, span,
                                  points=pts, limit=500, epsabs=1e-14, epsrel=1e-12)
        if not np.isfinite(val) or err > 1e-8:
            raise ArithmeticError(f"quadrature did not converge at x={x0} (error {err:.2g})")
        return val

    x_arr = np.asarray(x, dtype=float)
    out = np.array([one(float(v)) for v in x_arr.ravel()]).reshape(x_arr.shape)
    return out if out.ndim else float(out)


class ConvolvedComponent:
    """Fast exact evaluation of ``g = psi * theta`` for a Laplace ``psi``.

    Writes ``g(x) = (l/2) [int_{-inf}^x e^{-l(x-t)} theta(t) dt
    + int_x^inf e^{-l(t-x)} theta(t) dt]`` and accumulates both one-sided
    integrals cell by cell with Gauss-Legendre rules.  Non-smooth points of
    ``theta`` must fall on cell boundaries.
    """

    def __init__(self, theta, lam: float, half_width: float = 40.0, step: float = 0.01, order: int = 12):
        self.theta, self.lam = theta, float(lam)
        n_cells = int(round(2 * half_width / step))
        self.nodes = np.linspace(-half_width, half_width, n_cells + 1)
        self.step = 2 * half_width / n_cells
        gx, gw = np.polynomial.legendre.leggauss(order)
        self._gx, self._gw = 0.5 * (gx + 1.0), 0.5 * gw
        a = self.nodes[:-1]
        t = a[:, None] + self.step * self._gx[None, :]
        th = theta(t)
        decay = np.exp(-self.lam * self.step)
        left_cell = self.step * (np.exp(-self.lam * (self.step - self.step * self._gx)) * th) @ self._gw
        right_cell = self.step * (np.exp(-self.lam * self.step * self._gx) * th) @ self._gw
        left = np.empty(n_cells + 1)
        right = np.empty(n_cells + 1)
        # tails beyond the table approximated by theta(edge) / l; they decay away within a few units
        left[0] = theta(np.array(self.nodes[0])) / self.lam
        for i in range(n_cells):
            left[i + 1] = decay * left[i] + left_cell[i]
        right[-1] = theta(np.array(self.nodes[-1])) / self.lam
        for i in range(n_cells - 1, -1, -1):
            right[i] = decay * right[i + 1] + right_cell[i]
        self._left, self._right = left, right

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        if np.any(np.abs(flat) > self.nodes[-1] - 10.0):
            raise ValueError("evaluation point outside the tabulated range")
        i = np.clip(((flat - self.nodes[0]) // self.step).astype(int), 0, self.nodes.size - 2)
        a, b = self.nodes[i], self.nodes[i + 1]
        lam = self.lam
        wl = (flat - a)[:, None]
        tl = a[:, None] + wl * self._gx[None, :]
        part_l = (wl * np.exp(-lam * (flat[:, None] - tl)) * self.theta(tl)) @ self._gw
        wr = (b - flat)[:, None]
        tr = flat[:, None] + wr * self._gx[None, :]
        part_r = (wr * np.exp(-lam * (tr - flat[:, None])) * self.theta(tr)) @ self._gw
        g = 0.5 * lam * (np.exp(-lam * (flat - a)) * self._left[i] + part_l
                         + np.exp(-lam * (b - flat)) * self._right[i + 1] + part_r)
        return g.reshape(x.shape)


@functools.lru_cache(maxsize=32)
def convolved_components(model: str, rates: tuple) -> tuple:
    thetas, _ = _model(model)
    return tuple(ConvolvedComponent(thetas[j], rates[j]) for j in range(len(thetas)))


@functools.lru_cache(maxsize=64)
def centering_constants(model: str, rates: tuple, design: str, a_N: float) -> tuple:
    """``E[g_j(X_j)]`` under the exact design marginal."""
    f = DesignDensity(design, a_N)
    lo, hi = f.support
    gx, gw = np.polynomial.legendre.leggauss(400)
    out = []
    for g in convolved_components(model, rates):
        total = 0.0
        # split at zero where theta may have a kink
        for a, b in ((lo, 0.0), (0.0, hi)):
            t = 0.5 * (b - a) * gx + 0.5 * (a + b)
            total += 0.5 * (b - a) * float(gw @ (g(t) * f(t)))
        out.append(total)
    return tuple(out)


@dataclass(frozen=True)
class Bandwidths:
    """Selected bandwidths: density ``h_d`` and inversion ``h`` are per axis."""

    h_d: tuple
    h_B: float
    h: tuple

    def as_dict(self):
        return {"h_d": list(self.h_d), "h_B": self.h_B, "h": list(self.h)}


def _geom(lo, hi, n):
    return tuple(float(v) for v in np.geomspace(lo, hi, n))


@dataclass(frozen=True)
class SimulationConfig:
    model: str = "sig1"
    design: str = "uniform"
    n: int = 701
    sigma2: float = 0.25
    a_N: float = 0.5
    replicates: int = 100
    seed: int = 20140101
    h_d_grid: tuple = _geom(0.05, 0.8, 9)
    h_B_grid: tuple = _geom(0.03, 0.3, 9)
    h_grid: tuple = _geom(0.1, 1.2, 12)
    eval_window: tuple = (-2.0, 2.0)
    eval_points: int = 101
    pilot_replicates: int = 25
    bandwidth_mode: str = "oracle"
    bandwidths: Bandwidths | None = None
    rates: tuple = (3.0, 3.0)
    n_panels: int = 2048
    unit_points: int = 101

    def __post_init__(self):
        _model(self.model)
        if self.design not in DESIGNS:
            raise ValueError(f"unknown design {self.design!r}")
        if self.n < 10:
            raise ValueError("n must be at least 10")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")
        if not (self.h_d_grid and self.h_B_grid and self.h_grid):
            raise ValueError("bandwidth grids must be non-empty")
        if self.bandwidth_mode not in ("oracle", "cv"):
            raise ValueError("bandwidth_mode must be 'oracle' or 'cv'")
        if self.eval_points < 2:
            raise ValueError("evaluation grid needs at least two points")

    @property
    def eval_grid(self) -> np.ndarray:
        return np.linspace(self.eval_window[0], self.eval_window[1], self.eval_points)

    def family(self) -> ConvolutionFamily:
        return ConvolutionFamily(tuple(self.rates))

    def pipeline_config(self, bw: Bandwidths) -> PipelineConfig:
        return PipelineConfig(h_B=bw.h_B, h=bw.h, h_d=bw.h_d, a_N=self.a_N, n_panels=self.n_panels,
                              unit_points=self.unit_points)


@dataclass(eq=False)
class SimulationReport:
    config: SimulationConfig
    bandwidths: Bandwidths
    grid: np.ndarray
    truth: np.ndarray
    curves: np.ndarray
    ise: np.ndarray
    failures: list = field(default_factory=list)
    runtime: float = 0.0

    @property
    def succeeded(self) -> np.ndarray:
        return np.all(np.isfinite(self.ise), axis=1)

    @property
    def imse(self) -> np.ndarray:
        return self.ise[self.succeeded].mean(axis=0)

    @property
    def mean_curves(self) -> np.ndarray:
        return self.curves[self.succeeded].mean(axis=0)

    def quantile_curves(self, q: float) -> np.ndarray:
        return np.quantile(self.curves[self.succeeded], q, axis=0)

    @property
    def success_rate(self) -> float:
        return float(self.succeeded.mean())


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, index)))


def generate_replicate(config: SimulationConfig, fam: ConvolutionFamily, index: int,
                       stream: int = REPLICATE_STREAM) -> Dataset:
    rng = _rng(config.seed, stream, index)
    X = sample_design(config.design, config.n, config.a_N, rng)
    g = convolved_components(config.model, fam.rates)
    noise = np.sqrt(config.sigma2) * rng.standard_normal(config.n)
    return Dataset(X, g[0](X[:, 0]) + g[1](X[:, 1]) + noise)


def component_targets(config: SimulationConfig, fam: ConvolutionFamily, grid=None):
    """Identified truths ``theta_j - E[g_j]`` and ``g_j - E[g_j]`` on ``grid``."""
    grid = config.eval_grid if grid is None else grid
    thetas, _ = _model(config.model)
    shifts = centering_constants(config.model, fam.rates, config.design, config.a_N)
    g = convolved_components(config.model, fam.rates)
    theta_t = np.stack([thetas[j](grid) - shifts[j] for j in range(2)])
    g_t = np.stack([g[j](grid) - shifts[j] for j in range(2)])
    return theta_t, g_t


def imse(estimate, truth, grid=None) -> float:
    """Trapezoid integral of the squared error over the evaluation grid."""
    if grid is None:
        grid, values = estimate.grid, estimate.values
    else:
        values = estimate
    values, truth, grid = (np.asarray(a, dtype=float) for a in (values, truth, grid))
    if not values.shape == truth.shape == grid.shape:
        raise ValueError("estimate, truth and grid must share one grid")
    return float(trapezoid_weights(grid) @ (values - truth) ** 2)


def _argmin(grid, scores):
    scores = np.asarray(scores, dtype=float)
    return float(grid[int(np.nanargmin(scores))])


def _pilot_sets(config, fam):
    return [generate_replicate(config, fam, i, stream=PILOT_STREAM) for i in range(config.pilot_replicates)]


def loo_backfit_score(data: Dataset, h_B: float, config: SimulationConfig) -> float:
    """Leave-one-out prediction error of the additive fit via its smoother diagonal."""
    Z = ecdf_transform(data)
    cfg = config.pipeline_config(Bandwidths((1.0, 1.0), h_B, (1.0, 1.0))).backfit_config()
    cols = np.column_stack([data.Y, np.eye(data.n)])
    fit = backfit(Z, cols, cfg)
    fitted = fitted_values(fit, Z)
    diag = np.diag(fitted[:, 1:])
    return float(np.mean(((data.Y - fitted[:, 0]) / (1.0 - diag)) ** 2))


def loo_inversion_score(X_j, U, weights, h: float, config: DeconvConfig) -> float:
    """Leave-one-out error of the band-limited smoother behind the inversion."""
    v, q = frequency_rule(config.n_panels)
    c = q * config.kernel.fourier(v)
    t = np.subtract.outer(X_j, X_j) / h
    K = np.empty_like(t)
    for start in range(0, t.shape[0], 256):
        K[start:start + 256] = (np.cos(np.multiply.outer(t[start:start + 256], v)) @ c)
    K /= 2 * np.pi * h
    np.fill_diagonal(K, 0.0)
    pred = K @ (U * weights) / (X_j.size - 1)
    return float(np.mean((U - pred) ** 2))


def bandwidth_search(config: SimulationConfig, fam: ConvolutionFamily | None = None) -> Bandwidths:
    """Nested search: density bandwidths, then ``h_B``, then ``h`` per axis.

    In ``oracle`` mode each stage minimises the integrated squared error
    against the known truth averaged over pilot replicates; in ``cv`` mode
    leave-one-out prediction errors replace the truth.
    """
    fam = config.family() if fam is None else fam
    if config.bandwidths is not None:
        return config.bandwidths
    h_d_grid = np.asarray(config.h_d_grid, dtype=float)
    h_B_grid = np.asarray(config.h_B_grid, dtype=float)
    h_grid = np.asarray(config.h_grid, dtype=float)
    if not (h_d_grid.size and h_B_grid.size and h_grid.size):
        raise ValueError("empty bandwidth grid")
    pilots = _pilot_sets(config, fam)
    grid = config.eval_grid
    oracle = config.bandwidth_mode == "oracle"
    theta_t, g_t = component_targets(config, fam, grid)
    f_true = DesignDensity(config.design, config.a_N)

    h_d = []
    for j in range(2):
        scores = np.zeros(h_d_grid.size)
        for data in pilots:
            col = data.X[:, j]
            for a, hd in enumerate(h_d_grid):
                if oracle:
                    scores[a] += imse(kde_values(col, hd, grid), f_true(grid), grid)
                else:
                    scores[a] += _lscv(col, hd)
        h_d.append(_argmin(h_d_grid, scores))

    if h_B_grid.size == 1:
        h_B = float(h_B_grid[0])
    else:
        scores = np.zeros(h_B_grid.size)
        for data in pilots:
            Z = ecdf_transform(data)
            for b, hb in enumerate(h_B_grid):
                if oracle:
                    cfg = config.pipeline_config(Bandwidths(tuple(h_d), hb, (1.0, 1.0))).backfit_config()
                    bf = backfit(Z, data.Y, cfg)
                    scores[b] += sum(imse(compose_with_ecdf(bf, data, j, grid), g_t[j], grid) for j in range(2))
                else:
                    scores[b] += loo_backfit_score(data, hb, config)
        h_B = _argmin(h_B_grid, scores)

    scores = np.zeros((2, h_grid.size))
    if h_grid.size > 1:
        for data in pilots:
            pc = config.pipeline_config(Bandwidths(tuple(h_d), h_B, (1.0, 1.0)))
            bf = backfit(ecdf_transform(data), data.Y, pc.backfit_config())
            for j in range(2):
                U = residuals(data, bf, j)
                dens = KDEDensity(data.X[:, j], h_d[j])
                for c, h in enumerate(h_grid):
                    dc = DeconvConfig(h=h, a_N=config.a_N, n_panels=config.n_panels)
                    rho = density_weights(data.X[:, j], dens, dc)
                    if oracle:
                        est = invert_component(data.X[:, j], U, rho, fam, j, dc, grid)
                        scores[j, c] += imse(est, theta_t[j], grid)
                    else:
                        scores[j, c] += loo_inversion_score(data.X[:, j], U, rho, h, dc)
    h = tuple(_argmin(h_grid, scores[j]) for j in range(2))
    return Bandwidths(tuple(h_d), h_B, h)


def _lscv(col, h):
    """Least-squares cross-validation score of a kernel density estimate."""
    lo, hi = col.min() - h, col.max() + h
    xs = np.linspace(lo, hi, 801)
    f = kde_values(col, h, xs)
    n = col.size
    K = np.where(np.abs(np.subtract.outer(col, col)) <= h,
                 0.75 * (1 - (np.subtract.outer(col, col) / h) ** 2), 0.0)
    loo = (K.sum(axis=1) - 0.75) / ((n - 1) * h)
    return float(np.trapezoid(f * f, xs) - 2 * loo.mean())


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_replicate(config: SimulationConfig, fam: ConvolutionFamily, bw: Bandwidths, index: int):
    data = generate_replicate(config, fam, index)
    fit = fit_additive_inverse(data, config.pipeline_config(bw), fam, [config.eval_grid] * 2)
    return np.stack([c.values for c in fit.components])


def run_study(config: SimulationConfig, fam: ConvolutionFamily | None = None,
              bandwidths: Bandwidths | None = None) -> SimulationReport:
    """Fit every replicate and aggregate squared errors and pointwise curves.

    A failing replicate is logged and recorded with its index; the study
    carries on with the rest.
    """
    fam = config.family() if fam is None else fam
    start = time.perf_counter()
    bw = bandwidths or bandwidth_search(config, fam)
    grid = config.eval_grid
    theta_t, _ = component_targets(config, fam, grid)

    def task(index):
        try:
            return run_replicate(config, fam, bw, index), None
        except Exception as exc:  # noqa: BLE001 - reported per replicate
            logger.warning("replicate %d failed: %s", index, exc)
            return None, f"{type(exc).__name__}: {exc}"

    indices = range(config.replicates)
    threads = _threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outcomes = list(pool.map(task, indices))
    else:
        outcomes = [task(i) for i in indices]

    curves = np.full((config.replicates, 2, grid.size), np.nan)
    ise = np.full((config.replicates, 2), np.nan)
    failures = []
    for i, (values, err) in enumerate(outcomes):
        if err is not None:
            failures.append((i, err))
            continue
        curves[i] = values
        ise[i] = [imse(values[j], theta_t[j], grid) for j in range(2)]
    return SimulationReport(config=config, bandwidths=bw, grid=grid, truth=theta_t, curves=curves,
                            ise=ise, failures=failures, runtime=time.perf_counter() - start)


def with_overrides(config: SimulationConfig, **changes) -> SimulationConfig:
    return replace(config, **changes)
