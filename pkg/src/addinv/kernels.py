"""Kernels, deconvolution filters and the Laplace convolution family.

Everything downstream of the backfitting step works in the Fourier domain,
so the deconvolution kernel ``K`` is only ever represented through its
transform ``phi_K``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SmoothingKernel:
    """Compactly supported second order kernel on ``[-1, 1]``.

    Used both for the backfitting smoother ``L`` and the marginal density
    estimator ``M``.
    """

    kind: str = "epanechnikov"

    def __post_init__(self):
        if self.kind != "epanechnikov":
            raise ValueError(f"unknown smoothing kernel {self.kind!r}")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)

    def cdf(self, u):
        """Integral of the kernel from -1 to ``u``."""
        u = np.clip(np.asarray(u, dtype=float), -1.0, 1.0)
        return 0.5 + 0.75 * (u - u ** 3 / 3.0)


EPANECHNIKOV = SmoothingKernel()


def eval_smoothing(kernel: SmoothingKernel, u):
    return kernel(u)


@dataclass(frozen=True)
class DeconvKernel:
    """Band-limited kernel given by its Fourier transform.

    ``phi_K`` equals one on ``[-b, b]``, vanishes outside ``[-1, 1]`` and
    decays with a raised-cosine taper in between.  With ``b = 1`` it is the
    indicator of ``[-1, 1]``, i.e. ``K(x) = sin(x) / (pi x)``.
    """

    flat_radius: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.flat_radius <= 1.0:
            raise ValueError("flat_radius must lie in (0, 1]")

    def fourier(self, w):
        w = np.abs(np.asarray(w, dtype=float))
        b = self.flat_radius
        out = np.where(w <= b, 1.0, 0.0)
        if b < 1.0:
            taper = (w > b) & (w <= 1.0)
            out = np.where(taper, 0.5 * (1.0 + np.cos(np.pi * (w - b) / (1.0 - b))), out)
        return out


SINC = DeconvKernel()


def fourier_K(kernel: DeconvKernel, w):
    return kernel.fourier(w)


@dataclass(frozen=True)
class ConvolutionFamily:
    """Product of Laplace densities ``prod_j (l_j / 2) exp(-l_j |t_j|)``.

    Parameters
    ----------
    rates : tuple of float
        Per-axis decay rates ``l_j > 0``.
    """

    rates: tuple
    kind: str = "laplace"
    betas: tuple = field(default=None)

    def __post_init__(self):
        rates = tuple(float(r) for r in self.rates)
        if not rates or any(not np.isfinite(r) or r <= 0 for r in rates):
            raise ValueError("rates must be positive and finite")
        if self.kind != "laplace":
            raise ValueError(f"unsupported convolution family {self.kind!r}")
        object.__setattr__(self, "rates", rates)
        # 1 / phi_psi grows like w^2 for every Laplace marginal
        if self.betas is None:
            object.__setattr__(self, "betas", (2.0,) * len(rates))

    @classmethod
    def laplace(cls, *rates):
        return cls(tuple(rates))

    @property
    def dim(self) -> int:
        return len(self.rates)

    def _rate(self, j: int) -> float:
        if not isinstance(j, (int, np.integer)) or not 0 <= j < self.dim:
            raise IndexError(f"axis {j!r} out of range for a {self.dim}-dimensional family")
        return self.rates[j]

    def density(self, t):
        """Joint density at points ``t`` of shape ``(..., d)``."""
        t = np.asarray(t, dtype=float)
        lam = np.asarray(self.rates)
        return np.prod(0.5 * lam * np.exp(-lam * np.abs(t)), axis=-1)

    def marginal(self, j: int, t):
        lam = self._rate(j)
        return 0.5 * lam * np.exp(-lam * np.abs(np.asarray(t, dtype=float)))

    def fourier(self, j: int, w):
        lam = self._rate(j)
        w = np.asarray(w, dtype=float)
        return lam * lam / (lam * lam + w * w)


def marginal_psi(fam: ConvolutionFamily, j: int, t):
    return fam.marginal(j, t)


def fourier_psi(fam: ConvolutionFamily, j: int, w):
    return fam.fourier(j, w)


def simpson_rule(a: float, b: float, n_panels: int):
    """Nodes and weights of the composite Simpson rule (``n_panels`` even)."""
    if n_panels < 2 or n_panels % 2:
        raise ValueError("n_panels must be a positive even integer")
    nodes = np.linspace(a, b, n_panels + 1)
    step = (b - a) / n_panels
    weights = np.full(n_panels + 1, 2.0)
    weights[1::2] = 4.0
    weights[0] = weights[-1] = 1.0
    return nodes, weights * step / 3.0


def ratio_integral(fam: ConvolutionFamily, j: int, kernel: DeconvKernel, h: float,
                   power: int = 1, n_panels: int = 2048) -> float:
    """Integral of ``|phi_K(w)|^p / |phi_psi_j(w / h)|^p`` over ``[-1, 1]``."""
    if not h > 0:
        raise ValueError("bandwidth h must be positive")
    if power not in (1, 2):
        raise ValueError("power must be 1 or 2")
    w, q = simpson_rule(-1.0, 1.0, n_panels)
    ratio = np.abs(kernel.fourier(w)) / np.abs(fam.fourier(j, w / h))
    return float(q @ ratio ** power)
