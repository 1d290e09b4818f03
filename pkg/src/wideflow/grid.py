"""Periodic grid description and cached spectral tensors.

All fields live on the d-dimensional torus [0, L)^d sampled on a uniform
n^d grid.  Wavenumbers are integers scaled by 2*pi/L, so with the default
L = 2*pi they are plain integers and spectral derivatives are exact for
trigonometric polynomials resolved by the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on [0, domain_length)^dim.

    Args:
        dim: spatial dimension, 2 or 3.
        n: grid points per axis (even, at least 8).
        domain_length: side length of the torus, 2*pi by default.
        dealias: fraction of the Nyquist band kept when products are
            dealiased (the standard two-thirds rule by default).
    """

    dim: int = 2
    n: int = 32
    domain_length: float = TWO_PI
    dealias: float = 2.0 / 3.0

    def __post_init__(self) -> None:
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.n < 8 or self.n % 2 != 0:
            raise ValueError(f"n must be even and >= 8, got {self.n}")
        if not self.domain_length > 0.0:
            raise ValueError("domain_length must be positive")
        if not 0.0 < self.dealias <= 1.0:
            raise ValueError(f"dealias must lie in (0, 1], got {self.dealias}")

    @property
    def spacing(self) -> float:
        return self.domain_length / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def spatial_axes(self) -> tuple:
        return tuple(range(-self.dim, 0))

    @property
    def dealias_cutoff(self) -> int:
        """Largest retained integer mode index per axis."""
        return int(math.floor(self.dealias * (self.n // 2)))

    def axes_points(self) -> np.ndarray:
        """1D array of grid coordinates along one axis."""
        return np.arange(self.n) * self.spacing

    def meshgrid(self) -> tuple:
        x = self.axes_points()
        return np.meshgrid(*([x] * self.dim), indexing="ij")


@lru_cache(maxsize=32)
def wavenumbers(grid: GridSpec) -> np.ndarray:
    """Stacked wavenumber arrays, shape (dim, n, ..., n)."""
    k1d = np.fft.fftfreq(grid.n, d=1.0 / grid.n) * (TWO_PI / grid.domain_length)
    mesh = np.meshgrid(*([k1d] * grid.dim), indexing="ij")
    out = np.stack(mesh).astype(np.float64)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def wavenumber_sq(grid: GridSpec) -> np.ndarray:
    """|k|^2 on the spectral grid, shape (n, ..., n)."""
    k = wavenumbers(grid)
    out = np.sum(k * k, axis=0)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def inverse_wavenumber_sq(grid: GridSpec) -> np.ndarray:
    """1/|k|^2 with the zero mode mapped to 0."""
    k2 = wavenumber_sq(grid).copy()
    k2.flat[0] = 1.0
    out = 1.0 / k2
    out.flat[0] = 0.0
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def dealias_mask(grid: GridSpec) -> np.ndarray:
    """Boolean mask keeping |k_j| <= cutoff along every axis."""
    scale = TWO_PI / grid.domain_length
    kmax = grid.dealias_cutoff * scale
    k = wavenumbers(grid)
    mask = np.all(np.abs(k) <= kmax + 1e-12 * scale, axis=0)
    mask.setflags(write=False)
    return mask
