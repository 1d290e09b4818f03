"""Velocity fields on the periodic torus and the operators acting on them.

The public surface mirrors the continuous objects: Leray projection,
convection, the Stokes operator, Sobolev norms, and the L2 pairing.
Everything is computed spectrally, so the identities these operators
satisfy (idempotent projection, skew symmetry of convection against
divergence-free fields, Parseval) hold to rounding for band-limited
fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import spectral
from .grid import GridSpec, wavenumber_sq, wavenumbers

__all__ = [
    "GridSpec",
    "VelocityField",
    "SobolevIndex",
    "leray_project",
    "advect",
    "stokes_apply",
    "sobolev_norm",
    "inner_product",
    "l2_norm",
    "divergence",
    "zero_mean",
    "random_solenoidal",
    "truncate_modes",
]


@dataclass(frozen=True)
class SobolevIndex:
    """Order of a spectral Sobolev norm; negative values are dual norms."""

    s: float = 0.0

    def __float__(self) -> float:
        return float(self.s)


@dataclass
class VelocityField:
    """A velocity field sampled on a GridSpec.

    data has shape (dim, n, ..., n) with float64 entries.  Physically
    meaningful fields are divergence-free with zero spatial mean; the
    constructors below produce such fields, and `leray_project` plus
    `zero_mean` restore the invariants after arbitrary arithmetic.
    """

    grid: GridSpec
    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        expected = (self.grid.dim,) + self.grid.shape
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.shape != expected:
            raise ValueError(
                f"field data shape {self.data.shape} does not match grid {expected}"
            )

    @classmethod
    def zeros(cls, grid: GridSpec) -> "VelocityField":
        return cls(grid, np.zeros((grid.dim,) + grid.shape))

    @classmethod
    def from_components(cls, grid: GridSpec, *components: np.ndarray) -> "VelocityField":
        if len(components) != grid.dim:
            raise ValueError(f"expected {grid.dim} components, got {len(components)}")
        return cls(grid, np.stack([np.asarray(c, dtype=np.float64) for c in components]))

    @property
    def components(self) -> tuple:
        return tuple(self.data[i] for i in range(self.grid.dim))

    def copy(self) -> "VelocityField":
        return VelocityField(self.grid, self.data.copy())

    def __add__(self, other: "VelocityField") -> "VelocityField":
        _check_same_grid(self, other)
        return VelocityField(self.grid, self.data + other.data)

    def __sub__(self, other: "VelocityField") -> "VelocityField":
        _check_same_grid(self, other)
        return VelocityField(self.grid, self.data - other.data)

    def __mul__(self, scalar: float) -> "VelocityField":
        return VelocityField(self.grid, self.data * float(scalar))

    __rmul__ = __mul__


def _check_same_grid(a: VelocityField, b: VelocityField) -> None:
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")


def leray_project(f: VelocityField) -> VelocityField:
    """Remove the gradient part of f (spectral Helmholtz projection)."""
    fhat = spectral.fft_spatial(f.data, f.grid)
    phat = spectral.project_hat(fhat, f.grid)
    return VelocityField(f.grid, spectral.ifft_spatial(phat, f.grid))


def advect(u: VelocityField) -> VelocityField:
    """Pointwise (u . grad) u with the quadratic product dealiased."""
    return VelocityField(u.grid, spectral.convect(u.data, u.grid))


def stokes_apply(u: VelocityField) -> VelocityField:
    """Negative Laplacian; on divergence-free fields this is the Stokes
    operator since projection and -Lap commute spectrally."""
    uhat = spectral.fft_spatial(u.data, u.grid)
    return VelocityField(u.grid, spectral.ifft_spatial(-spectral.laplacian_hat(uhat, u.grid), u.grid))


def sobolev_norm(f: VelocityField, s: float | SobolevIndex = 0.0) -> float:
    """Spectral H^s norm, (sum_k (1 + |k|^2)^s |fhat_k|^2)^(1/2) summed
    over components and normalized so s = 0 is the L2 norm."""
    fhat = spectral.fft_spatial(f.data, f.grid)
    return float(np.sqrt(spectral.sobolev_norm_sq_hat(fhat, float(s), f.grid)))


def inner_product(f: VelocityField, g: VelocityField) -> float:
    """Discrete L2 pairing, cell volume times the pointwise sum."""
    _check_same_grid(f, g)
    return spectral.inner(f.data, g.data, f.grid)


def l2_norm(f: VelocityField) -> float:
    return float(np.sqrt(spectral.l2_norm_sq(f.data, f.grid)))


def divergence(f: VelocityField) -> np.ndarray:
    """Pointwise spectral divergence, shape (n, ..., n)."""
    fhat = spectral.fft_spatial(f.data, f.grid)
    return spectral.ifft_spatial(spectral.divergence_hat(fhat, f.grid), f.grid)


def zero_mean(f: VelocityField) -> VelocityField:
    mean = f.data.mean(axis=tuple(range(1, f.data.ndim)), keepdims=True)
    return VelocityField(f.grid, f.data - mean)


def truncate_modes(f: VelocityField, k_max: float) -> VelocityField:
    """Keep Fourier modes with |k| <= k_max (Euclidean shell cutoff)."""
    fhat = spectral.fft_spatial(f.data, f.grid)
    keep = wavenumber_sq(f.grid) <= float(k_max) ** 2 + 1e-9
    return VelocityField(f.grid, spectral.ifft_spatial(fhat * keep, f.grid))


def random_solenoidal(
    grid: GridSpec,
    seed: int,
    k_cut: int | None = None,
    amplitude: float = 1.0,
) -> VelocityField:
    """Seeded random divergence-free mean-zero field.

    Modes above k_cut are removed (default: the grid's dealias cutoff,
    so quadratic products of the result are alias-free).  The field is
    scaled to the requested L2 amplitude.
    """
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((grid.dim,) + grid.shape)
    cut = grid.dealias_cutoff if k_cut is None else int(k_cut)
    fhat = spectral.fft_spatial(raw, grid)
    keep = np.all(np.abs(wavenumbers(grid)) <= cut + 1e-12, axis=0)
    fhat = spectral.project_hat(fhat * keep, grid)
    spectral.zero_mean_hat(fhat, grid)
    data = spectral.ifft_spatial(fhat, grid)
    norm = np.sqrt(spectral.l2_norm_sq(data, grid))
    if norm > 0.0:
        data *= amplitude / norm
    return VelocityField(grid, data)
