"""Low-level pseudospectral kernels on raw arrays.

Every function here acts on float64 arrays whose trailing axes are the
spatial grid and whose leading axes are arbitrary batch dimensions
(time slices, vector components, or both).  This lets the space-time
functional evaluate whole trajectories with a handful of batched FFTs.

Conventions:
  * velocity-like arrays have shape (..., dim, n, ..., n) with the
    component axis just before the spatial axes
  * hat arrays are complex128 with the same layout
  * derivative tensors have shape (..., dim_i, dim_j, n, ..., n) and
    hold d_j u_i
  * the discrete L2 pairing is cell_volume * sum(a * b), which is the
    exact integral for trigonometric polynomials below the Nyquist band
"""

from __future__ import annotations

import numpy as np
import scipy.fft as _fft

from .grid import GridSpec, dealias_mask, inverse_wavenumber_sq, wavenumber_sq, wavenumbers


def fft_spatial(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    return _fft.fftn(a, axes=grid.spatial_axes)


def ifft_spatial(ahat: np.ndarray, grid: GridSpec) -> np.ndarray:
    return _fft.ifftn(ahat, axes=grid.spatial_axes).real


def parseval_factor(grid: GridSpec) -> float:
    """Scale turning sum(|ahat|^2) into the integral of |a|^2."""
    return grid.domain_length ** grid.dim / float(grid.n) ** (2 * grid.dim)


def _k_batched(grid: GridSpec, extra_axes: int) -> np.ndarray:
    """Wavenumber stack reshaped to broadcast over extra leading axes."""
    k = wavenumbers(grid)
    return k.reshape((grid.dim,) + (1,) * extra_axes + grid.shape)


def inner(a: np.ndarray, b: np.ndarray, grid: GridSpec) -> float:
    """Discrete L2 inner product over all non-batch content."""
    return grid.cell_volume * float(np.sum(a * b))


def l2_norm_sq(a: np.ndarray, grid: GridSpec) -> float:
    return grid.cell_volume * float(np.sum(a * a))


def slicewise_l2_sq(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Integral of |a|^2 per leading slice of a (slices, dim, n, ..., n)."""
    axes = tuple(range(1, a.ndim))
    return grid.cell_volume * np.sum(a * a, axis=axes)


def slicewise_l2_sq_hat(ahat: np.ndarray, grid: GridSpec) -> np.ndarray:
    axes = tuple(range(1, ahat.ndim))
    return parseval_factor(grid) * np.sum(ahat.real ** 2 + ahat.imag ** 2, axis=axes)


def slicewise_grad_sq_hat(ahat: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Integral of |grad u|^2 per leading slice from hat coefficients."""
    axes = tuple(range(1, ahat.ndim))
    k2 = wavenumber_sq(grid)
    return parseval_factor(grid) * np.sum(k2 * (ahat.real ** 2 + ahat.imag ** 2), axis=axes)


def sobolev_norm_sq_hat(ahat: np.ndarray, s: float, grid: GridSpec, batch_axes: int = 0) -> np.ndarray | float:
    """H^s norm squared with (1 + |k|^2)^s weights, reduced over all axes
    past the first batch_axes."""
    axes = tuple(range(batch_axes, ahat.ndim))
    weight = (1.0 + wavenumber_sq(grid)) ** s
    out = parseval_factor(grid) * np.sum(weight * (ahat.real ** 2 + ahat.imag ** 2), axis=axes)
    return out if batch_axes else float(out)


def apply_dealias(ahat: np.ndarray, grid: GridSpec) -> np.ndarray:
    return ahat * dealias_mask(grid)


def project_hat(uhat: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Leray projection in spectral space; zero mode left untouched."""
    comp_axis = -(grid.dim + 1)
    k = _k_batched(grid, uhat.ndim - grid.dim - 1)
    uh = np.moveaxis(uhat, comp_axis, 0)
    kdotu = np.sum(k * uh, axis=0)
    kinv2 = inverse_wavenumber_sq(grid)
    correction = k * (kdotu * kinv2)
    return uhat - np.moveaxis(correction, 0, comp_axis)


def divergence_hat(uhat: np.ndarray, grid: GridSpec) -> np.ndarray:
    comp_axis = -(grid.dim + 1)
    k = _k_batched(grid, uhat.ndim - grid.dim - 1)
    return 1j * np.sum(k * np.moveaxis(uhat, comp_axis, 0), axis=0)


def grad_tensor_from_hat(uhat: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Physical d_j u_i, shape (..., dim_i, dim_j, n, ..., n)."""
    k = _k_batched(grid, uhat.ndim - grid.dim)
    dhat = 1j * np.moveaxis(k, 0, -(grid.dim + 1)) * np.expand_dims(uhat, -(grid.dim + 1))
    return _fft.ifftn(dhat, axes=grid.spatial_axes).real


def grad_tensor(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    return grad_tensor_from_hat(fft_spatial(u, grid), grid)


def contract_velocity_gradient(u: np.ndarray, du: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Pointwise sum_j u_j d_j w_i given du = grad tensor of w."""
    uj = np.expand_dims(u, -(grid.dim + 2))
    return np.sum(du * uj, axis=-(grid.dim + 1))


def convect(u: np.ndarray, grid: GridSpec, uhat: np.ndarray | None = None) -> np.ndarray:
    """Dealiased pointwise (u . grad) u, same shape as u."""
    if uhat is None:
        uhat = fft_spatial(u, grid)
    du = grad_tensor_from_hat(uhat, grid)
    raw = contract_velocity_gradient(u, du, grid)
    return ifft_spatial(apply_dealias(fft_spatial(raw, grid), grid), grid)


def tensor_divergence_hat(that: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Spectral sum_j d_j T_ij for a tensor hat (..., i, j, n, ..., n);
    returns a velocity-shaped hat (..., i, n, ..., n)."""
    k = _k_batched(grid, that.ndim - grid.dim - 1)
    kj = np.moveaxis(k, 0, -(grid.dim + 1))
    return 1j * np.sum(kj * that, axis=-(grid.dim + 1))


def laplacian_hat(uhat: np.ndarray, grid: GridSpec) -> np.ndarray:
    return -wavenumber_sq(grid) * uhat


def zero_mean_hat(uhat: np.ndarray, grid: GridSpec) -> np.ndarray:
    idx = (Ellipsis,) + (0,) * grid.dim
    uhat[idx] = 0.0
    return uhat


def project_admissible(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Leray projection composed with mean removal, in physical space."""
    uhat = project_hat(fft_spatial(u, grid), grid)
    zero_mean_hat(uhat, grid)
    return ifft_spatial(uhat, grid)


def project_resolved(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Projection onto the resolved state space: divergence-free,
    mean-free, and band-limited to the dealiasing cutoff.

    Optimization iterates live in this space.  Band limiting matters
    beyond aliasing control: the unpaired Nyquist wavenumber of an even
    grid breaks the conjugate symmetry of first-derivative adjoints, so
    gradients are only exactly dual to the functional on band-limited
    fields (the Galerkin space of the dealiased scheme)."""
    uhat = apply_dealias(project_hat(fft_spatial(u, grid), grid), grid)
    zero_mean_hat(uhat, grid)
    return ifft_spatial(uhat, grid)
