"""The exponentially weighted space-time functional and its gradient.

A trajectory u_0, ..., u_N on a uniform time grid t_n = n * tau is scored
by

    sum_n tau * w_n * ( 1/2 ||D_n + C_n||^2 + sigma/2 ||C_n||^2
                        + nu/(2 eps) ||grad u_n||^2 )

where D_n is the backward difference (u_n - u_{n-1})/tau, C_n is the
dealiased convection of slice n, and w_n is the exact average of
exp(-t/eps) over the n-th slab.  Minimizers of this functional over
divergence-free trajectories with a fixed initial slice approximate
solutions of the incompressible Navier-Stokes equations as eps shrinks;
the gradient assembled here is the exact derivative of the discrete sum,
which the optimizer and the variational diagnostics both rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import spectral
from .fields import VelocityField, advect, l2_norm
from .grid import GridSpec, wavenumber_sq

__all__ = [
    "WideParams",
    "Trajectory",
    "FunctionalBreakdown",
    "exp_weights",
    "eval_functional",
    "grad_functional",
    "prepare_initial_datum",
]


class ConfigurationError(ValueError):
    """Raised when parameters violate a documented validity rule."""


@dataclass(frozen=True)
class WideParams:
    """Physical and regularization parameters of the functional.

    epsilon is the time-weighting scale, sigma the coefficient of the
    quadratic convection stabilizer, nu the viscosity, horizon_T the
    length of the time window.  Density is fixed to one.  `convection`
    switches the nonlinear term off for linear (Stokes) diagnostics.
    """

    epsilon: float
    sigma: float
    nu: float
    horizon_T: float
    convection: bool = True

    rho0 = 1.0

    def __post_init__(self) -> None:
        if not self.epsilon > 0.0:
            raise ConfigurationError("epsilon must be positive")
        if self.sigma < 0.0:
            raise ConfigurationError("sigma must be nonnegative")
        if not self.nu > 0.0:
            raise ConfigurationError("nu must be positive")
        if not self.horizon_T > 0.0:
            raise ConfigurationError("horizon_T must be positive")

    @property
    def energy_certificate_valid(self) -> bool:
        """True when the coercivity constant of the energy estimate is
        positive, which requires sigma > 1/8."""
        return self.sigma > 0.125


@dataclass
class Trajectory:
    """N+1 velocity slices on a uniform time grid with step tau.

    data has shape (N+1, dim, n, ..., n); slice 0 is the (fixed) initial
    datum.  meta carries run bookkeeping and is ignored by checkpoints.
    """

    grid: GridSpec
    tau: float
    data: np.ndarray = dc_field(repr=False)
    initial_fixed: bool = True
    meta: dict = dc_field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")
        expected_tail = (self.grid.dim,) + self.grid.shape
        if self.data.ndim != 2 + self.grid.dim or self.data.shape[1:] != expected_tail:
            raise ValueError(
                f"trajectory data shape {self.data.shape} does not match grid {expected_tail}"
            )
        if self.data.shape[0] < 2:
            raise ValueError("a trajectory needs at least one step")

    @property
    def n_steps(self) -> int:
        return self.data.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.data.shape[0]) * self.tau

    def slice_field(self, i: int) -> VelocityField:
        return VelocityField(self.grid, self.data[i])

    @classmethod
    def constant(cls, u0: VelocityField, tau: float, n_steps: int) -> "Trajectory":
        data = np.broadcast_to(u0.data, (n_steps + 1,) + u0.data.shape).copy()
        return cls(u0.grid, tau, data)

    @classmethod
    def from_slices(cls, slices, tau: float) -> "Trajectory":
        fields = list(slices)
        grid = fields[0].grid
        for f in fields[1:]:
            if f.grid != grid:
                raise ValueError("all slices must share one grid")
        return cls(grid, tau, np.stack([f.data for f in fields]))

    def copy(self) -> "Trajectory":
        return Trajectory(self.grid, self.tau, self.data.copy(), self.initial_fixed, dict(self.meta))


@dataclass(frozen=True)
class FunctionalBreakdown:
    """Value of the functional split into its three contributions."""

    inertia: float
    stabilization: float
    dissipation: float
    total: float

    def as_dict(self) -> dict:
        return {
            "inertia": self.inertia,
            "stabilization": self.stabilization,
            "dissipation": self.dissipation,
            "total": self.total,
        }


def exp_weights(params: WideParams, tau: float, n_steps: int) -> np.ndarray:
    """Exact slab averages of exp(-t/eps), one weight per step.

    w_n = (eps/tau) * (exp(-t_{n-1}/eps) - exp(-t_n/eps)) lies in (0, 1),
    decreases in n, tends to 1 as eps grows, and telescopes so that
    sum_n tau * w_n = eps * (1 - exp(-T/eps)).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if not tau > 0.0:
        raise ValueError("tau must be positive")
    eps = params.epsilon
    t_left = np.arange(n_steps) * tau
    return (eps / tau) * (-np.expm1(-tau / eps)) * np.exp(-t_left / eps)


def _check_horizon(traj: Trajectory, params: WideParams) -> None:
    span = traj.n_steps * traj.tau
    if abs(span - params.horizon_T) > 1e-9 * max(1.0, params.horizon_T):
        raise ValueError(
            f"trajectory spans {span}, but params.horizon_T = {params.horizon_T}"
        )


def _breakdown_arrays(
    U: np.ndarray, grid: GridSpec, params: WideParams, tau: float, weights: np.ndarray
):
    """Shared batched core: spectral data for slices 1..N plus the
    per-slice squared norms entering the functional."""
    uhat = spectral.fft_spatial(U, grid)
    dhat = (uhat[1:] - uhat[:-1]) / tau
    if params.convection:
        du = spectral.grad_tensor_from_hat(uhat[1:], grid)
        craw = spectral.contract_velocity_gradient(U[1:], du, grid)
        chat = spectral.apply_dealias(spectral.fft_spatial(craw, grid), grid)
        mhat = dhat + chat
        ns_c = spectral.slicewise_l2_sq_hat(chat, grid)
    else:
        du = None
        chat = None
        mhat = dhat
        ns_c = np.zeros(U.shape[0] - 1)
    ns_m = spectral.slicewise_l2_sq_hat(mhat, grid)
    gs_u = spectral.slicewise_grad_sq_hat(uhat[1:], grid)
    inertia = float(np.sum(tau * weights * 0.5 * ns_m))
    stab = float(np.sum(tau * weights * (params.sigma / 2.0) * ns_c))
    diss = float(np.sum(tau * weights * (params.nu / (2.0 * params.epsilon)) * gs_u))
    breakdown = FunctionalBreakdown(inertia, stab, diss, inertia + stab + diss)
    return breakdown, uhat, dhat, chat, mhat, du


def eval_functional(traj: Trajectory, params: WideParams) -> FunctionalBreakdown:
    """Evaluate the functional on a trajectory.

    Returns the breakdown into inertia (weighted squared material rate),
    stabilization (sigma term), and dissipation (viscous term).
    """
    _check_horizon(traj, params)
    weights = exp_weights(params, traj.tau, traj.n_steps)
    breakdown, *_ = _breakdown_arrays(traj.data, traj.grid, params, traj.tau, weights)
    return breakdown


def _gradient_arrays(
    U: np.ndarray,
    grid: GridSpec,
    params: WideParams,
    tau: float,
    weights: np.ndarray,
):
    """Value and exact gradient of the discrete functional.

    Returns (breakdown, g) where g[n] for n = 1..N is the plain L2
    derivative d F / d u_n restricted to the resolved state space
    (divergence-free, mean-free, band-limited to the dealiasing
    cutoff), and g[0] = 0.  The restriction is exact duality, not an
    approximation: on an even grid the unpaired Nyquist wavenumber has
    no conjugate partner, so only band-limited variations pair
    consistently with the first-derivative adjoint terms.
    """
    breakdown, uhat, dhat, chat, mhat, du = _breakdown_arrays(U, grid, params, tau, weights)
    n_steps = U.shape[0] - 1
    k2 = wavenumber_sq(grid)
    wcol = weights.reshape((n_steps,) + (1,) * (grid.dim + 1))

    ghat = wcol * mhat
    ghat[:-1] -= wcol[1:] * mhat[1:]
    ghat += (tau * params.nu / params.epsilon) * wcol * (k2 * uhat[1:])

    if params.convection:
        rhat = spectral.apply_dealias(dhat, grid) + (1.0 + params.sigma) * chat
        rt = spectral.ifft_spatial(rhat, grid)
        term1 = np.sum(du * np.expand_dims(rt, -(grid.dim + 1)), axis=-(grid.dim + 2))
        flux = np.expand_dims(rt, -(grid.dim + 1)) * np.expand_dims(U[1:], -(grid.dim + 2))
        divflux_hat = spectral.tensor_divergence_hat(spectral.fft_spatial(flux, grid), grid)
        ghat += (tau * wcol) * (spectral.fft_spatial(term1, grid) - divflux_hat)

    ghat = spectral.apply_dealias(spectral.project_hat(ghat, grid), grid)
    spectral.zero_mean_hat(ghat, grid)
    g = np.zeros_like(U)
    g[1:] = spectral.ifft_spatial(ghat, grid)
    return breakdown, g


def grad_functional(traj: Trajectory, params: WideParams) -> Trajectory:
    """Exact gradient of the discrete functional.

    The result G is trajectory-shaped with G_0 = 0 (the initial slice is
    fixed) and satisfies sum_n tau * <G_n, phi_n> = dF[phi] for every
    perturbation phi of slices 1..N.  Slices are divergence-free and
    mean-free, matching the admissible manifold.
    """
    _check_horizon(traj, params)
    weights = exp_weights(params, traj.tau, traj.n_steps)
    _, g = _gradient_arrays(traj.data, traj.grid, params, traj.tau, weights)
    return Trajectory(traj.grid, traj.tau, g / traj.tau, initial_fixed=True)


def value_and_raw_gradient(
    traj_data: np.ndarray, grid: GridSpec, params: WideParams, tau: float, weights: np.ndarray
):
    """Optimizer entry point: functional value plus the plain-pairing
    gradient (no 1/tau scaling) for slices 1..N."""
    breakdown, g = _gradient_arrays(traj_data, grid, params, tau, weights)
    return breakdown, g[1:]


def prepare_initial_datum(
    u0: VelocityField, params: WideParams, c0: float
) -> VelocityField:
    """Spectrally truncate a projected datum until the regularized
    gradient bound holds.

    The returned field v is the projection of u0 restricted to modes
    |k| <= k_max with the largest k_max satisfying

        ||grad v||^2 + eps * ||v . grad v||^2 <= c0 / eps.

    The datum is first restricted to the resolved band of the grid (the
    dealiasing cutoff), which is where trajectories live.  Smooth data
    with a generous c0 then pass untruncated.  If no truncation with at
    least one nonzero mode passes, the configuration is rejected.
    """
    if not c0 > 0.0:
        raise ConfigurationError("c0 must be positive")
    base = VelocityField(
        u0.grid, spectral.project_resolved(u0.data, u0.grid)
    )
    budget = c0 / params.epsilon

    def bound_value(v: VelocityField) -> float:
        grad_sq = spectral.slicewise_grad_sq_hat(
            spectral.fft_spatial(v.data, v.grid)[None], v.grid
        )[0]
        conv = advect(v)
        conv_sq = spectral.l2_norm_sq(conv.data, v.grid)
        return float(grad_sq + params.epsilon * conv_sq)

    if bound_value(base) <= budget:
        return base

    uhat = spectral.fft_spatial(base.data, base.grid)
    k2 = wavenumber_sq(base.grid)
    power = np.sum(np.abs(uhat) ** 2, axis=0)
    shells = np.unique(np.round(np.sqrt(k2[power > 1e-28]), 9))
    shells = shells[shells > 0.0]
    for radius in shells[::-1]:
        keep = k2 <= radius**2 + 1e-9
        cand = VelocityField(base.grid, spectral.ifft_spatial(uhat * keep, base.grid))
        if bound_value(cand) <= budget:
            if l2_norm(cand) <= 1e-14 * max(1.0, l2_norm(base)):
                break
            return cand
    raise ConfigurationError(
        "c0 is too small: no spectral truncation with a nonzero mode satisfies the gradient bound"
    )
