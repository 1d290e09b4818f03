"""Stationarity diagnostics: weak and strong residuals of the
optimality system, the exponential-kernel representation of the
projected material rate, and pressure recovery.

At a stationary trajectory the projected material rate

    v_n = P((u_n - u_{n-1})/tau + u_n . grad u_n)

solves a backward-in-time elliptic recursion whose continuous form is

    -eps dv/dt + v + f + g + nu A u = 0,
    f = eps (grad u)^T m,   g = -div(eps m (x) u),
    m = du/dt + (1 + sigma) u . grad u,

and unrolling the recursion expresses v as an exponentially weighted
average of f + g + nu A u over later times.  Everything here is
assembled with the same discrete operators as the functional, so the
identities hold to optimizer tolerance rather than discretization
order.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.integrate import quad

from . import spectral
from .fields import SobolevIndex, VelocityField, random_solenoidal
from .functional import Trajectory, WideParams, exp_weights
from .grid import GridSpec, inverse_wavenumber_sq, wavenumber_sq

__all__ = [
    "ELTerms",
    "ELReport",
    "KernelCheckReport",
    "assemble_el_terms",
    "weak_el_residual",
    "weak_residual_bound",
    "strong_el_residual",
    "kernel_convolution_check",
    "kernel_norms",
    "recover_pressure",
    "el_report",
    "default_test_trajectories",
]


@dataclass
class ELTerms:
    """Per-slice stationarity fields for slices 1..N.

    Arrays are indexed by slice - 1.  v is the projected material rate,
    f the transposed-gradient force, flux the tensor whose negative
    divergence is the convective force g, B the projected convection,
    and Au the Stokes operator applied to the slice.
    """

    grid: GridSpec
    tau: float
    v: np.ndarray
    f: np.ndarray
    flux: np.ndarray
    g: np.ndarray
    B: np.ndarray
    Au: np.ndarray

    @property
    def n_slices(self) -> int:
        return self.v.shape[0]

    def forcing(self) -> np.ndarray:
        """f + g + nu-free Stokes part is not summed here; returns f + g."""
        return self.f + self.g


@dataclass
class KernelCheckReport:
    """Gap between v and its exponential average of later forcing."""

    gap: float
    probe_gaps: np.ndarray
    probe_indices: np.ndarray
    l1_error: float
    l2_error: float


@dataclass
class ELReport:
    """Aggregated stationarity diagnostics of a trajectory."""

    weak_residuals: np.ndarray
    strong_residual_norm: float
    kernel_identity_error: float
    forcing_dual_l1: float
    rate_dual_l2: float
    s: float
    buffer: float = 0.2
    kernel_l1_error: float = 0.0
    kernel_l2_error: float = 0.0

    @property
    def weak_max(self) -> float:
        return float(np.max(np.abs(self.weak_residuals))) if len(self.weak_residuals) else 0.0

    def as_dict(self) -> dict:
        return {
            "weak_max": self.weak_max,
            "strong_norm": self.strong_residual_norm,
            "kernel_gap": self.kernel_identity_error,
            "s": self.s,
            "buffer": self.buffer,
        }


def _mask_project_hat(ahat: np.ndarray, grid: GridSpec) -> np.ndarray:
    out = spectral.apply_dealias(spectral.project_hat(ahat, grid), grid)
    spectral.zero_mean_hat(out, grid)
    return out


def assemble_el_terms(traj: Trajectory, params: WideParams) -> ELTerms:
    """Build v, f, flux, g, B, and Au for slices 1..N.

    The weight m = D + (1 + sigma) C is dealiased before entering the
    products, matching the functional's exact first variation; for
    trajectories in the resolved band this changes nothing.
    """
    grid = traj.grid
    tau = traj.tau
    U = traj.data
    uhat = spectral.fft_spatial(U, grid)
    dhat = (uhat[1:] - uhat[:-1]) / tau
    du = spectral.grad_tensor_from_hat(uhat[1:], grid)
    if params.convection:
        craw = spectral.contract_velocity_gradient(U[1:], du, grid)
        chat = spectral.apply_dealias(spectral.fft_spatial(craw, grid), grid)
    else:
        chat = np.zeros_like(dhat)
    mhat = dhat + chat
    rhat = spectral.apply_dealias(dhat, grid) + (1.0 + params.sigma) * chat

    vhat = _mask_project_hat(mhat.copy(), grid)
    v = spectral.ifft_spatial(vhat, grid)
    B = spectral.ifft_spatial(_mask_project_hat(chat.copy(), grid), grid)

    rt = spectral.ifft_spatial(rhat, grid)
    f = params.epsilon * np.sum(du * np.expand_dims(rt, -(grid.dim + 1)), axis=-(grid.dim + 2))
    flux = params.epsilon * (
        np.expand_dims(rt, -(grid.dim + 1)) * np.expand_dims(U[1:], -(grid.dim + 2))
    )
    ghat = -spectral.tensor_divergence_hat(spectral.fft_spatial(flux, grid), grid)
    g = spectral.ifft_spatial(ghat, grid)
    Au = spectral.ifft_spatial(
        -spectral.laplacian_hat(spectral.apply_dealias(uhat[1:], grid), grid), grid
    )
    return ELTerms(grid=grid, tau=tau, v=v, f=f, flux=flux, g=g, B=B, Au=Au)


def _validate_test(traj: Trajectory, phi: Trajectory) -> None:
    if phi.grid != traj.grid:
        raise ValueError("test trajectory lives on a different grid")
    if phi.n_steps != traj.n_steps or abs(phi.tau - traj.tau) > 1e-12 * traj.tau:
        raise ValueError("test trajectory must share the time grid of the trajectory")
    scale = float(np.max(np.abs(phi.data))) or 1.0
    if float(np.max(np.abs(phi.data[0]))) > 1e-12 * scale:
        raise ValueError("test function must vanish at t = 0")
    if float(np.max(np.abs(phi.data[-1]))) > 1e-12 * scale:
        raise ValueError("test function must vanish at t = T")
    ph = spectral.fft_spatial(phi.data, phi.grid)
    div = spectral.divergence_hat(ph, phi.grid)
    if float(np.max(np.abs(div))) > 1e-8 * (1.0 + float(np.max(np.abs(ph)))):
        raise ValueError("test function must be divergence-free")
    resolved = spectral.apply_dealias(ph, phi.grid)
    if float(np.max(np.abs(resolved - ph))) > 1e-10 * (1.0 + float(np.max(np.abs(ph)))):
        raise ValueError("test function must be band-limited to the dealiasing cutoff")


def weak_el_residual(
    traj: Trajectory, params: WideParams, tests: list
) -> np.ndarray:
    """Discrete weak stationarity pairing for each test trajectory.

    Evaluates, with the functional's own quadrature, the discrete form
    of the unweighted weak equation

        int (du/dt + u.grad u) . [phi + eps dphi/dt + eps phi.grad u
            + eps u.grad phi]
        + sigma eps (u.grad u) . [phi.grad u + u.grad phi]
        + nu grad u : grad phi  dx dt

    which is the first variation of the functional against the
    exponentially amplified test e^{t/eps} phi.  The amplification
    cancels against the weights slab by slab (w_n e^{t_n/eps} is
    constant in n), so the assembly below is stable for every eps.
    Vanishes to optimizer tolerance at discrete minimizers.
    """
    grid = traj.grid
    tau = traj.tau
    n_steps = traj.n_steps
    U = traj.data
    eps = params.epsilon
    uhat = spectral.fft_spatial(U, grid)
    dhat = (uhat[1:] - uhat[:-1]) / tau
    du = spectral.grad_tensor_from_hat(uhat[1:], grid)
    if params.convection:
        craw = spectral.contract_velocity_gradient(U[1:], du, grid)
        chat = spectral.apply_dealias(spectral.fft_spatial(craw, grid), grid)
    else:
        chat = np.zeros_like(dhat)
    mhat = dhat + chat
    weight_hat = spectral.apply_dealias(mhat, grid) + params.sigma * chat
    weight = spectral.ifft_spatial(weight_hat, grid)
    m = spectral.ifft_spatial(mhat, grid)
    kappa = (eps / tau) * np.expm1(tau / eps)
    decay = np.exp(-tau / eps)
    pf = spectral.parseval_factor(grid)
    k2 = wavenumber_sq(grid)

    out = np.empty(len(tests))
    for j, phi in enumerate(tests):
        _validate_test(traj, phi)
        P = phi.data
        phat = spectral.fft_spatial(P, grid)
        dphi_eps = (P[1:] - decay * P[:-1]) / tau
        dphi = spectral.grad_tensor_from_hat(phat[1:], grid)
        if params.convection:
            conv_var = spectral.contract_velocity_gradient(P[1:], du, grid)
            conv_var += spectral.contract_velocity_gradient(U[1:], dphi, grid)
        else:
            conv_var = np.zeros_like(P[1:])
        cell = grid.cell_volume
        axes = tuple(range(1, 2 + grid.dim))
        term_time = cell * np.sum(m * dphi_eps, axis=axes)
        term_conv = cell * np.sum(weight * conv_var, axis=axes)
        cross = uhat[1:].real * phat[1:].real + uhat[1:].imag * phat[1:].imag
        term_visc = (params.nu / eps) * pf * np.sum(k2 * cross, axis=axes)
        out[j] = eps * kappa * tau * float(np.sum(term_time + term_conv + term_visc))
    return out


def weak_residual_bound(
    tests: list, params: WideParams, tau: float, grad_norm: float
) -> np.ndarray:
    """Upper bound on |weak_el_residual| from the gradient norm.

    Cauchy-Schwarz in the weighted pairing gives
    |W(phi)| <= eps * grad_norm * sqrt(sum_n tau w_n e^{2 t_n / eps}
    ||phi_n||^2).
    """
    out = np.empty(len(tests))
    for j, phi in enumerate(tests):
        n_steps = phi.n_steps
        w = exp_weights(params, tau, n_steps)
        t = np.arange(1, n_steps + 1) * tau
        amp = w * np.exp(2.0 * t / params.epsilon)
        sq = spectral.slicewise_l2_sq(phi.data[1:], phi.grid)
        out[j] = params.epsilon * grad_norm * float(np.sqrt(np.sum(tau * amp * sq)))
    return out


def strong_el_residual(
    traj: Trajectory,
    params: WideParams,
    s: SobolevIndex | float = -3.0,
    buffer: float = 0.2,
    terms: ELTerms | None = None,
) -> float:
    """Time-aggregated dual norm of the pointwise stationarity defect.

    Assembles the discrete form of -eps dv/dt + v + f + g + nu A u on
    interior slices (n >= 2, t_n <= (1 - buffer) T).  The time stencil is
    the exact adjoint of the functional's backward difference,

        R_n = -eps q (v_{n+1} - v_n)/tau + c v_n + f_n + g_n + nu A u_n,

    with q = e^{-tau/eps} and c = eps (1 - q)/tau (both -> 1 resp. 1 as
    tau/eps -> 0, recovering the continuum equation).  With these factors
    R_n is the slice-n gradient rescaled by eps/(tau w_n), so the norm
    vanishes at a discrete minimizer to optimizer tolerance instead of
    stalling at the time-discretization error.  Each slice is projected
    onto the resolved divergence-free space (the strong equation holds
    against solenoidal tests, so residuals are modulo pressure); returns
    sqrt(sum tau ||R_n||_{H^s}^2).
    """
    if not 0.0 <= buffer < 1.0:
        raise ValueError("buffer must lie in [0, 1)")
    sval = float(s)
    if terms is None:
        terms = assemble_el_terms(traj, params)
    tau = traj.tau
    n_steps = traj.n_steps
    n_max = min(int(np.floor((1.0 - buffer) * n_steps + 1e-9)), n_steps - 1)
    if n_max < 2:
        return 0.0
    decay = float(np.exp(-tau / params.epsilon))
    relax = params.epsilon * (1.0 - decay) / tau
    v = terms.v
    R = (
        -params.epsilon * decay * (v[1:] - v[:-1]) / tau
        + relax * v[:-1]
        + terms.f[:-1]
        + terms.g[:-1]
        + params.nu * terms.Au[:-1]
    )
    R = R[1 : n_max]
    rhat = _mask_project_hat(spectral.fft_spatial(R, traj.grid), traj.grid)
    norms_sq = spectral.sobolev_norm_sq_hat(rhat, sval, traj.grid, batch_axes=1)
    return float(np.sqrt(np.sum(tau * norms_sq)))


def kernel_norms(params: WideParams) -> tuple:
    """L1 and L2 norms of the exponential kernel, by quadrature.

    The kernel t -> (1/eps) e^{-t/eps} on (0, infinity) has unit mass
    and L2 norm 1/sqrt(2 eps)."""
    eps = params.epsilon
    l1, _ = quad(lambda t: np.exp(-t / eps) / eps, 0.0, np.inf)
    l2_sq, _ = quad(lambda t: np.exp(-2.0 * t / eps) / eps**2, 0.0, np.inf)
    return float(l1), float(np.sqrt(l2_sq))


def kernel_convolution_check(
    traj: Trajectory,
    params: WideParams,
    s: SobolevIndex | float = -3.0,
    n_probes: int = 8,
    probe_span: float = 0.6,
    terms: ELTerms | None = None,
) -> KernelCheckReport:
    """Verify the exponential-average representation of v.

    At stationarity the recursion for v unrolls to

        v_p = -(tau/eps) sum_{n >= p} e^{(t_p - t_n)/eps}
              P(f_n + g_n + nu A u_n),

    which is the discrete form of convolving the forcing with the
    exponential kernel.  Returns the sup over probe slices of the H^s
    gap, together with quadrature checks of the kernel's L1 and L2
    norms.  Probes cover [0, probe_span * T]; the first slice is the
    earliest usable probe.
    """
    if terms is None:
        terms = assemble_el_terms(traj, params)
    grid = traj.grid
    tau = traj.tau
    eps = params.epsilon
    n_steps = traj.n_steps
    sval = float(s)

    h = terms.f + terms.g + params.nu * terms.Au
    hhat = _mask_project_hat(spectral.fft_spatial(h, grid), grid)
    vhat = spectral.fft_spatial(terms.v, grid)

    probe_times = np.linspace(0.0, probe_span * n_steps * tau, n_probes)
    probes = np.unique(np.clip(np.rint(probe_times / tau).astype(int), 1, n_steps))
    q = np.exp(-tau / eps)
    gaps = np.empty(len(probes))
    for i, p in enumerate(probes):
        idx = np.arange(p, n_steps + 1)
        wts = q ** (idx - p)
        shape = (len(idx),) + (1,) * (grid.dim + 1)
        rhs = -(tau / eps) * np.sum(wts.reshape(shape) * hhat[p - 1 :], axis=0)
        gap_sq = spectral.sobolev_norm_sq_hat(vhat[p - 1] - rhs, sval, grid, batch_axes=0)
        gaps[i] = np.sqrt(gap_sq)
    l1, l2 = kernel_norms(params)
    return KernelCheckReport(
        gap=float(np.max(gaps)),
        probe_gaps=gaps,
        probe_indices=probes,
        l1_error=abs(l1 - 1.0),
        l2_error=abs(l2 - 1.0 / np.sqrt(2.0 * eps)),
    )


def recover_pressure(u_slice: VelocityField, partner_terms: VelocityField | None = None) -> np.ndarray:
    """Pressure of a slice from the periodic Poisson problem.

    Solves Delta p = div(u . grad u) spectrally with zero mean, so that
    grad p is the gradient part of the convection and u . grad u - grad p
    is divergence-free.  partner_terms optionally supplies a
    precomputed convection field.
    """
    grid = u_slice.grid
    if partner_terms is None:
        uhat = spectral.fft_spatial(u_slice.data, grid)
        du = spectral.grad_tensor_from_hat(uhat, grid)
        conv = spectral.contract_velocity_gradient(u_slice.data, du, grid)
        bhat = spectral.apply_dealias(spectral.fft_spatial(conv, grid), grid)
    else:
        if partner_terms.grid != grid:
            raise ValueError("partner terms live on a different grid")
        bhat = spectral.fft_spatial(partner_terms.data, grid)
    div_b = spectral.divergence_hat(bhat, grid)
    phat = -div_b * inverse_wavenumber_sq(grid)
    idx = (0,) * grid.dim
    phat[idx] = 0.0
    return spectral.ifft_spatial(phat, grid)


def default_test_trajectories(grid: GridSpec, tau: float, n_steps: int) -> list:
    """Three canonical smooth tests vanishing at both endpoints.

    Each is a solenoidal spatial profile modulated by sin^2(pi t / T):
    the lowest shear mode, and two seeded band-limited fields.
    """
    x = grid.meshgrid()
    base = np.zeros((grid.dim,) + grid.shape)
    base[0] = np.sin(x[0]) * np.cos(x[1])
    base[1] = -np.cos(x[0]) * np.sin(x[1])
    profiles = [
        base,
        random_solenoidal(grid, seed=11).data,
        random_solenoidal(grid, seed=29, k_cut=2).data,
    ]
    t = np.arange(n_steps + 1) * tau
    bump = np.sin(np.pi * t / (n_steps * tau)) ** 2
    bump[0] = 0.0
    bump[-1] = 0.0
    shape = (n_steps + 1,) + (1,) * (grid.dim + 1)
    return [
        Trajectory(grid, tau, bump.reshape(shape) * p[None], initial_fixed=False)
        for p in profiles
    ]


def el_report(
    traj: Trajectory,
    params: WideParams,
    s: SobolevIndex | float = -3.0,
    buffer: float = 0.2,
    tests: list | None = None,
) -> ELReport:
    """One-stop stationarity report for a trajectory."""
    sval = float(s)
    terms = assemble_el_terms(traj, params)
    if tests is None:
        tests = default_test_trajectories(traj.grid, traj.tau, traj.n_steps)
    weak = weak_el_residual(traj, params, tests)
    strong = strong_el_residual(traj, params, sval, buffer, terms=terms)
    kernel = kernel_convolution_check(traj, params, sval, terms=terms)

    fg_hat = _mask_project_hat(spectral.fft_spatial(terms.f + terms.g, traj.grid), traj.grid)
    fg_norms = np.sqrt(spectral.sobolev_norm_sq_hat(fg_hat, sval, traj.grid, batch_axes=1))
    vhat = spectral.fft_spatial(terms.v, traj.grid)
    v_norms_sq = spectral.sobolev_norm_sq_hat(vhat, sval, traj.grid, batch_axes=1)
    return ELReport(
        weak_residuals=weak,
        strong_residual_norm=strong,
        kernel_identity_error=kernel.gap,
        forcing_dual_l1=float(np.sum(traj.tau * fg_norms)),
        rate_dual_l2=float(np.sqrt(np.sum(traj.tau * v_norms_sq))),
        s=sval,
        buffer=buffer,
        kernel_l1_error=kernel.l1_error,
        kernel_l2_error=kernel.l2_error,
    )
