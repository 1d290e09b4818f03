"""Minimization of the space-time functional and the causal stepper.

The global minimizer runs limited-memory BFGS with a strong Wolfe line
search over the concatenated interior slices of a trajectory.  Slices
stay divergence-free because every gradient is Leray-projected, so the
search happens inside the admissible subspace.  Time preconditioning
rescales slice n by 1/(tau * w_n), which removes the exponential decay
of the weights from the search geometry; it is implemented as the exact
change of variables z_n = sqrt(tau * w_n) u_n, so the stationary points
are untouched.

The incremental path minimizes one implicit slab at a time:

    tau * ( 1/2 ||(w - u_prev)/tau + w.grad w||^2
            + sigma/2 ||w.grad w||^2 ) + nu/2 ||grad w||^2

whose optimality condition is a stabilized backward Euler step of the
incompressible equations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import spectral
from .fields import VelocityField
from .functional import (
    ConfigurationError,
    FunctionalBreakdown,
    Trajectory,
    WideParams,
    exp_weights,
    value_and_raw_gradient,
)

__all__ = [
    "MinimizeOptions",
    "MinimizeReport",
    "minimize_global",
    "step_incremental",
    "run_incremental",
]

EPS_FLOOR_RATIO = 25.0


@dataclass(frozen=True)
class MinimizeOptions:
    """Optimizer knobs.

    grad_tol bounds the preconditioned gradient norm (the L2-in-time,
    weight-rescaled stationarity measure); c1 and c2 are the sufficient
    decrease and curvature constants of the strong Wolfe search.
    """

    max_iters: int = 1000
    grad_tol: float = 1e-6
    memory: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    precondition: bool = True

    def __post_init__(self) -> None:
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if not self.grad_tol > 0.0:
            raise ValueError("grad_tol must be positive")
        if self.memory < 1:
            raise ValueError("memory must be at least 1")
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("need 0 < c1 < c2 < 1")


@dataclass
class MinimizeReport:
    """Outcome of a minimization run."""

    iters: int
    breakdown: FunctionalBreakdown
    grad_norm: float
    converged: bool
    seconds: float
    status: str = "converged"
    n_evals: int = 0
    objective_history: list = dc_field(default_factory=list, repr=False)

    @property
    def total(self) -> float:
        return self.breakdown.total


class NumericsError(FloatingPointError):
    """Raised when the objective stops being finite."""


def _lbfgs(value_grad, x0, pg_norm, options: MinimizeOptions):
    """Deterministic L-BFGS with strong Wolfe line search.

    value_grad maps a flat vector to (f, grad); pg_norm maps a gradient
    to the stationarity measure checked against grad_tol.  Returns
    (x, f, g, pg, iterations, status, n_evals, history).
    """
    evals = [0]

    def vg(x):
        evals[0] += 1
        return value_grad(x)

    x = x0.copy()
    f, g = vg(x)
    if not np.isfinite(f):
        raise NumericsError("objective is not finite at the initial iterate")
    pg = pg_norm(g)
    history = [f]
    s_list: list = []
    y_list: list = []
    rho_list: list = []
    status = "max_iters"
    iters = 0

    for iters in range(1, options.max_iters + 1):
        if pg <= options.grad_tol:
            status = "converged"
            iters -= 1
            break
        d = _two_loop(g, s_list, y_list, rho_list)
        d = -d
        dg = float(np.dot(d, g))
        if not np.isfinite(dg) or dg >= 0.0:
            s_list.clear()
            y_list.clear()
            rho_list.clear()
            d = -g
            dg = -float(np.dot(g, g))
            if dg == 0.0:
                status = "converged" if pg <= options.grad_tol else "stalled"
                break
        if s_list:
            alpha0 = 1.0
        else:
            alpha0 = min(1.0, 1.0 / max(1e-30, float(np.linalg.norm(g))))
        ls = _wolfe_search(vg, x, f, g, d, dg, alpha0, options.c1, options.c2)
        if ls is None and s_list:
            s_list.clear()
            y_list.clear()
            rho_list.clear()
            d = -g
            dg = -float(np.dot(g, g))
            alpha0 = min(1.0, 1.0 / max(1e-30, float(np.linalg.norm(g))))
            ls = _wolfe_search(vg, x, f, g, d, dg, alpha0, options.c1, options.c2)
        if ls is None:
            status = "line_search_failure"
            break
        alpha, f_new, g_new = ls
        s = alpha * d
        y = g_new - g
        sy = float(np.dot(s, y))
        if np.isfinite(sy) and sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / sy)
            if len(s_list) > options.memory:
                s_list.pop(0)
                y_list.pop(0)
                rho_list.pop(0)
        x = x + s
        f, g = f_new, g_new
        pg = pg_norm(g)
        history.append(f)
    else:
        iters = options.max_iters
        if pg <= options.grad_tol:
            status = "converged"

    if pg <= options.grad_tol:
        status = "converged"
    return x, f, g, pg, iters, status, evals[0], history


def _two_loop(g, s_list, y_list, rho_list):
    """Standard two-loop recursion for the inverse Hessian action."""
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
        a = rho * float(np.dot(s, q))
        alphas.append(a)
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        gamma = float(np.dot(s, y)) / max(1e-300, float(np.dot(y, y)))
        q *= gamma
    for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
        b = rho * float(np.dot(y, q))
        q += (a - b) * s
    return q


def _wolfe_search(vg, x, f0, g0, d, dphi0, alpha0, c1, c2, max_bracket=30, max_zoom=50):
    """Strong Wolfe search along d.  Returns (alpha, f, g) or None.

    Non-finite trial values are treated as overshoots.  Near the floating
    point noise floor the sufficient-decrease test becomes unverifiable
    (value differences drown in roundoff while directional derivatives,
    computed from the analytic gradient, stay reliable), so a trial that
    satisfies the curvature condition without measurably increasing the
    value is also accepted.  If no acceptable point is found the best
    sufficient-decrease point is returned (the caller's curvature guard
    skips the resulting update pair).
    """

    def phi(alpha):
        f, g = vg(x + alpha * d)
        return f, g, float(np.dot(g, d))

    f_tol = 1e-12 * (1.0 + abs(f0))
    best_armijo = None
    alpha_prev, phi_prev, dphi_prev = 0.0, f0, dphi0
    alpha = alpha0
    lo = hi = None
    for i in range(max_bracket):
        f_a, g_a, dphi_a = phi(alpha)
        armijo = np.isfinite(f_a) and f_a <= f0 + c1 * alpha * dphi0
        noise_ok = np.isfinite(f_a) and f_a <= f0 + f_tol
        if armijo and (best_armijo is None or f_a < best_armijo[1]):
            best_armijo = (alpha, f_a, g_a)
        if (armijo or noise_ok) and abs(dphi_a) <= -c2 * dphi0:
            return alpha, f_a, g_a
        if not np.isfinite(f_a) or f_a > f0 + c1 * alpha * dphi0 or (i > 0 and f_a >= phi_prev):
            lo, f_lo, dphi_lo, hi = alpha_prev, phi_prev, dphi_prev, alpha
            break
        if dphi_a >= 0.0:
            lo, f_lo, dphi_lo, hi = alpha, f_a, dphi_a, alpha_prev
            break
        alpha_prev, phi_prev, dphi_prev = alpha, f_a, dphi_a
        alpha = 2.0 * alpha
    else:
        return best_armijo

    for _ in range(max_zoom):
        alpha = 0.5 * (lo + hi)
        f_a, g_a, dphi_a = phi(alpha)
        armijo = np.isfinite(f_a) and f_a <= f0 + c1 * alpha * dphi0
        noise_ok = np.isfinite(f_a) and f_a <= f0 + f_tol
        if armijo and (best_armijo is None or f_a < best_armijo[1]):
            best_armijo = (alpha, f_a, g_a)
        if (armijo or noise_ok) and abs(dphi_a) <= -c2 * dphi0:
            return alpha, f_a, g_a
        if not armijo or f_a >= f_lo:
            hi = alpha
        else:
            if dphi_a * (hi - lo) >= 0.0:
                hi = lo
            lo, f_lo, dphi_lo = alpha, f_a, dphi_a
        if abs(hi - lo) <= 1e-14 * max(1.0, abs(lo)):
            break
    return best_armijo


def _pack_scale(grid, weights, tau, precondition):
    if precondition:
        scale = np.sqrt(tau * weights)
    else:
        scale = np.ones_like(weights)
    return scale.reshape((len(weights),) + (1,) * (grid.dim + 1))


def minimize_global(
    traj_init: Trajectory, params: WideParams, options: MinimizeOptions | None = None
) -> tuple:
    """Minimize the functional over interior slices of the trajectory.

    The initial slice is held bit-identical to traj_init's.  Returns
    (trajectory, report); the trajectory is the best iterate found, with
    slices projected back onto the admissible subspace, whether or not
    the gradient tolerance was reached.
    """
    options = options or MinimizeOptions()
    grid = traj_init.grid
    tau = traj_init.tau
    n_steps = traj_init.n_steps
    span = n_steps * tau
    if abs(span - params.horizon_T) > 1e-9 * max(1.0, params.horizon_T):
        raise ConfigurationError(
            f"trajectory spans {span} but horizon_T = {params.horizon_T}"
        )
    if params.epsilon * EPS_FLOOR_RATIO < params.horizon_T * (1.0 - 1e-12):
        raise ConfigurationError(
            f"epsilon = {params.epsilon} is below the floor horizon_T/{EPS_FLOOR_RATIO:g}; "
            "the terminal weight would underflow the preconditioner"
        )

    t_start = time.perf_counter()
    weights = exp_weights(params, tau, n_steps)
    scale = _pack_scale(grid, weights, tau, options.precondition)
    cell = grid.cell_volume
    u0_data = traj_init.data[0].copy()
    interior_shape = (n_steps, grid.dim) + grid.shape

    init_interior = spectral.project_resolved(traj_init.data[1:].copy(), grid)
    work = np.empty((n_steps + 1,) + u0_data.shape)
    work[0] = u0_data

    def value_grad(x):
        work[1:] = x.reshape(interior_shape) / scale
        breakdown, g = value_and_raw_gradient(work, grid, params, tau, weights)
        gz = (cell * g) / scale
        return breakdown.total, gz.ravel()

    inv_sqrt_cell = 1.0 / np.sqrt(cell)
    tw = (tau * weights).reshape(-1)

    if options.precondition:
        def pg_norm(gflat):
            return float(np.linalg.norm(gflat)) * inv_sqrt_cell
    else:
        def pg_norm(gflat):
            gsq = np.sum(gflat.reshape(interior_shape) ** 2, axis=tuple(range(1, 2 + grid.dim)))
            return float(np.sqrt(np.sum(gsq / tw))) * inv_sqrt_cell

    x0 = (init_interior * scale).ravel()
    x, f, g, pg, iters, status, n_evals, history = _lbfgs(value_grad, x0, pg_norm, options)

    final_interior = spectral.project_resolved(x.reshape(interior_shape) / scale, grid)
    out = np.empty_like(work)
    out[0] = u0_data
    out[1:] = final_interior
    traj = Trajectory(grid, tau, out, initial_fixed=True)

    breakdown, g_final = value_and_raw_gradient(out, grid, params, tau, weights)
    pg_final = pg_norm(((cell * g_final) / scale).ravel())
    seconds = time.perf_counter() - t_start
    converged = bool(pg_final <= options.grad_tol)
    if converged:
        status = "converged"
    report = MinimizeReport(
        iters=iters,
        breakdown=breakdown,
        grad_norm=pg_final,
        converged=converged,
        seconds=seconds,
        status=status,
        n_evals=n_evals,
        objective_history=history,
    )
    traj.meta["minimize_status"] = status
    return traj, report


def step_incremental(
    u_prev: VelocityField,
    params: WideParams,
    tau: float,
    options: MinimizeOptions | None = None,
) -> tuple:
    """Advance one implicit slab from u_prev.

    Minimizes the one-step objective over divergence-free w, warm
    started at u_prev.  Returns (w, report) where the report's breakdown
    holds the slab objective value (including the constant viscous
    offset of the previous slice, so exact stationarity at u_prev for
    the linear problem gives a nonpositive value).
    """
    options = options or MinimizeOptions()
    grid = u_prev.grid
    slab_params = WideParams(
        epsilon=tau,
        sigma=params.sigma,
        nu=params.nu,
        horizon_T=tau,
        convection=params.convection,
    )
    weights = np.ones(1)
    cell = grid.cell_volume
    inv_sqrt_cell = 1.0 / np.sqrt(cell)
    prev = spectral.project_resolved(u_prev.data[None].copy(), grid)[0]
    work = np.empty((2,) + prev.shape)
    work[0] = prev
    grad_prev_sq = spectral.slicewise_grad_sq_hat(
        spectral.fft_spatial(prev[None], grid), grid
    )[0]
    offset = 0.5 * params.nu * float(grad_prev_sq)

    t_start = time.perf_counter()

    def value_grad(x):
        work[1] = x.reshape(prev.shape)
        breakdown, g = value_and_raw_gradient(work, grid, slab_params, tau, weights)
        return breakdown.total, (cell * g).ravel()

    def pg_norm(gflat):
        return float(np.linalg.norm(gflat)) * inv_sqrt_cell / np.sqrt(tau)

    x0 = prev.ravel().copy()
    x, f, g, pg, iters, status, n_evals, history = _lbfgs(value_grad, x0, pg_norm, options)
    w = spectral.project_resolved(x.reshape(prev.shape)[None], grid)[0]
    work[1] = w
    breakdown, _ = value_and_raw_gradient(work, grid, slab_params, tau, weights)
    seconds = time.perf_counter() - t_start
    slab_value = breakdown.total - offset
    report = MinimizeReport(
        iters=iters,
        breakdown=FunctionalBreakdown(
            breakdown.inertia, breakdown.stabilization, breakdown.dissipation, slab_value
        ),
        grad_norm=pg,
        converged=bool(pg <= options.grad_tol),
        seconds=seconds,
        status=status,
        n_evals=n_evals,
        objective_history=history,
    )
    return VelocityField(grid, w), report


def run_incremental(
    u0: VelocityField,
    params: WideParams,
    tau: float,
    n_steps: int,
    options: MinimizeOptions | None = None,
) -> Trajectory:
    """Fold step_incremental into a full causal trajectory."""
    options = options or MinimizeOptions()
    grid = u0.grid
    data = np.empty((n_steps + 1, grid.dim) + grid.shape)
    data[0] = spectral.project_resolved(u0.data[None].copy(), grid)[0]
    total_iters = 0
    all_converged = True
    current = VelocityField(grid, data[0])
    for n in range(n_steps):
        current, rep = step_incremental(current, params, tau, options)
        data[n + 1] = current.data
        total_iters += rep.iters
        all_converged = all_converged and bool(rep.converged)
    traj = Trajectory(grid, tau, data)
    traj.meta["incremental_iters"] = total_iters
    traj.meta["incremental_converged"] = all_converged
    return traj
