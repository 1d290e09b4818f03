"""Estimate checks on computed trajectories and the epsilon sweep.

The energy report evaluates the discrete counterparts of the uniform
energy bound (exponential-weight form) and the plain energy inequality.
The a-priori record collects the epsilon-weighted space-time norms and
dual norms whose boundedness the variational construction guarantees.
The sweep drives a family of minimizations at decreasing epsilon against
a single reference solve and tracks convergence trends.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import spectral
from .euler_lagrange import strong_el_residual
from .fields import VelocityField
from .functional import (
    ConfigurationError,
    FunctionalBreakdown,
    Trajectory,
    WideParams,
)
from .grid import GridSpec
from .io import rows_to_csv
from .optimize import (
    EPS_FLOOR_RATIO,
    MinimizeOptions,
    minimize_global,
)
from .reference import projection_solve

__all__ = [
    "EnergyReport",
    "AprioriBounds",
    "SigmaCertificate",
    "SweepConfig",
    "SweepEntry",
    "SweepReport",
    "energy_report",
    "apriori_bounds",
    "sigma_certificate",
    "epsilon_sweep",
]


@dataclass
class EnergyReport:
    """Discrete energy balance along a trajectory.

    lhs_unif[n] carries the damped dissipation weight (1 - e^{-t_m/eps})
    on each quadrature cell, lhs_ei[n] the plain weight 1; both are
    compared against the initial energy rhs.  Slacks are relative."""

    times: np.ndarray
    u_sq: np.ndarray
    grad_sq: np.ndarray
    lhs_unif: np.ndarray
    lhs_ei: np.ndarray
    rhs: float
    slack_unif: np.ndarray
    slack_ei: np.ndarray
    probe_count: int
    tol_energy: float
    violation: bool

    def to_csv(self) -> str:
        header = [
            "time",
            "u_sq",
            "grad_sq",
            "lhs_unif",
            "lhs_ei",
            "rhs",
            "slack_unif",
            "slack_ei",
        ]
        rows = []
        for n in range(len(self.times)):
            rows.append(
                [
                    self.times[n],
                    self.u_sq[n],
                    self.grad_sq[n],
                    self.lhs_unif[n],
                    self.lhs_ei[n],
                    self.rhs,
                    self.slack_unif[n],
                    self.slack_ei[n],
                ]
            )
        return rows_to_csv(header, rows)

    def as_dict(self) -> dict:
        return {
            "rhs": self.rhs,
            "max_slack_unif": float(np.max(self.slack_unif[: self.probe_count])),
            "max_slack_ei": float(np.max(self.slack_ei[: self.probe_count])),
            "tol_energy": self.tol_energy,
            "violation": self.violation,
        }


def energy_report(
    traj: Trajectory,
    params: WideParams,
    tol_energy: float = 0.05,
    t_obs_fraction: float = 0.8,
) -> EnergyReport:
    """Evaluate both energy-inequality forms with the functional's quadrature.

    The violation flag fires when the damped-weight left side exceeds the
    initial energy by more than tol_energy (relative) at any slice time
    in [0, t_obs_fraction * T]."""
    grid = traj.grid
    tau = traj.tau
    n_steps = traj.n_steps
    uhat = spectral.fft_spatial(traj.data, grid)
    u_sq = spectral.slicewise_l2_sq_hat(uhat, grid)
    grad_sq = spectral.slicewise_grad_sq_hat(uhat, grid)
    times = tau * np.arange(n_steps + 1)
    damp = 1.0 - np.exp(-times[1:] / params.epsilon)
    diss_unif = np.concatenate(
        ([0.0], np.cumsum(2.0 * params.nu * tau * damp * grad_sq[1:]))
    )
    diss_ei = np.concatenate(
        ([0.0], np.cumsum(2.0 * params.nu * tau * grad_sq[1:]))
    )
    lhs_unif = u_sq + diss_unif
    lhs_ei = u_sq + diss_ei
    rhs = float(u_sq[0])
    denom = max(rhs, np.finfo(float).tiny)
    slack_unif = (lhs_unif - rhs) / denom
    slack_ei = (lhs_ei - rhs) / denom
    t_obs = t_obs_fraction * n_steps * tau
    probe_count = int(np.sum(times <= t_obs + 1e-9 * max(tau, 1.0)))
    violation = bool(np.any(slack_unif[:probe_count] > tol_energy))
    return EnergyReport(
        times=times,
        u_sq=u_sq,
        grad_sq=grad_sq,
        lhs_unif=lhs_unif,
        lhs_ei=lhs_ei,
        rhs=rhs,
        slack_unif=slack_unif,
        slack_ei=slack_ei,
        probe_count=probe_count,
        tol_energy=tol_energy,
        violation=violation,
    )


@dataclass
class AprioriBounds:
    """Space-time norms the minimization keeps uniformly bounded in eps.

    eps_dt_sq and eps_conv_sq are eps times the squared L2(0,T;L2) norms
    of the discrete rate and of the convection field; dt_dual and bu_dual
    are the L2-in-time dual H^s norms of the rate and of the projected
    convection.  Ratios are normalized by the initial energy c0 so runs
    with different eps and data can be compared on one scale."""

    eps_dt_sq: float
    eps_conv_sq: float
    dt_dual: float
    bu_dual: float
    c0: float
    ratio_dt: float
    ratio_conv: float
    ratio_dt_dual: float
    ratio_bu_dual: float
    s: float

    def as_dict(self) -> dict:
        return {
            "eps_dt_sq": self.eps_dt_sq,
            "eps_conv_sq": self.eps_conv_sq,
            "dt_dual": self.dt_dual,
            "bu_dual": self.bu_dual,
            "c0": self.c0,
            "ratio_dt": self.ratio_dt,
            "ratio_conv": self.ratio_conv,
            "ratio_dt_dual": self.ratio_dt_dual,
            "ratio_bu_dual": self.ratio_bu_dual,
            "s": self.s,
        }


def apriori_bounds(
    traj: Trajectory, params: WideParams, s: float = -3.0
) -> AprioriBounds:
    grid = traj.grid
    tau = traj.tau
    n_steps = traj.n_steps
    rate = (traj.data[1:] - traj.data[:-1]) / tau
    conv = np.stack(
        [spectral.convect(traj.data[n], grid) for n in range(1, n_steps + 1)]
    )
    rate_hat = spectral.fft_spatial(rate, grid)
    conv_hat = spectral.fft_spatial(conv, grid)
    rate_sq = spectral.slicewise_l2_sq_hat(rate_hat, grid)
    conv_sq = spectral.slicewise_l2_sq_hat(conv_hat, grid)
    eps_dt_sq = float(params.epsilon * tau * np.sum(rate_sq))
    eps_conv_sq = float(params.epsilon * tau * np.sum(conv_sq))
    sval = float(s)
    rate_dual_sq = spectral.sobolev_norm_sq_hat(rate_hat, sval, grid, batch_axes=1)
    bu_hat = spectral.project_hat(conv_hat, grid)
    bu_dual_sq = spectral.sobolev_norm_sq_hat(bu_hat, sval, grid, batch_axes=1)
    dt_dual = float(np.sqrt(tau * np.sum(rate_dual_sq)))
    bu_dual = float(np.sqrt(tau * np.sum(bu_dual_sq)))
    c0 = spectral.l2_norm_sq(traj.data[0], grid)
    denom = max(c0, np.finfo(float).tiny)
    return AprioriBounds(
        eps_dt_sq=eps_dt_sq,
        eps_conv_sq=eps_conv_sq,
        dt_dual=dt_dual,
        bu_dual=bu_dual,
        c0=c0,
        ratio_dt=eps_dt_sq / denom,
        ratio_conv=eps_conv_sq / denom,
        ratio_dt_dual=dt_dual**2 / denom,
        ratio_bu_dual=bu_dual**2 / denom,
        s=sval,
    )


@dataclass
class SigmaCertificate:
    sigma: float
    nu: float
    c: float
    valid: bool

    def as_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "nu": self.nu,
            "c": self.c,
            "valid": self.valid,
        }


def sigma_certificate(params: WideParams) -> SigmaCertificate:
    """Large-time decay coefficient and its validity window.

    c = min{1, 2 sigma - 1/4, nu} (1 - 1/e); the certificate is void when
    sigma <= 1/8 (the stabilization term is too weak to control the
    inertial part) or when there is no viscosity."""
    c = min(1.0, 2.0 * params.sigma - 0.25, params.nu) * (1.0 - np.exp(-1.0))
    valid = bool(params.sigma > 0.125 and params.nu > 0.0)
    return SigmaCertificate(
        sigma=params.sigma, nu=params.nu, c=float(c), valid=valid
    )


@dataclass
class SweepConfig:
    """Inputs shared by all members of an epsilon sweep."""

    u0: VelocityField
    eps_list: tuple
    sigma: float
    nu: float
    tau: float
    n_steps: int
    convection: bool = True
    sigma_alt: float | None = 1.0
    options: MinimizeOptions = dataclass_field(default_factory=MinimizeOptions)
    dual_s: float = -3.0
    buffer: float = 0.2
    t_obs_fraction: float = 0.8
    trend_slack: float = 0.10


@dataclass
class SweepEntry:
    eps: float
    dist_l2h1: float
    dist_cl2: float
    breakdown: FunctionalBreakdown
    eps_dt_sq: float
    eps_conv_sq: float
    strong_res: float
    grad_norm: float
    iters: int
    converged: bool

    def as_dict(self) -> dict:
        return {
            "eps": self.eps,
            "dist_L2H1": self.dist_l2h1,
            "dist_CL2": self.dist_cl2,
            "total": self.breakdown.total,
            "inertia": self.breakdown.inertia,
            "stab": self.breakdown.stabilization,
            "diss": self.breakdown.dissipation,
            "eps_dt2": self.eps_dt_sq,
            "eps_conv2": self.eps_conv_sq,
            "strong_res": self.strong_res,
            "grad_norm": self.grad_norm,
            "iters": self.iters,
            "converged": self.converged,
        }


@dataclass
class SweepReport:
    entries: list
    trend_ok: bool
    partial: bool
    failed_eps: list
    t_obs: float
    sigma: float
    sigma_alt: float | None
    sigma_pair_distance: float | None
    eps_extreme_distance: float | None
    reference: Trajectory
    trajectories: dict
    alt_trajectory: Trajectory | None

    def to_csv(self) -> str:
        header = [
            "eps",
            "dist_L2H1",
            "dist_CL2",
            "total",
            "inertia",
            "stab",
            "diss",
            "eps_dt2",
            "eps_conv2",
            "strong_res",
        ]
        rows = [[e.as_dict()[k] for k in header] for e in self.entries]
        return rows_to_csv(header, rows)

    def as_dict(self) -> dict:
        return {
            "entries": [e.as_dict() for e in self.entries],
            "trend_ok": self.trend_ok,
            "partial": self.partial,
            "failed_eps": list(self.failed_eps),
            "t_obs": self.t_obs,
            "sigma": self.sigma,
            "sigma_alt": self.sigma_alt,
            "sigma_pair_distance": self.sigma_pair_distance,
            "eps_extreme_distance": self.eps_extreme_distance,
        }


def _h1_weight_sq_hat(data: np.ndarray, grid: GridSpec) -> np.ndarray:
    hat = spectral.fft_spatial(data, grid)
    return spectral.sobolev_norm_sq_hat(hat, 1.0, grid, batch_axes=1)


def _rel_l2h1(
    a: np.ndarray, b: np.ndarray, grid: GridSpec, tau: float, n_obs: int, den: float
) -> float:
    num_sq = tau * np.sum(_h1_weight_sq_hat(a[: n_obs + 1] - b[: n_obs + 1], grid))
    return float(np.sqrt(num_sq) / den)


def _rel_cl2(
    a: np.ndarray, b: np.ndarray, grid: GridSpec, n_obs: int, den: float
) -> float:
    diff = a[: n_obs + 1] - b[: n_obs + 1]
    hat = spectral.fft_spatial(diff, grid)
    sq = spectral.slicewise_l2_sq_hat(hat, grid)
    return float(np.sqrt(np.max(sq)) / den)


def _constant_extension(u0_data: np.ndarray, n_steps: int) -> np.ndarray:
    return np.repeat(u0_data[None], n_steps + 1, axis=0).copy()


def _sweep_member(job: tuple):
    """Run one minimization; module-level so process pools can pickle it."""
    grid, tau, n_steps, u0_data, eps, sigma, nu, convection, options = job
    params = WideParams(
        epsilon=eps,
        sigma=sigma,
        nu=nu,
        horizon_T=tau * n_steps,
        convection=convection,
    )
    init = Trajectory(grid, tau, _constant_extension(u0_data, n_steps))
    traj, report = minimize_global(init, params, options)
    return traj.data, report


def epsilon_sweep(cfg: SweepConfig, workers: int = 1) -> SweepReport:
    """Minimize at each eps in decreasing order against one reference solve.

    Members are independent and run in parallel processes when workers
    exceeds one; results are merged in eps order either way, so the
    report does not depend on scheduling.  A non-converged member marks
    the sweep partial (its entry is still reported)."""
    eps_list = tuple(float(e) for e in cfg.eps_list)
    if len(eps_list) == 0:
        raise ConfigurationError("eps_list must be non-empty")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigurationError("eps_list must be strictly decreasing")
    horizon = cfg.tau * cfg.n_steps
    for eps in eps_list:
        if eps * EPS_FLOOR_RATIO < horizon * (1.0 - 1e-12):
            raise ConfigurationError(
                f"epsilon {eps} is below the floor horizon_T/{EPS_FLOOR_RATIO:g}"
                f" = {horizon / EPS_FLOOR_RATIO:g}"
            )
    grid = cfg.u0.grid
    u0_data = spectral.project_resolved(cfg.u0.data, grid)

    jobs = [
        (grid, cfg.tau, cfg.n_steps, u0_data, eps, cfg.sigma, cfg.nu,
         cfg.convection, cfg.options)
        for eps in eps_list
    ]
    if cfg.sigma_alt is not None:
        jobs.append(
            (grid, cfg.tau, cfg.n_steps, u0_data, eps_list[-1], cfg.sigma_alt,
             cfg.nu, cfg.convection, cfg.options)
        )
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_member, jobs))
    else:
        results = [_sweep_member(job) for job in jobs]

    u0_field = VelocityField(grid, u0_data)
    reference = projection_solve(
        u0_field, cfg.nu, cfg.tau, cfg.n_steps, convection=cfg.convection
    )
    n_obs = int(np.floor(cfg.t_obs_fraction * cfg.n_steps + 1e-9))
    t_obs = n_obs * cfg.tau
    den_h1 = float(
        np.sqrt(
            cfg.tau
            * np.sum(_h1_weight_sq_hat(reference.data[: n_obs + 1], grid))
        )
    )
    ref_hat = spectral.fft_spatial(reference.data[: n_obs + 1], grid)
    den_cl2 = float(
        np.sqrt(np.max(spectral.slicewise_l2_sq_hat(ref_hat, grid)))
    )

    entries = []
    trajectories = {}
    failed = []
    for eps, (data, report) in zip(eps_list, results):
        traj = Trajectory(grid, cfg.tau, data)
        params = WideParams(
            epsilon=eps,
            sigma=cfg.sigma,
            nu=cfg.nu,
            horizon_T=horizon,
            convection=cfg.convection,
        )
        bounds = apriori_bounds(traj, params, s=cfg.dual_s)
        entries.append(
            SweepEntry(
                eps=eps,
                dist_l2h1=_rel_l2h1(
                    traj.data, reference.data, grid, cfg.tau, n_obs, den_h1
                ),
                dist_cl2=_rel_cl2(traj.data, reference.data, grid, n_obs, den_cl2),
                breakdown=report.breakdown,
                eps_dt_sq=bounds.eps_dt_sq,
                eps_conv_sq=bounds.eps_conv_sq,
                strong_res=strong_el_residual(
                    traj, params, s=cfg.dual_s, buffer=cfg.buffer
                ),
                grad_norm=report.grad_norm,
                iters=report.iters,
                converged=report.converged,
            )
        )
        trajectories[eps] = traj
        if not report.converged:
            failed.append(eps)

    dists = [e.dist_l2h1 for e in entries]
    trend_ok = all(
        later <= earlier * (1.0 + cfg.trend_slack)
        for earlier, later in zip(dists, dists[1:])
    )

    sigma_pair_distance = None
    alt_trajectory = None
    if cfg.sigma_alt is not None:
        alt_data, alt_report = results[len(eps_list)]
        alt_trajectory = Trajectory(grid, cfg.tau, alt_data)
        sigma_pair_distance = _rel_l2h1(
            trajectories[eps_list[-1]].data, alt_data, grid, cfg.tau, n_obs, den_h1
        )
        if not alt_report.converged:
            failed.append(("sigma_alt", eps_list[-1]))

    eps_extreme_distance = None
    if len(eps_list) > 1:
        eps_extreme_distance = _rel_l2h1(
            trajectories[eps_list[0]].data,
            trajectories[eps_list[-1]].data,
            grid,
            cfg.tau,
            n_obs,
            den_h1,
        )

    return SweepReport(
        entries=entries,
        trend_ok=bool(trend_ok),
        partial=bool(failed),
        failed_eps=failed,
        t_obs=t_obs,
        sigma=cfg.sigma,
        sigma_alt=cfg.sigma_alt,
        sigma_pair_distance=sigma_pair_distance,
        eps_extreme_distance=eps_extreme_distance,
        reference=reference,
        trajectories=trajectories,
        alt_trajectory=alt_trajectory,
    )
