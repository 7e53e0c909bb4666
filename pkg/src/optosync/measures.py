"""Diagnostics extracted from trajectories and covariance states.

Covers the synchronization story end to end: first-order (mean-value) errors
under the generalized mappings, the second-order measure built from error
fluctuation variances, time averages, limit-cycle geometry, robustness
against controller noise, perturbation-growth exponents of the errors, and
the entanglement monotone of the two-mirror Gaussian state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import IntegratorConfig, Trajectory, dual_error_divergence
from .model import ControlLaw, MeanState, SystemParams

__all__ = [
    "WindowTooShort",
    "EmptyWindow",
    "NoOscillation",
    "WindowMismatch",
    "NonPhysical",
    "Identity",
    "ConstantShift",
    "TimeShift",
    "GeneralizedMapping",
    "LimitCycleStats",
    "NegativityResult",
    "first_order_errors",
    "sync_measure",
    "sync_series",
    "time_averaged_sync",
    "limit_cycle_stats",
    "log_magnitude_slope",
    "lyapunov_exponent",
    "negativity",
    "max_negativity",
    "robustness",
]

SYNC_BRACKET_FLOOR = 1e-15  # below this summed variance the measure is reported as +inf


class WindowTooShort(ValueError):
    """Trajectory does not span the requested lag or window."""


class EmptyWindow(ValueError):
    """No samples fall inside the averaging window."""


class NoOscillation(ValueError):
    """Too few zero crossings to identify a cycle."""


class WindowMismatch(ValueError):
    """Paired trajectories do not share grid, parameters or law."""


class NonPhysical(ValueError):
    """Covariance block is not a valid two-mode Gaussian state."""


# --- generalized mappings -----------------------------------------------------


@dataclass(frozen=True)
class Identity:
    """h(x) = x; recovers plain synchronization."""

    def map_series(self, t: np.ndarray, q: np.ndarray, p: np.ndarray):
        return q, p


@dataclass(frozen=True)
class ConstantShift:
    """Rigid position offset h(q) = q + c (momentum untouched): two limit
    cycles translated along the position axis agree under this mapping."""

    c: float

    def map_series(self, t: np.ndarray, q: np.ndarray, p: np.ndarray):
        return q + self.c, p


@dataclass(frozen=True)
class TimeShift:
    """Replay lag h(x)(t) = x(t - tau) on both quadratures, evaluated by the
    same linear interpolation the integrator uses (constant before t = 0)."""

    tau: float

    def __post_init__(self):
        if self.tau < 0.0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")

    def map_series(self, t: np.ndarray, q: np.ndarray, p: np.ndarray):
        return np.interp(t - self.tau, t, q), np.interp(t - self.tau, t, p)


GeneralizedMapping = Identity | ConstantShift | TimeShift


@dataclass(frozen=True)
class LimitCycleStats:
    """Mean radius and period of a phase-space cycle over a time window."""

    r: float
    period: float
    window: tuple[float, float]


@dataclass(frozen=True)
class NegativityResult:
    """Two-mirror Gaussian entanglement diagnostics: the 4x4 mechanical
    covariance block, its symplectic invariant, the smallest
    partial-transpose symplectic eigenvalue and the resulting negativity."""

    gamma_mat: np.ndarray
    delta_gamma: float
    nu_minus: float
    e_n: float


# --- first and second order synchronization ----------------------------------


def first_order_errors(
    traj: Trajectory, h1: GeneralizedMapping, h2: GeneralizedMapping
) -> tuple[np.ndarray, np.ndarray]:
    """Mean-value error series (h1(q1) - h2(q2), h1(p1) - h2(p2)) on the
    trajectory's sample grid."""
    span = traj.t[-1] - traj.t[0]
    for h in (h1, h2):
        if isinstance(h, TimeShift) and h.tau > span:
            raise WindowTooShort(
                f"lag {h.tau} exceeds the trajectory span {span:g}"
            )
    q1m, p1m = h1.map_series(traj.t, traj.q1, traj.p1)
    q2m, p2m = h2.map_series(traj.t, traj.q2, traj.p2)
    return q1m - q2m, p1m - p2m


def sync_measure(d: np.ndarray) -> float:
    """Second-order synchronization measure: inverse summed variance of the
    error quadrature fluctuations,

        { [D33 + D55 - 2 D35]/2 + [D44 + D66 - 2 D46]/2 }^-1

    (one-based indices).  Perfectly correlated fluctuations drive the bracket
    to zero; that case is reported as +inf."""
    bracket = 0.5 * (d[2, 2] + d[4, 4] - 2.0 * d[2, 4]) + 0.5 * (
        d[3, 3] + d[5, 5] - 2.0 * d[3, 5]
    )
    if bracket <= SYNC_BRACKET_FLOOR:
        return math.inf
    return 1.0 / bracket


def sync_series(cov: np.ndarray) -> np.ndarray:
    """Vectorized `sync_measure` over a stack of covariance matrices."""
    bracket = 0.5 * (cov[:, 2, 2] + cov[:, 4, 4] - 2.0 * cov[:, 2, 4]) + 0.5 * (
        cov[:, 3, 3] + cov[:, 5, 5] - 2.0 * cov[:, 3, 5]
    )
    out = np.full(bracket.shape, np.inf)
    ok = bracket > SYNC_BRACKET_FLOOR
    out[ok] = 1.0 / bracket[ok]
    return out


def time_averaged_sync(
    traj: Trajectory,
    window: tuple[float, float],
    return_excluded: bool = False,
) -> float | tuple[float, int]:
    """Arithmetic mean of the second-order measure over the window; +inf
    samples (perfect correlation sentinels) are excluded and counted."""
    if traj.sg is None:
        raise ValueError("trajectory was recorded without covariances")
    mask = traj.window_mask(*window)
    if not mask.any():
        raise EmptyWindow(f"no samples in window {window}")
    vals = traj.sg[mask]
    finite = np.isfinite(vals)
    excluded = int((~finite).sum())
    if not finite.any():
        raise EmptyWindow("window contains only unbounded samples")
    mean = float(vals[finite].mean())
    if return_excluded:
        return mean, excluded
    return mean


# --- limit-cycle geometry ------------------------------------------------------


def limit_cycle_stats(
    traj: Trajectory, oscillator: int, window: tuple[float, float]
) -> LimitCycleStats:
    """Mean radius about the phase-space centroid and period from upward zero
    crossings of the centered position, over a post-transient window."""
    if oscillator == 1:
        q, p = traj.q1, traj.p1
    elif oscillator == 2:
        q, p = traj.q2, traj.p2
    else:
        raise ValueError(f"oscillator must be 1 or 2, got {oscillator}")
    mask = traj.window_mask(*window)
    if not mask.any():
        raise EmptyWindow(f"no samples in window {window}")
    t = traj.t[mask]
    q = q[mask]
    p = p[mask]
    qc = q.mean()
    pc = p.mean()
    r = float(np.hypot(q - qc, p - pc).mean())

    y = q - qc
    up = (y[:-1] < 0.0) & (y[1:] >= 0.0)
    idx = np.nonzero(up)[0]
    if len(idx) < 3:
        raise NoOscillation(
            f"only {len(idx)} upward crossings in window {window}; need >= 3"
        )
    frac = -y[idx] / (y[idx + 1] - y[idx])
    t_cross = t[idx] + frac * (t[idx + 1] - t[idx])
    period = float(np.diff(t_cross).mean())
    return LimitCycleStats(r=r, period=period, window=window)


# --- perturbation growth of the errors ----------------------------------------


def log_magnitude_slope(t: np.ndarray, values: np.ndarray) -> float:
    """Least-squares slope of ln|values| against t; exact zeros are skipped.
    Returns -inf when fewer than two usable samples remain."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    y = np.full(values.shape, -np.inf)
    nz = values != 0.0
    y[nz] = np.log(np.abs(values[nz]))
    return _fit_slope(t, y)


def _fit_slope(t: np.ndarray, y: np.ndarray) -> float:
    ok = np.isfinite(y)
    if ok.sum() < 2:
        return -math.inf
    tt = t[ok]
    yy = y[ok]
    tc = tt - tt.mean()
    denom = float(np.dot(tc, tc))
    if denom == 0.0:
        return -math.inf
    return float(np.dot(tc, yy - yy.mean()) / denom)


def lyapunov_exponent(
    params: SystemParams,
    law: ControlLaw,
    base_init: MeanState,
    eps: float,
    cfg: IntegratorConfig,
) -> float:
    """Largest growth rate of the generalized errors under a small state
    perturbation, by the two-trajectory method.

    A twin run starts with q2 and p2 offset by ``eps``; the log-magnitude of
    the per-channel error differences (with renormalization bookkeeping) is
    fit over the tail window [t_end/2, t_end] and the steeper channel wins.
    A channel whose difference underflows everywhere contributes -inf
    (super-exponential contraction)."""
    if not (1e-8 <= eps <= 1e-4):
        raise ValueError(f"eps must be in [1e-8, 1e-4], got {eps}")
    t, yq, yp = dual_error_divergence(params, law, base_init, eps, cfg)
    tail = t >= cfg.t_end / 2.0
    slopes = [_fit_slope(t[tail], yq[tail]), _fit_slope(t[tail], yp[tail])]
    return max(slopes)


# --- Gaussian entanglement ------------------------------------------------------


def negativity(d: np.ndarray) -> NegativityResult:
    """Entanglement of the two-mirror reduced Gaussian state.

    From the mechanical 4x4 block split into 2x2 blocks A, B, C, the smallest
    symplectic eigenvalue of the partially transposed state is

        nu_minus = sqrt[ (Dl - sqrt(Dl^2 - 4 det G)) / 2 ],
        Dl = det A + det B - 2 det C,

    and the negativity is max{0, -log2(2 nu_minus)}; the factor 2 matches the
    vacuum-variance-1/2 convention so separable states give exactly zero.
    Raises NonPhysical when the block cannot come from a quantum state."""
    gamma = np.array(d[2:6, 2:6], dtype=float)
    a = np.linalg.det(gamma[0:2, 0:2])
    b = np.linalg.det(gamma[2:4, 2:4])
    c = np.linalg.det(gamma[0:2, 2:4])
    det_g = np.linalg.det(gamma)
    delta = a + b - 2.0 * c
    disc = delta * delta - 4.0 * det_g
    if disc < 0.0:
        if disc > -1e-12 * max(delta * delta, 1.0):
            disc = 0.0
        else:
            raise NonPhysical(
                f"complex symplectic eigenvalue (disc = {disc:g}); covariance corrupted"
            )
    nu_sq = 0.5 * (delta - math.sqrt(disc))
    if nu_sq <= 0.0:
        raise NonPhysical(f"nu_minus^2 = {nu_sq:g} is not positive")
    nu = math.sqrt(nu_sq)
    e_n = max(0.0, -math.log2(2.0 * nu))
    return NegativityResult(gamma_mat=gamma, delta_gamma=float(delta), nu_minus=nu, e_n=e_n)


def max_negativity(traj: Trajectory, window: tuple[float, float]) -> float:
    """Largest negativity over the trajectory samples inside the window."""
    if traj.cov is None:
        raise ValueError("trajectory was recorded without covariances")
    mask = traj.window_mask(*window)
    if not mask.any():
        raise EmptyWindow(f"no samples in window {window}")
    return max(negativity(d).e_n for d in traj.cov[mask])


# --- robustness against controller noise ----------------------------------------


def robustness(
    clean: Trajectory,
    noisy: Trajectory,
    stats: LimitCycleStats,
    window: tuple[float, float],
    h1: GeneralizedMapping = Identity(),
    h2: GeneralizedMapping = Identity(),
) -> float:
    """Synchronization accuracy retained under controller noise:

        R = 1 - < sqrt[(q- - q-')^2 + (p- - p-')^2] > / (sqrt(2) r)

    with unprimed/primed errors from the clean and noisy runs and r the
    clean limit-cycle radius.  Identical runs give exactly 1."""
    if clean.params != noisy.params or clean.law != noisy.law:
        raise WindowMismatch("trajectories differ in parameters or control law")
    if len(clean.t) != len(noisy.t) or not np.array_equal(clean.t, noisy.t):
        raise WindowMismatch("trajectories are on different time grids")
    mask = clean.window_mask(*window)
    if not mask.any():
        raise EmptyWindow(f"no samples in window {window}")
    q_err, p_err = first_order_errors(clean, h1, h2)
    q_err_n, p_err_n = first_order_errors(noisy, h1, h2)
    dev = np.hypot((q_err - q_err_n)[mask], (p_err - p_err_n)[mask])
    return 1.0 - float(dev.mean()) / (math.sqrt(2.0) * stats.r)
