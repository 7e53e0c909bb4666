"""Fixed-step integration of the coupled mean-field and covariance dynamics.

One step advances the mean state with classical RK4 and, in lockstep, the
fluctuation covariance under dD/dt = S D + D S^T + N with the drift matrix
rebuilt from the mean state at every RK4 stage.  The feedback field is
computed once per step from the state (and, for the delayed law, from a
history buffer) and held constant across the step, mimicking a sampled
controller.  The hot loop is compiled; `step` exposes the identical
single-step math for direct use and testing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .control import ControlReading, constant_error_control, time_delay_control
from .model import (
    ConstantError,
    ControlLaw,
    DelayHistory,
    MeanState,
    NoControl,
    SystemParams,
    TimeDelay,
    build_drift_matrix,
    build_noise_matrix,
    initial_covariance,
    mean_field_deriv,
)

__all__ = [
    "NonFinite",
    "EmptyHistory",
    "IntegratorConfig",
    "Trajectory",
    "history_lookup",
    "step",
    "integrate",
]

MAX_DT = 0.01  # stability guard for unit-scale mechanical frequencies

_LAW_NONE, _LAW_CONST, _LAW_DELAY = 0, 1, 2


class NonFinite(RuntimeError):
    """State left the finite range (blow-up); carries the failure time."""

    def __init__(self, time: float):
        super().__init__(f"state became non-finite at t = {time:g}; reduce dt")
        self.time = time


class EmptyHistory(ValueError):
    """Delayed lookup against a history with no samples."""


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step integration plan in detuning units."""

    dt: float = 1e-3
    t_end: float = 500.0
    output_stride: int = 100
    record_covariance: bool = True

    def validate(self) -> None:
        if not (0.0 < self.dt <= MAX_DT):
            raise ValueError(f"dt must be in (0, {MAX_DT}], got {self.dt}")
        if not (self.t_end > 0.0 and math.isfinite(self.t_end)):
            raise ValueError(f"t_end must be > 0, got {self.t_end}")
        if self.output_stride < 1:
            raise ValueError(f"output_stride must be >= 1, got {self.output_stride}")
        n = self.n_steps
        if n > 2**62:
            raise ValueError("t_end/dt overflows the step counter")
        if n % self.output_stride != 0:
            raise ValueError(
                f"t_end/dt = {n} steps is not a multiple of output_stride = {self.output_stride}"
            )

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class Trajectory:
    """Uniformly sampled simulation output.

    Arrays share the leading sample axis: `t`, `mean` (columns a_re, a_im,
    q1, p1, q2, p2), applied control values `c1`, `c2`, and, when recorded,
    the covariance stack `cov` and the second-order synchronization series
    `sg`.  Provenance (params, law, dt, seed, noise) rides along for
    cross-trajectory checks.
    """

    t: np.ndarray
    mean: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    cov: Optional[np.ndarray]
    sg: Optional[np.ndarray]
    params: SystemParams
    law: ControlLaw
    dt: float
    seed: int = 0
    ctrl_noise: float = 0.0

    @property
    def a_re(self) -> np.ndarray:
        return self.mean[:, 0]

    @property
    def a_im(self) -> np.ndarray:
        return self.mean[:, 1]

    @property
    def q1(self) -> np.ndarray:
        return self.mean[:, 2]

    @property
    def p1(self) -> np.ndarray:
        return self.mean[:, 3]

    @property
    def q2(self) -> np.ndarray:
        return self.mean[:, 4]

    @property
    def p2(self) -> np.ndarray:
        return self.mean[:, 5]

    def __len__(self) -> int:
        return len(self.t)

    def window_mask(self, t_start: float, t_end: float) -> np.ndarray:
        return (self.t >= t_start) & (self.t <= t_end)


# --- compiled single-step core ----------------------------------------------


@njit(cache=True)
def _ms_axpy(s: MeanState, k: MeanState, h: float) -> MeanState:
    return MeanState(
        s.a_re + h * k.a_re,
        s.a_im + h * k.a_im,
        s.q1 + h * k.q1,
        s.p1 + h * k.p1,
        s.q2 + h * k.q2,
        s.p2 + h * k.p2,
    )


@njit(cache=True)
def _rk4_joint(
    params: SystemParams,
    s: MeanState,
    D: np.ndarray,
    N: np.ndarray,
    c1: float,
    c2: float,
    dt: float,
    with_cov: bool,
):
    """One RK4 step of the mean state and (optionally) the covariance, with
    the drift matrix rebuilt from the stage mean states and control held."""
    k1 = mean_field_deriv(params, s, c1, c2)
    s2 = _ms_axpy(s, k1, 0.5 * dt)
    k2 = mean_field_deriv(params, s2, c1, c2)
    s3 = _ms_axpy(s, k2, 0.5 * dt)
    k3 = mean_field_deriv(params, s3, c1, c2)
    s4 = _ms_axpy(s, k3, dt)
    k4 = mean_field_deriv(params, s4, c1, c2)
    s_new = MeanState(
        s.a_re + dt / 6.0 * (k1.a_re + 2.0 * k2.a_re + 2.0 * k3.a_re + k4.a_re),
        s.a_im + dt / 6.0 * (k1.a_im + 2.0 * k2.a_im + 2.0 * k3.a_im + k4.a_im),
        s.q1 + dt / 6.0 * (k1.q1 + 2.0 * k2.q1 + 2.0 * k3.q1 + k4.q1),
        s.p1 + dt / 6.0 * (k1.p1 + 2.0 * k2.p1 + 2.0 * k3.p1 + k4.p1),
        s.q2 + dt / 6.0 * (k1.q2 + 2.0 * k2.q2 + 2.0 * k3.q2 + k4.q2),
        s.p2 + dt / 6.0 * (k1.p2 + 2.0 * k2.p2 + 2.0 * k3.p2 + k4.p2),
    )
    if with_cov:
        S1 = build_drift_matrix(params, s, c1, c2)
        K1 = S1 @ D + D @ S1.T + N
        Dm = D + 0.5 * dt * K1
        S2 = build_drift_matrix(params, s2, c1, c2)
        K2 = S2 @ Dm + Dm @ S2.T + N
        Dm = D + 0.5 * dt * K2
        S3 = build_drift_matrix(params, s3, c1, c2)
        K3 = S3 @ Dm + Dm @ S3.T + N
        Dm = D + dt * K3
        S4 = build_drift_matrix(params, s4, c1, c2)
        K4 = S4 @ Dm + Dm @ S4.T + N
        D_new = D + dt / 6.0 * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
        D_new = 0.5 * (D_new + D_new.T)
    else:
        D_new = D
    return s_new, D_new


@njit(cache=True)
def _mean_finite(s: MeanState) -> bool:
    return (
        np.isfinite(s.a_re)
        and np.isfinite(s.a_im)
        and np.isfinite(s.q1)
        and np.isfinite(s.p1)
        and np.isfinite(s.q2)
        and np.isfinite(s.p2)
    )


@njit(cache=True)
def _dense_lookup(t_query: float, dt: float, i_max: int, h: np.ndarray) -> float:
    """Linear interpolation on a dense per-step history h[0..i_max]; queries
    before t = 0 clamp to the first sample (constant pre-history)."""
    x = t_query / dt
    if x <= 0.0:
        return h[0]
    i0 = int(x)
    if i0 >= i_max:
        return h[i_max]
    f = x - i0
    return h[i0] * (1.0 - f) + h[i0 + 1] * f


@njit(cache=True)
def _kernel_control(
    params: SystemParams,
    law_code: int,
    k: float,
    c_minus: float,
    tau: float,
    c_max: float,
    s: MeanState,
    t: float,
    dt: float,
    i: int,
    hq2: np.ndarray,
    hp2: np.ndarray,
    hasq: np.ndarray,
    prev_law_out: float,
    sigma: float,
    z: np.ndarray,
):
    """Evaluate the active law once at time t.  Returns (c1, c2, law_out)
    where law_out is the un-noised emitted value kept for the hold rule."""
    if law_code == _LAW_NONE:
        return 0.0, 0.0, 0.0
    q1r = s.q1
    p1r = s.p1
    q2r = s.q2
    p2r = s.p2
    asqr = s.a_re * s.a_re + s.a_im * s.a_im
    q2dr = 0.0
    p2dr = 0.0
    asqdr = 0.0
    if law_code == _LAW_DELAY and t >= tau:
        q2dr = _dense_lookup(t - tau, dt, i, hq2)
        p2dr = _dense_lookup(t - tau, dt, i, hp2)
        asqdr = _dense_lookup(t - tau, dt, i, hasq)
    if sigma > 0.0:
        q1r += sigma * z[0]
        p1r += sigma * z[1]
        q2r += sigma * z[2]
        p2r += sigma * z[3]
        asqr += sigma * z[4]
        q2dr += sigma * z[5]
        p2dr += sigma * z[6]
        asqdr += sigma * z[7]
    r = ControlReading(q1r, p1r, q2r, p2r, asqr, q2dr, p2dr, asqdr)
    if law_code == _LAW_CONST:
        law_out = constant_error_control(r, params, k, c_minus)
        c = law_out + sigma * z[8] if sigma > 0.0 else law_out
        return c, c, law_out
    law_out = time_delay_control(r, params, k, tau, c_max, t, prev_law_out)
    c = law_out + sigma * z[8] if sigma > 0.0 else law_out
    return c, 0.0, law_out


_NO_NOISE = np.zeros(9)


@njit(cache=True)
def _integrate_kernel(
    params: SystemParams,
    law_code: int,
    k: float,
    c_minus: float,
    tau: float,
    c_max: float,
    s0: MeanState,
    D0: np.ndarray,
    dt: float,
    n_steps: int,
    stride: int,
    with_cov: bool,
    sigma: float,
    Z: np.ndarray,
    out_t: np.ndarray,
    out_mean: np.ndarray,
    out_c: np.ndarray,
    out_cov: np.ndarray,
):
    """Main loop.  Returns (status, fail_step): status 0 on success, 1 when
    the state left the finite range after step fail_step."""
    N = build_noise_matrix(params)
    hq2 = np.empty(n_steps + 1)
    hp2 = np.empty(n_steps + 1)
    hasq = np.empty(n_steps + 1)
    s = s0
    D = D0.copy()
    hq2[0] = s.q2
    hp2[0] = s.p2
    hasq[0] = s.a_re * s.a_re + s.a_im * s.a_im
    prev_law_out = 0.0
    j = 0
    for i in range(n_steps + 1):
        t = i * dt
        z = Z[i] if sigma > 0.0 else _NO_NOISE
        c1, c2, prev_law_out = _kernel_control(
            params, law_code, k, c_minus, tau, c_max,
            s, t, dt, i, hq2, hp2, hasq, prev_law_out, sigma, z,
        )
        if i % stride == 0:
            out_t[j] = t
            out_mean[j, 0] = s.a_re
            out_mean[j, 1] = s.a_im
            out_mean[j, 2] = s.q1
            out_mean[j, 3] = s.p1
            out_mean[j, 4] = s.q2
            out_mean[j, 5] = s.p2
            out_c[j, 0] = c1
            out_c[j, 1] = c2
            if with_cov:
                out_cov[j] = D
            j += 1
        if i == n_steps:
            break
        s, D = _rk4_joint(params, s, D, N, c1, c2, dt, with_cov)
        if not _mean_finite(s) or (with_cov and not np.all(np.isfinite(D))):
            return 1, i + 1
        hq2[i + 1] = s.q2
        hp2[i + 1] = s.p2
        hasq[i + 1] = s.a_re * s.a_re + s.a_im * s.a_im
    return 0, 0


# --- public operations -------------------------------------------------------


def history_lookup(hist: DelayHistory, t_query: float) -> tuple[float, float, float]:
    """Read (q2, p2, |A|^2) at ``t_query`` from a delay history by linear
    interpolation between the bracketing samples.  Queries before t = 0 return
    the first sample (constant pre-history); queries beyond the newest sample
    are a caller error."""
    if len(hist) == 0:
        raise EmptyHistory("no samples recorded")
    ts, q2s, p2s, asqs = hist.ordered()
    if t_query > ts[-1]:
        raise ValueError(f"t_query = {t_query} is beyond the newest sample t = {ts[-1]}")
    return (
        float(np.interp(t_query, ts, q2s)),
        float(np.interp(t_query, ts, p2s)),
        float(np.interp(t_query, ts, asqs)),
    )


def _law_fields(law: ControlLaw) -> tuple[int, float, float, float, float]:
    if isinstance(law, NoControl):
        return _LAW_NONE, 0.0, 0.0, 0.0, 0.0
    if isinstance(law, ConstantError):
        return _LAW_CONST, law.k, law.c_minus, 0.0, 0.0
    if isinstance(law, TimeDelay):
        return _LAW_DELAY, law.k, 0.0, law.tau, law.c_max
    raise TypeError(f"unknown control law {law!r}")


def step(
    params: SystemParams,
    s: MeanState,
    d: np.ndarray,
    law: ControlLaw,
    hist: Optional[DelayHistory],
    t: float,
    dt: float,
    prev_control: float = 0.0,
) -> tuple[MeanState, np.ndarray, float, float]:
    """Advance one step of size ``dt`` from time ``t``.

    The control value is evaluated once from the current state (for the
    delayed law, ``hist`` must span up to ``t``) and held across the step;
    the returned covariance is symmetrized.  The caller owns the history and
    appends the new sample afterwards.  ``prev_control`` feeds the delayed
    law's hold rule.
    """
    law_code, k, c_minus, tau, c_max = _law_fields(law)
    s = MeanState(*(float(v) for v in s))
    if law_code == _LAW_DELAY and t >= tau:
        if hist is None:
            raise EmptyHistory("delayed law needs a history buffer")
        delayed = history_lookup(hist, t - tau)
    else:
        delayed = (0.0, 0.0, 0.0)
    r = ControlReading(
        s.q1, s.p1, s.q2, s.p2, s.a_re * s.a_re + s.a_im * s.a_im, *delayed
    )
    if law_code == _LAW_CONST:
        c1 = constant_error_control(r, params, k, c_minus)
        c2 = c1
    elif law_code == _LAW_DELAY:
        c1 = time_delay_control(r, params, k, tau, c_max, t, prev_control)
        c2 = 0.0
    else:
        c1 = c2 = 0.0
    N = build_noise_matrix(params)
    d = np.ascontiguousarray(d, dtype=np.float64)
    s_new, d_new = _rk4_joint(params, s, d, N, c1, c2, dt, True)
    if not all(math.isfinite(v) for v in s_new) or not np.all(np.isfinite(d_new)):
        raise NonFinite(t + dt)
    return s_new, d_new, c1, c2


def integrate(
    params: SystemParams,
    law: ControlLaw,
    init: Optional[MeanState] = None,
    d0: Optional[np.ndarray] = None,
    cfg: IntegratorConfig = IntegratorConfig(),
    rng_seed: int = 0,
    ctrl_noise: float = 0.0,
) -> Trajectory:
    """Run the closed loop from t = 0 to cfg.t_end and return the sampled
    trajectory.

    ``init`` and ``d0`` default to the quiescent pre-drive state (everything
    at rest, vacuum cavity, thermally occupied mirrors).  When ``ctrl_noise``
    is positive, every quantity the active law reads and the value it emits
    are independently perturbed each step by Gaussian noise of that standard
    deviation, drawn reproducibly from ``rng_seed``.  Raises NonFinite with
    the failure time if the state blows up.
    """
    params.validate()
    cfg.validate()
    if hasattr(law, "validate"):
        law.validate()
    if ctrl_noise < 0.0:
        raise ValueError(f"ctrl_noise must be >= 0, got {ctrl_noise}")
    if init is None:
        init = MeanState.zeros()
    else:
        init = MeanState(*(float(v) for v in init))
    if d0 is None:
        d0 = initial_covariance(params.nbar)
    d0 = np.ascontiguousarray(d0, dtype=np.float64)
    if d0.shape != (6, 6):
        raise ValueError(f"d0 must be 6x6, got {d0.shape}")

    law_code, k, c_minus, tau, c_max = _law_fields(law)
    n_steps = cfg.n_steps
    stride = cfg.output_stride
    n_out = n_steps // stride + 1

    sigma = float(ctrl_noise)
    if sigma > 0.0 and law_code != _LAW_NONE:
        rng = np.random.default_rng(rng_seed)
        Z = rng.standard_normal((n_steps + 1, 9))
    else:
        sigma = 0.0
        Z = np.zeros((1, 9))

    out_t = np.empty(n_out)
    out_mean = np.empty((n_out, 6))
    out_c = np.empty((n_out, 2))
    out_cov = np.empty((n_out, 6, 6)) if cfg.record_covariance else np.empty((1, 6, 6))

    status, fail_step = _integrate_kernel(
        params, law_code, k, c_minus, tau, c_max,
        init, d0, cfg.dt, n_steps, stride, cfg.record_covariance,
        sigma, Z, out_t, out_mean, out_c, out_cov,
    )
    if status != 0:
        raise NonFinite(fail_step * cfg.dt)

    cov = out_cov if cfg.record_covariance else None
    sg = None
    if cfg.record_covariance:
        from .measures import sync_series

        sg = sync_series(out_cov)
    return Trajectory(
        t=out_t,
        mean=out_mean,
        c1=out_c[:, 0],
        c2=out_c[:, 1],
        cov=cov,
        sg=sg,
        params=params,
        law=law,
        dt=cfg.dt,
        seed=rng_seed,
        ctrl_noise=ctrl_noise,
    )


# --- paired integration for perturbation-growth estimates --------------------


@njit(cache=True)
def _dual_kernel(
    params: SystemParams,
    law_code: int,
    k: float,
    c_minus: float,
    tau: float,
    c_max: float,
    s0a: MeanState,
    s0b: MeanState,
    eps: float,
    dt: float,
    n_steps: int,
    stride: int,
    out_t: np.ndarray,
    out_yq: np.ndarray,
    out_yp: np.ndarray,
):
    """Co-integrate a base and a perturbed closed loop (no noise, means only)
    and record the log-magnitude of the generalized-error differences.

    The separation is renormalized toward the base trajectory whenever the
    error-difference norm leaves [1e-3 eps, 1e3 eps]; the discarded scale is
    accumulated so the recorded series stays continuous.  Returns (status,
    fail_step).
    """
    N = np.zeros((6, 6))
    hq2a = np.empty(n_steps + 1)
    hp2a = np.empty(n_steps + 1)
    hasqa = np.empty(n_steps + 1)
    hq2b = np.empty(n_steps + 1)
    hp2b = np.empty(n_steps + 1)
    hasqb = np.empty(n_steps + 1)
    sa = s0a
    sb = s0b
    D = np.zeros((6, 6))
    hq2a[0] = sa.q2
    hp2a[0] = sa.p2
    hasqa[0] = sa.a_re * sa.a_re + sa.a_im * sa.a_im
    hq2b[0] = sb.q2
    hp2b[0] = sb.p2
    hasqb[0] = sb.a_re * sb.a_re + sb.a_im * sb.a_im
    prev_a = 0.0
    prev_b = 0.0
    log_accum = 0.0
    lo = 1e-3 * eps
    hi = 1e3 * eps
    z = np.zeros(9)
    j = 0
    for i in range(n_steps + 1):
        t = i * dt
        # generalized errors of each run
        if law_code == _LAW_DELAY:
            qa = sa.q1 - _dense_lookup(t - tau, dt, i, hq2a)
            pa = sa.p1 - _dense_lookup(t - tau, dt, i, hp2a)
            qb = sb.q1 - _dense_lookup(t - tau, dt, i, hq2b)
            pb = sb.p1 - _dense_lookup(t - tau, dt, i, hp2b)
        else:
            qa = sa.q1 - sa.q2
            pa = sa.p1 - sa.p2
            qb = sb.q1 - sb.q2
            pb = sb.p1 - sb.p2
        dq = qb - qa
        dp = pb - pa
        if i % stride == 0:
            out_t[j] = t
            out_yq[j] = (math.log(abs(dq)) + log_accum) if dq != 0.0 else -np.inf
            out_yp[j] = (math.log(abs(dp)) + log_accum) if dp != 0.0 else -np.inf
            j += 1
            # renormalize on the error-difference norm
            err = math.sqrt(dq * dq + dp * dp)
            if err > 0.0 and (err > hi or err < lo):
                alpha = eps / err
                sb = MeanState(
                    sa.a_re + alpha * (sb.a_re - sa.a_re),
                    sa.a_im + alpha * (sb.a_im - sa.a_im),
                    sa.q1 + alpha * (sb.q1 - sa.q1),
                    sa.p1 + alpha * (sb.p1 - sa.p1),
                    sa.q2 + alpha * (sb.q2 - sa.q2),
                    sa.p2 + alpha * (sb.p2 - sa.p2),
                )
                for m in range(i + 1):
                    hq2b[m] = hq2a[m] + alpha * (hq2b[m] - hq2a[m])
                    hp2b[m] = hp2a[m] + alpha * (hp2b[m] - hp2a[m])
                    hasqb[m] = hasqa[m] + alpha * (hasqb[m] - hasqa[m])
                log_accum -= math.log(alpha)
        if i == n_steps:
            break
        c1a, c2a, prev_a = _kernel_control(
            params, law_code, k, c_minus, tau, c_max,
            sa, t, dt, i, hq2a, hp2a, hasqa, prev_a, 0.0, z,
        )
        c1b, c2b, prev_b = _kernel_control(
            params, law_code, k, c_minus, tau, c_max,
            sb, t, dt, i, hq2b, hp2b, hasqb, prev_b, 0.0, z,
        )
        sa, D = _rk4_joint(params, sa, D, N, c1a, c2a, dt, False)
        sb, D = _rk4_joint(params, sb, D, N, c1b, c2b, dt, False)
        if not _mean_finite(sa) or not _mean_finite(sb):
            return 1, i + 1
        hq2a[i + 1] = sa.q2
        hp2a[i + 1] = sa.p2
        hasqa[i + 1] = sa.a_re * sa.a_re + sa.a_im * sa.a_im
        hq2b[i + 1] = sb.q2
        hp2b[i + 1] = sb.p2
        hasqb[i + 1] = sb.a_re * sb.a_re + sb.a_im * sb.a_im
    return 0, 0


def dual_error_divergence(
    params: SystemParams,
    law: ControlLaw,
    base_init: MeanState,
    eps: float,
    cfg: IntegratorConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Log-magnitude series of the generalized-error differences between a
    base run and one started with q2, p2 offset by ``eps``.  Returns
    (t, log|dq|, log|dp|) with -inf marking exact zeros; the series already
    include the renormalization bookkeeping."""
    params.validate()
    cfg.validate()
    law_code, k, c_minus, tau, c_max = _law_fields(law)
    base_init = MeanState(*(float(v) for v in base_init))
    s0b = MeanState(
        base_init.a_re, base_init.a_im, base_init.q1, base_init.p1,
        base_init.q2 + eps, base_init.p2 + eps,
    )
    n_steps = cfg.n_steps
    n_out = n_steps // cfg.output_stride + 1
    out_t = np.empty(n_out)
    out_yq = np.empty(n_out)
    out_yp = np.empty(n_out)
    status, fail_step = _dual_kernel(
        params, law_code, k, c_minus, tau, c_max,
        base_init, s0b, eps, cfg.dt, n_steps, cfg.output_stride,
        out_t, out_yq, out_yp,
    )
    if status != 0:
        raise NonFinite(fail_step * cfg.dt)
    return out_t, out_yq, out_yp
