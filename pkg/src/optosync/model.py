"""Physical model of two mechanical oscillators coupled to one driven cavity mode.

State is split in the usual mean-field way: classical expectation values
(complex cavity amplitude plus two position/momentum pairs) evolve under
nonlinear ODEs, while Gaussian quantum fluctuations around that trajectory
are summarized by a 6x6 symmetrized covariance matrix over the quadrature
vector (dx, dy, dq1, dp1, dq2, dp2).  This module holds the parameter and
state containers and the pure builders for the fluctuation drift and noise
matrices; integration lives in `dynamics`.

Units: the cavity detuning sets the frequency unit, hbar = 1, and all
quadratures are dimensionless with vacuum variance 1/2.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from numba import njit
from scipy.constants import hbar as _HBAR, k as _KB

__all__ = [
    "SystemParams",
    "MeanState",
    "NoControl",
    "ConstantError",
    "TimeDelay",
    "ControlLaw",
    "DelayHistory",
    "OMEGA_REF",
    "mean_field_deriv",
    "build_drift_matrix",
    "build_noise_matrix",
    "mean_phonon_number",
    "initial_covariance",
]

# Reference phonon frequency (rad/s) used when a scenario specifies a bath
# temperature instead of an occupation number.  Chosen so that T = 1 mK maps
# to a mean occupation of 0.28 (a ~30 MHz mechanical mode); T = 10 mK then
# gives ~6.1.
OMEGA_REF = math.log(1.0 + 1.0 / 0.28) * _KB * 1e-3 / _HBAR


class SystemParams(NamedTuple):
    """Physical constants of the cavity + two-oscillator model.

    All rates and frequencies are in units of the cavity detuning.  A plain
    tuple of floats so it can cross into compiled kernels unchanged.
    """

    delta: float      # drive-cavity detuning (positive = blue-detuned drive)
    omega_m1: float   # mechanical frequency, oscillator 1
    omega_m2: float   # mechanical frequency, oscillator 2
    g1: float         # optomechanical coupling, oscillator 1
    g2: float         # optomechanical coupling, oscillator 2
    E: float          # drive amplitude
    kappa: float      # cavity amplitude decay rate
    gamma1: float     # mechanical damping, oscillator 1
    gamma2: float     # mechanical damping, oscillator 2
    nbar: float       # mean phonon occupation of the mechanical baths

    def validate(self) -> None:
        """Raise ValueError on unphysical values (non-finite, wrong sign)."""
        for name, value in self._asdict().items():
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        for name in ("omega_m1", "omega_m2", "kappa", "gamma1", "gamma2"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.E < 0.0:
            raise ValueError(f"E must be >= 0, got {self.E}")
        if self.nbar < 0.0:
            raise ValueError(f"nbar must be >= 0, got {self.nbar}")


class MeanState(NamedTuple):
    """Expectation values: cavity amplitude (re/im) and oscillator quadratures."""

    a_re: float
    a_im: float
    q1: float
    p1: float
    q2: float
    p2: float

    @classmethod
    def zeros(cls) -> "MeanState":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    @property
    def a_sq(self) -> float:
        """Mean photon proxy |A|^2."""
        return self.a_re * self.a_re + self.a_im * self.a_im

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


# --- control law variants -------------------------------------------------
#
# A law is a tagged choice; exactly one variant is active per scenario and
# variant-specific fields exist only on that variant.  Mutable per-law state
# (the delay history, the previous emitted value for the hold rule) is owned
# by the integrator, not by these descriptors.


class NoControl(NamedTuple):
    """Free evolution; both control fields are identically zero."""


class ConstantError(NamedTuple):
    """Drive the momentum difference to zero while a guard keeps the position
    gap from closing below ``c_minus``; the same field acts on both mirrors."""

    k: float          # feedback gain, > 0
    c_minus: float    # guarded lower bound on |w2*q2 - w1*q1|, >= 0

    def validate(self) -> None:
        if not (self.k > 0.0 and math.isfinite(self.k)):
            raise ValueError(f"k must be > 0, got {self.k}")
        if not (self.c_minus >= 0.0 and math.isfinite(self.c_minus)):
            raise ValueError(f"c_minus must be >= 0, got {self.c_minus}")


class TimeDelay(NamedTuple):
    """Slave oscillator 1 onto oscillator 2's trajectory delayed by ``tau``;
    the emitted field is saturated to [-c_max, +c_max] and only mirror 1 is
    actuated."""

    k: float          # feedback gain, > 0
    tau: float        # replay lag, >= 0
    c_max: float      # saturation bound, > 0

    def validate(self) -> None:
        if not (self.k > 0.0 and math.isfinite(self.k)):
            raise ValueError(f"k must be > 0, got {self.k}")
        if not (self.tau >= 0.0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if not (self.c_max > 0.0 and math.isfinite(self.c_max)):
            raise ValueError(f"c_max must be > 0, got {self.c_max}")


ControlLaw = NoControl | ConstantError | TimeDelay


class DelayHistory:
    """Ring buffer of (t, q2, p2, |A|^2) samples for delayed-feedback lookup.

    Capacity must cover at least the delay plus one step; timestamps are
    required to be strictly increasing.  Lookup (linear interpolation with a
    constant pre-history for t < 0) lives in `dynamics.history_lookup`.
    """

    __slots__ = ("t", "q2", "p2", "a_sq", "_head", "_count", "capacity")

    def __init__(self, capacity: int):
        if capacity < 2:
            raise ValueError("capacity must be >= 2")
        self.capacity = int(capacity)
        self.t = np.empty(self.capacity, dtype=np.float64)
        self.q2 = np.empty(self.capacity, dtype=np.float64)
        self.p2 = np.empty(self.capacity, dtype=np.float64)
        self.a_sq = np.empty(self.capacity, dtype=np.float64)
        self._head = 0       # index of the next write slot
        self._count = 0

    @classmethod
    def for_delay(cls, tau: float, dt: float) -> "DelayHistory":
        """Buffer sized to span a delay of ``tau`` at step ``dt`` (plus slack)."""
        slots = int(math.ceil(max(tau, 0.0) / dt)) + 4
        return cls(max(slots, 8))

    def __len__(self) -> int:
        return self._count

    @property
    def newest_time(self) -> float:
        if self._count == 0:
            raise ValueError("history is empty")
        return float(self.t[(self._head - 1) % self.capacity])

    def append(self, t: float, q2: float, p2: float, a_sq: float) -> None:
        if self._count > 0 and t <= self.newest_time:
            raise ValueError(
                f"timestamps must be strictly increasing: {t} after {self.newest_time}"
            )
        self.t[self._head] = t
        self.q2[self._head] = q2
        self.p2[self._head] = p2
        self.a_sq[self._head] = a_sq
        self._head = (self._head + 1) % self.capacity
        self._count = min(self._count + 1, self.capacity)

    def ordered(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Samples in chronological order (oldest first)."""
        if self._count < self.capacity:
            idx = np.arange(self._count)
        else:
            idx = (np.arange(self.capacity) + self._head) % self.capacity
        return self.t[idx], self.q2[idx], self.p2[idx], self.a_sq[idx]


# --- pure builders ---------------------------------------------------------


@njit(cache=True)
def mean_field_deriv(params: SystemParams, s: MeanState, c1: float, c2: float) -> MeanState:
    """Time derivative of the mean state.

    The cavity amplitude obeys A' = (-kappa + i(delta + g1 q1 + g2 q2)) A + E,
    expanded into real and imaginary parts; each oscillator is a harmonic
    mode whose spring term carries the control factor (1 + c_j) and which is
    pushed by the radiation pressure g_j |A|^2.
    """
    rot = params.delta + params.g1 * s.q1 + params.g2 * s.q2
    a_sq = s.a_re * s.a_re + s.a_im * s.a_im
    return MeanState(
        -params.kappa * s.a_re - rot * s.a_im + params.E,
        -params.kappa * s.a_im + rot * s.a_re,
        params.omega_m1 * s.p1,
        -params.omega_m1 * (1.0 + c1) * s.q1 - params.gamma1 * s.p1 + params.g1 * a_sq,
        params.omega_m2 * s.p2,
        -params.omega_m2 * (1.0 + c2) * s.q2 - params.gamma2 * s.p2 + params.g2 * a_sq,
    )


@njit(cache=True)
def build_drift_matrix(params: SystemParams, s: MeanState, c1: float, c2: float) -> np.ndarray:
    """Drift matrix of the linearized fluctuation dynamics du = S u dt + noise.

    Quadrature ordering (dx, dy, dq1, dp1, dq2, dp2) with dx, dy the cavity
    quadratures scaled so the vacuum has variance 1/2; the cavity-mirror
    coupling entries then carry sqrt(2) g_j Re(A) / Im(A), and the mirror
    potential entries the same (1 + c_j) control factor as the mean field.
    """
    rot = params.delta + params.g1 * s.q1 + params.g2 * s.q2
    r2 = math.sqrt(2.0)
    S = np.zeros((6, 6))
    S[0, 0] = -params.kappa
    S[0, 1] = -rot
    S[0, 2] = -r2 * params.g1 * s.a_im
    S[0, 4] = -r2 * params.g2 * s.a_im
    S[1, 0] = rot
    S[1, 1] = -params.kappa
    S[1, 2] = r2 * params.g1 * s.a_re
    S[1, 4] = r2 * params.g2 * s.a_re
    S[2, 3] = params.omega_m1
    S[3, 0] = r2 * params.g1 * s.a_re
    S[3, 1] = r2 * params.g1 * s.a_im
    S[3, 2] = -params.omega_m1 * (1.0 + c1)
    S[3, 3] = -params.gamma1
    S[4, 5] = params.omega_m2
    S[5, 0] = r2 * params.g2 * s.a_re
    S[5, 1] = r2 * params.g2 * s.a_im
    S[5, 4] = -params.omega_m2 * (1.0 + c2)
    S[5, 5] = -params.gamma2
    return S


@njit(cache=True)
def build_noise_matrix(params: SystemParams) -> np.ndarray:
    """Diagonal diffusion matrix: vacuum input on the cavity quadratures,
    Brownian force gamma_j (2 nbar + 1) on each mirror momentum."""
    N = np.zeros((6, 6))
    N[0, 0] = params.kappa
    N[1, 1] = params.kappa
    N[3, 3] = params.gamma1 * (2.0 * params.nbar + 1.0)
    N[5, 5] = params.gamma2 * (2.0 * params.nbar + 1.0)
    return N


def mean_phonon_number(temp: float, omega: float) -> float:
    """Bose occupation [exp(hbar*omega / kB*T) - 1]^-1 for a bath at ``temp``
    kelvin and mode frequency ``omega`` rad/s.  Returns 0 when the exponent
    would overflow (deep quantum regime)."""
    if temp <= 0.0:
        raise ValueError(f"temperature must be > 0, got {temp}")
    if omega <= 0.0:
        raise ValueError(f"omega must be > 0, got {omega}")
    x = _HBAR * omega / (_KB * temp)
    if x > 700.0:
        return 0.0
    return 1.0 / math.expm1(x)


def initial_covariance(nbar: float) -> np.ndarray:
    """Pre-drive fluctuation state: vacuum cavity, thermally occupied mirrors."""
    v = nbar + 0.5
    return np.diag([0.5, 0.5, v, v, v, v])
