"""Feedback fields that steer the two mirrors into a prescribed relation.

Both laws come from forcing the momentum-error dynamics onto a pure
exponential decay d(err)/dt = -k err and solving for the spring-rescaling
field that achieves it.  Each has its own singularity treatment: the
constant-offset law switches off inside a guard band around its denominator
zero, the delayed-replay law saturates the emitted value.  The measurement
and actuation noise used in robustness studies is modelled here as well.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numba import njit

from .model import MeanState, SystemParams

__all__ = [
    "ControlReading",
    "reading_from_state",
    "constant_error_control",
    "time_delay_control",
    "perturb_reading",
    "perturb_output",
]


class ControlReading(NamedTuple):
    """What the controller sees at time t: instantaneous mirror quadratures
    and photon proxy, plus their delayed counterparts for the replay law.

    After measurement noise is applied the photon fields may go negative;
    the laws consume them as-is (it models a faulty meter, not a state).
    """

    q1: float
    p1: float
    q2: float
    p2: float
    a_sq: float
    q2d: float   # q2 read a lag tau ago (0 when unused)
    p2d: float
    a_sqd: float


def reading_from_state(s: MeanState, delayed: tuple[float, float, float] = (0.0, 0.0, 0.0)) -> ControlReading:
    """Assemble the controller input from a mean state and optional delayed samples."""
    return ControlReading(
        s.q1, s.p1, s.q2, s.p2, s.a_re * s.a_re + s.a_im * s.a_im,
        delayed[0], delayed[1], delayed[2],
    )


@njit(cache=True)
def constant_error_control(r: ControlReading, params: SystemParams, k: float, c_minus: float) -> float:
    """Field driving p1 - p2 -> 0 while the position gap stays near c_minus.

    Active branch:
        C = [(gamma - k)(p1 - p2) - (g1 - g2)|A|^2] / (w2 q2 - w1 q1) - 1
    applied identically to both mirrors.  Whenever |w2 q2 - w1 q1| <= c_minus
    the field is zero, which removes the denominator singularity and leaves a
    band in which the mirrors evolve freely.  Assumes gamma1 == gamma2.
    """
    den = params.omega_m2 * r.q2 - params.omega_m1 * r.q1
    if abs(den) > c_minus:
        num = (params.gamma1 - k) * (r.p1 - r.p2) - (params.g1 - params.g2) * r.a_sq
        return num / den - 1.0
    return 0.0


@njit(cache=True)
def time_delay_control(
    r: ControlReading,
    params: SystemParams,
    k: float,
    tau: float,
    c_max: float,
    t: float,
    prev: float = 0.0,
) -> float:
    """Field slaving mirror 1 onto mirror 2's trajectory a lag tau in the past.

    Zero until t >= tau (no delayed information exists yet).  Afterwards:
        C1 = [(gamma - k)(p1 - p2(t-tau)) - g1|A|^2 + g2|A(t-tau)|^2
              - w2 q2(t-tau)] / (-w1 q1) - 1
    clamped to [-c_max, +c_max]; mirror 2 is not actuated.  At the measure-zero
    event q1 == 0 exactly, the previous emitted value is held (the clamp alone
    is undefined there).  Assumes gamma1 == gamma2.
    """
    if t < tau:
        return 0.0
    if r.q1 == 0.0:
        return prev
    num = (
        (params.gamma1 - k) * (r.p1 - r.p2d)
        - params.g1 * r.a_sq
        + params.g2 * r.a_sqd
        - params.omega_m2 * r.q2d
    )
    raw = num / (-params.omega_m1 * r.q1) - 1.0
    if raw > c_max:
        return c_max
    if raw < -c_max:
        return -c_max
    return raw


def perturb_reading(r: ControlReading, sigma: float, rng: np.random.Generator) -> ControlReading:
    """Add independent Gaussian measurement noise of std ``sigma`` to every
    field, in declaration order.  ``sigma == 0`` returns the input unchanged
    (and consumes no randomness)."""
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return r
    z = rng.standard_normal(len(r))
    return ControlReading(*(v + sigma * zi for v, zi in zip(r, z)))


def perturb_output(c: float, sigma: float, rng: np.random.Generator) -> float:
    """Gaussian actuation noise on the emitted control value."""
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return c
    return c + sigma * float(rng.standard_normal())
