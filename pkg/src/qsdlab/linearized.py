"""Linearized (Gaussian moment-closure) integrator.

Evolves the five moments (q, p, var_q, var_p, sym_cov) by the equations
(M1)-(M5) of docs/moment_equations.md: Euler-Maruyama for the means, whose
noise coefficients are (N1)-(N2); deterministic flow for the central
second moments, which carry no noise at this closure order.

Noise-stream compatibility: one complex increment is consumed per step, in
the same order as the full trajectory integrator, so matched seeds give
pathwise-comparable runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ClosureBreakdownError, InstabilityError, ParameterError
from .fockspace import MomentSet
from .models import DuffingParams
from .trajectory import (NoiseStream, TrajectoryRecord, validate_sample_times,
                         wiener_increment)

EPS = 1e-12
VARIANCE_FLOOR = 1e-6

#: Moments of a coherent state; the default initial condition.
COHERENT_VARIANCES = (0.5, 0.5, 0.0)


@dataclass(frozen=True)
class LinearizedState:
    m: MomentSet
    t: float


def coherent_moments(q: float, p: float) -> MomentSet:
    s, u, c = COHERENT_VARIANCES
    return MomentSet(q, p, s, u, c)


def _potential_derivatives(q: float, t: float, params: DuffingParams):
    """V_t'(q), V''(q) for V_t = beta^2 Q^4/4 - Q^2/2 + (g/beta) cos(t) Q."""
    b2 = params.beta * params.beta
    v1 = b2 * q ** 3 - q + (params.g / params.beta) * math.cos(t)
    v2 = 3.0 * b2 * q * q - 1.0
    return v1, v2


def _step_raw(state: LinearizedState, params: DuffingParams, dt: float,
              ns: NoiseStream, noise: bool) -> tuple[float, float, float, float, float]:
    m, t = state.m, state.t
    q, p, s, u, c = m.q_mean, m.p_mean, m.var_q, m.var_p, m.sym_cov
    gamma, lam = params.gamma, params.lam
    v1, v2 = _potential_derivatives(q, t, params)

    xi = wiener_increment(ns, dt)
    re, im = (xi.real, xi.imag) if noise else (0.0, 0.0)
    root = math.sqrt(2.0 * gamma)

    # (M1)-(M2): means, with noise coefficients (N1)-(N2).
    q_new = q + (p + 2.0 * (lam - gamma) * q) * dt \
        + root * ((2.0 * s - 1.0) * re - c * im)
    p_new = p + (-v1 - 2.0 * (lam + gamma) * p) * dt \
        + root * (c * re - (2.0 * u - 1.0) * im)
    # (M3)-(M5): deterministic variance flow.
    s_new = s + (c + 4.0 * (lam - gamma) * s + 2.0 * gamma
                 - gamma * ((2.0 * s - 1.0) ** 2 + c * c)) * dt
    u_new = u + (-c * v2 - 4.0 * (lam + gamma) * u + 2.0 * gamma
                 - gamma * ((2.0 * u - 1.0) ** 2 + c * c)) * dt
    c_new = c + (2.0 * u - 2.0 * s * v2 - 4.0 * gamma * c
                 - 4.0 * gamma * c * (s + u - 1.0)) * dt
    return q_new, p_new, s_new, u_new, c_new


def linearized_step(state: LinearizedState, params: DuffingParams, dt: float,
                    ns: NoiseStream, noise: bool = True) -> LinearizedState:
    """One Euler-Maruyama step of (M1)-(M5).

    A noise increment is drawn (and the stream advanced) even when
    ``noise=False`` so seed bookkeeping stays comparable across modes.
    Raises ClosureBreakdownError when a variance is driven non-positive,
    the signature of leaving the linearized regime.
    """
    if dt <= 0:
        raise ParameterError(f"dt must be > 0, got {dt}")
    q_new, p_new, s_new, u_new, c_new = _step_raw(state, params, dt, ns, noise)
    t = state.t
    if not all(map(math.isfinite, (q_new, p_new, s_new, u_new, c_new))):
        raise InstabilityError(f"linearized moments became non-finite at t={t}")
    if s_new <= 0.0 or u_new <= 0.0:
        raise ClosureBreakdownError(
            f"variance non-positive at t={t + dt} (var_q={s_new:.3e}, "
            f"var_p={u_new:.3e}); the Gaussian closure has broken down")
    return LinearizedState(MomentSet(q_new, p_new, s_new, u_new, c_new), t + dt)


def validity_monitor(state: LinearizedState, params: DuffingParams
                     ) -> tuple[float, float, float]:
    """Relative closure errors (V1)-(V3); near zero where linearization holds."""
    m, t = state.m, state.t
    q, s, c = m.q_mean, m.var_q, abs(m.sym_cov)
    v1, v2 = _potential_derivatives(q, t, params)
    b2 = params.beta * params.beta
    v3 = 6.0 * b2 * q
    v4 = 6.0 * b2
    r1 = abs(0.5 * s * v3) / (abs(v1) + EPS)
    r2 = abs(0.5 * s * s * v4) / (s * abs(v2) + EPS)
    r3 = abs(0.5 * s * c * v4) / (c * abs(v2) + EPS)
    return r1, r2, r3


def evolve_linearized(m0: MomentSet, params: DuffingParams,
                      t0: float, t_end: float, dt: float, ns: NoiseStream,
                      sample_times=None, noise: bool = True,
                      on_breakdown: str = "raise") -> TrajectoryRecord:
    """Integrate the five-moment system, sampling at scheduled grid times.

    on_breakdown: "raise" propagates ClosureBreakdownError; "floor" clamps
    the offending variance at a small positive value and keeps going (the
    record's validity_history flags the run as untrustworthy either way).
    """
    if on_breakdown not in ("raise", "floor"):
        raise ParameterError(f"unknown on_breakdown mode {on_breakdown!r}")
    if sample_times is None:
        sample_times = [t0] if t_end == t0 else [t0, t_end]
    sample_steps = validate_sample_times(sample_times, t0, dt)
    n_steps = sample_steps[-1]
    sample_set = dict.fromkeys(sample_steps)

    state = LinearizedState(m0, t0)
    times, mhist, validity = [], [], []
    broke_down = False
    for k in range(n_steps + 1):
        if k in sample_set:
            times.append(state.t)
            mhist.append(state.m)
            validity.append(validity_monitor(state, params))
        if k == n_steps:
            break
        if on_breakdown == "raise":
            state = linearized_step(state, params, dt, ns, noise=noise)
        else:
            q, p, s, u, c = _step_raw(state, params, dt, ns, noise)
            if not all(map(math.isfinite, (q, p, s, u, c))):
                raise InstabilityError(
                    f"linearized moments became non-finite at t={state.t}")
            if s <= 0.0 or u <= 0.0:
                broke_down = True
                s, u = max(s, VARIANCE_FLOOR), max(u, VARIANCE_FLOOR)
            state = LinearizedState(MomentSet(q, p, s, u, c), t0 + (k + 1) * dt)
    rec = TrajectoryRecord(
        times=np.asarray(times), moment_history=mhist,
        norm_drift=np.zeros(len(times)),
        basis_dims=np.full(len(times), 5),
        validity_history=validity)
    rec.closure_broke_down = broke_down
    return rec
