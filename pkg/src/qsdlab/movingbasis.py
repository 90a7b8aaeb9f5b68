"""Moving-basis quantum state diffusion (MQSD).

The trajectory state is carried as a classical phase-space displacement
(q, p) plus a small quantum remainder expanded in displaced number states
D(q, p)|n>, where

    D(q, p) = exp( i (p Q - q P) )        (hbar = 1).

Stepping works in the displaced frame by conjugating the operators,
Q -> Q + q, P -> P + p, which is exact for the polynomial Hamiltonian and
linear Lindblad operator of the Duffing model.  After each step the frame
is recentered on the local mean and the basis truncation adapts, so the
local state stays a small wave packet around the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.linalg import expm

from . import fockspace as fs
from .errors import (InstabilityError, ParameterError, TruncationGrowthLimitError)
from .fockspace import FockBasis, MomentSet, StateVector
from .models import DuffingParams, OpenSystemModel, build_duffing_quantum
from .trajectory import (NoiseStream, TrajectoryRecord,
                         _coupling_exp_apply, _norm_budget,
                         _remainder_increment, validate_sample_times,
                         wiener_increment)

#: Largest |dq|, |dp| accepted by a single displacement application; bigger
#: shifts must be subdivided to keep the truncated exponential accurate.
SHIFT_CAP = 1.0

DEFAULT_RECENTER_TOL = 1e-8
DEFAULT_GUARD_BAND = 3


@dataclass(frozen=True)
class PhaseFrame:
    """Classical displacement of the frame origin, in unscaled problem units."""

    q: float
    p: float


@dataclass
class MovingState:
    """frame + local remainder; the physical state is D(frame) |local>."""

    frame: PhaseFrame
    local: StateVector

    @property
    def dim(self) -> int:
        return self.local.basis.dim


@lru_cache(maxsize=64)
def _quadratures(dim: int):
    return fs.build_quadratures(FockBasis(dim))


def displacement_generator(basis: FockBasis, dq: float, dp: float) -> np.ndarray:
    """Anti-Hermitian generator i (dp Q - dq P) of D(dq, dp)."""
    Q, P = _quadratures(basis.dim)
    return 1j * (dp * Q.entries - dq * P.entries)


def displacement_apply(psi: StateVector, dq: float, dp: float) -> StateVector:
    """Apply D(dq, dp) by exact matrix exponential of the banded generator.

    Refuses shifts beyond SHIFT_CAP; callers subdivide (see displace).
    Norm is preserved to machine precision.
    """
    if abs(dq) > SHIFT_CAP or abs(dp) > SHIFT_CAP:
        raise ParameterError(
            f"displacement ({dq}, {dp}) exceeds per-application cap "
            f"{SHIFT_CAP}; subdivide the shift")
    if dq == 0.0 and dp == 0.0:
        return psi.copy()
    u = expm(displacement_generator(psi.basis, dq, dp))
    return StateVector(psi.basis, u @ psi.amplitudes)


def displace(psi: StateVector, dq: float, dp: float) -> StateVector:
    """D(dq, dp) psi, subdividing shifts larger than the per-application cap."""
    n = max(1, math.ceil(max(abs(dq), abs(dp)) / SHIFT_CAP))
    out = psi
    for _ in range(n):
        out = displacement_apply(out, dq / n, dp / n)
    return out


def fix_global_phase(psi: StateVector) -> StateVector:
    """Rotate the global phase so the largest-magnitude amplitude is real-positive."""
    idx = int(np.argmax(np.abs(psi.amplitudes)))
    a = psi.amplitudes[idx]
    if a == 0:
        return psi
    return StateVector(psi.basis, psi.amplitudes * (abs(a) / a))


def physical_moments(ms: MovingState) -> MomentSet:
    """Frame-independent moments of the physical state D(frame)|local>."""
    Q, P = _quadratures(ms.dim)
    m = fs.moments(ms.local, Q, P)
    return MomentSet(ms.frame.q + m.q_mean, ms.frame.p + m.p_mean,
                     m.var_q, m.var_p, m.sym_cov)


def recenter(ms: MovingState, recenter_tol: float = DEFAULT_RECENTER_TOL) -> MovingState:
    """Move the frame onto the local mean and undo the displacement locally.

    Physical moments are invariant; afterwards |<Q>_local| and |<P>_local|
    are below recenter_tol (up to exponential round-off).
    """
    Q, P = _quadratures(ms.dim)
    q_loc = fs.expectation(Q, ms.local)
    p_loc = fs.expectation(P, ms.local)
    if abs(q_loc) <= recenter_tol and abs(p_loc) <= recenter_tol:
        return ms
    local = fix_global_phase(displace(ms.local, -q_loc, -p_loc))
    return MovingState(PhaseFrame(ms.frame.q + q_loc, ms.frame.p + p_loc), local)


def adapt_truncation(ms: MovingState, trunc_tol: float,
                     min_dim: int = 10, max_dim: int = 64,
                     guard_band: int = DEFAULT_GUARD_BAND,
                     grow_step: int = 8) -> MovingState:
    """Grow/shrink the local basis so the guard-band tail mass stays below
    trunc_tol (grow) while removable blocks below trunc_tol/10 are dropped.

    min_dim matters beyond startup cost: clipping amplitude at the edge of a
    strongly anharmonic basis leaves a scattered remnant that the fast
    high-level phases spread instead of letting it damp away, so min_dim
    should sit past the point where the state's genuine tail is negligible
    (~64 for the Duffing model at beta = 1; small beta is forgiving).
    """
    if not 0.0 < trunc_tol <= 1e-2:
        raise ParameterError(f"trunc_tol must be in (0, 1e-2], got {trunc_tol}")
    dim = ms.dim
    amps = ms.local.amplitudes
    if fs.tail_mass(ms.local, guard_band) > trunc_tol:
        if dim >= max_dim:
            raise TruncationGrowthLimitError(
                f"adaptive basis needs more than max_dim={max_dim} states")
        new_dim = min(dim + grow_step, max_dim)
        padded = np.zeros(new_dim, dtype=complex)
        padded[:dim] = amps
        return MovingState(ms.frame, StateVector(FockBasis(new_dim), padded))
    new_dim = max(dim - grow_step, min_dim)
    if new_dim < dim:
        removed = float(np.sum(np.abs(amps[new_dim - guard_band:]) ** 2))
        if removed < trunc_tol / 10.0:
            clipped = fs.normalize(StateVector(FockBasis(new_dim),
                                               amps[:new_dim].copy()))
            return MovingState(ms.frame, clipped)
    return ms


def duffing_frame_factory(params: DuffingParams) -> Callable[[FockBasis, float, float], OpenSystemModel]:
    """Factory building the Duffing model with Q -> Q+q, P -> P+p substituted."""
    def factory(basis: FockBasis, q: float, p: float) -> OpenSystemModel:
        return build_duffing_quantum(params, basis, frame_q=q, frame_p=p)
    return factory


def mqsd_step(ms: MovingState, model_factory, t: float, dt: float,
              ns: NoiseStream, trunc_tol: float = 1e-6,
              min_dim: int = 10, max_dim: int = 64,
              recenter_tol: float = DEFAULT_RECENTER_TOL,
              ) -> tuple[MovingState, float]:
    """One QSD step in the displaced frame, then recenter and adapt truncation.

    The step mirrors the fixed-basis split factor for factor: explicit
    Euler-Maruyama for the centered Lindblad remainder and noise, an exact
    exponential for the frozen drive + Lindblad mean-field rotation, and an
    exact unitary for the (frame-conjugated) static Hamiltonian.  Every
    factor transforms exactly under the displacement D(q, p) for this
    polynomial model, so a fixed-basis run at matched seed agrees with the
    moving-basis run to truncation level -- the basis economy is the only
    difference.  Exponentials also matter for stability here: conjugation
    pushes the classical scales into the operators, so the drive and
    mean-field terms are stiff at small beta.

    Noise consumption matches the fixed-basis step exactly (one complex
    increment per Lindblad per step), so seeds are comparable.
    """
    model = model_factory(ms.local.basis, ms.frame.q, ms.frame.p)
    xis = np.array([[wiener_increment(ns, dt)] for _ in model.lindblads])
    ldags = [lop.dagger() for lop in model.lindblads]
    amps = ms.local.amplitudes[None, :]
    d, l_exps = _remainder_increment(amps, model, dt, xis, ldags)
    amps = _coupling_exp_apply(amps + d, model, t, dt, l_exps, ldags,
                               _norm_budget(model))
    amps = (amps @ model.static_propagator(dt).T)[0]
    norm = float(np.linalg.norm(amps))
    if not math.isfinite(norm) or norm == 0.0:
        raise InstabilityError(f"MQSD step produced non-finite state at t={t}")
    out = MovingState(ms.frame, StateVector(ms.local.basis, amps / norm))
    out = recenter(out, recenter_tol)
    out = adapt_truncation(out, trunc_tol, min_dim=min_dim, max_dim=max_dim)
    return out, norm - 1.0


def evolve_mqsd_trajectory(ms0: MovingState, model_factory,
                           t0: float, t_end: float, dt: float, ns: NoiseStream,
                           sample_times=None, trunc_tol: float = 1e-6,
                           min_dim: int = 10, max_dim: int = 64,
                           recenter_tol: float = DEFAULT_RECENTER_TOL,
                           ) -> TrajectoryRecord:
    """MQSD analogue of trajectory.evolve_trajectory; records physical moments."""
    if sample_times is None:
        sample_times = [t0] if t_end == t0 else [t0, t_end]
    sample_steps = validate_sample_times(sample_times, t0, dt)
    n_steps = sample_steps[-1]
    sample_set = dict.fromkeys(sample_steps)

    ms = MovingState(ms0.frame, fs.normalize(ms0.local))
    times, mhist, drifts, dims = [], [], [], []
    drift = 0.0
    for k in range(n_steps + 1):
        t = t0 + k * dt
        if k in sample_set:
            times.append(t)
            mhist.append(physical_moments(ms))
            drifts.append(drift)
            dims.append(ms.dim)
        if k == n_steps:
            break
        ms, drift = mqsd_step(ms, model_factory, t, dt, ns,
                              trunc_tol=trunc_tol, min_dim=min_dim,
                              max_dim=max_dim, recenter_tol=recenter_tol)
    return TrajectoryRecord(
        times=np.asarray(times), moment_history=mhist,
        norm_drift=np.asarray(drifts), basis_dims=np.asarray(dims),
        final_state=ms.local)
