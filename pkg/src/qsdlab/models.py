"""The forced, damped Duffing oscillator, classical and quantum.

Classical equation of motion (dimensionless, drive period 2*pi):

    x'' + 2 Gamma x' + x^3 - x = g cos(t)

Quantum model (hbar = 1, m = 1), with classical-limit scaling beta:

    H_beta(t) = P^2/2 + beta^2 Q^4/4 - Q^2/2 + (g/beta) cos(t) Q
                + lambda (QP + PQ)
    L         = sqrt(2 Gamma) (Q + iP) = 2 sqrt(Gamma) a

The (QP + PQ) term is a damping ansatz; its coefficient ``lambda`` is
configurable (default sqrt(Gamma), the value printed alongside this model
in the literature).  The exact mean-flow reduction of this model, for any
lambda, is

    x' = y + 2 (lambda - Gamma) x
    y' = -x^3 + x - g cos(t) - 2 (lambda + Gamma) y      (scaled x = beta <Q>)

With lambda = Gamma this is the classical Duffing vector field with
effective damping coefficient 2*Gamma (i.e. Gamma_classical = 2 Gamma) and
drive sign flipped; no lambda reproduces the classical equation verbatim.
See docs/moment_equations.md (R1) for the derivation and the exact
parameter correspondence used by the validation suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import fockspace as fs
from .errors import InstabilityError, ParameterError
from .fockspace import FockBasis, OperatorMatrix

DRIVE_PERIOD = 2.0 * math.pi


@dataclass(frozen=True)
class DuffingParams:
    """Parameters of the forced, damped Duffing oscillator.

    ansatz_coeff is the coefficient lambda of the (QP+PQ) damping ansatz;
    None selects the default sqrt(gamma).
    """

    gamma: float = 0.125
    g: float = 0.3
    beta: float = 1.0
    ansatz_coeff: float | None = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ParameterError(f"beta must be > 0, got {self.beta}")
        if self.gamma < 0:
            raise ParameterError(f"gamma must be >= 0, got {self.gamma}")

    @property
    def lam(self) -> float:
        """Effective ansatz coefficient (default sqrt(gamma))."""
        if self.ansatz_coeff is not None:
            return self.ansatz_coeff
        return math.sqrt(self.gamma)


@dataclass(frozen=True)
class ClassicalState:
    x: float
    p: float
    t: float = 0.0


def classical_rhs(s: ClassicalState, params: DuffingParams) -> tuple[float, float]:
    """(dx/dt, dp/dt) of the classical Duffing flow; beta-independent."""
    dx = s.p
    dp = -2.0 * params.gamma * s.p - s.x ** 3 + s.x + params.g * math.cos(s.t)
    return dx, dp


def classical_integrate(s0: ClassicalState, params: DuffingParams,
                        t_end: float, dt: float,
                        sample_every: int = 1) -> list[ClassicalState]:
    """Fixed-step RK4 integration of the classical flow.

    Returns the trajectory sampled every ``sample_every`` steps (the initial
    state included).  Deterministic: same inputs give bit-identical output.
    """
    if dt <= 0:
        raise ParameterError(f"dt must be > 0, got {dt}")
    n_steps = int(round((t_end - s0.t) / dt))
    gamma, g = params.gamma, params.g
    cos = math.cos

    def rhs(x, p, t):
        return p, -2.0 * gamma * p - x * x * x + x + g * cos(t)

    x, p, t = s0.x, s0.p, s0.t
    out = [ClassicalState(x, p, t)]
    for i in range(1, n_steps + 1):
        k1x, k1p = rhs(x, p, t)
        k2x, k2p = rhs(x + 0.5 * dt * k1x, p + 0.5 * dt * k1p, t + 0.5 * dt)
        k3x, k3p = rhs(x + 0.5 * dt * k2x, p + 0.5 * dt * k2p, t + 0.5 * dt)
        k4x, k4p = rhs(x + dt * k3x, p + dt * k3p, t + dt)
        x += dt * (k1x + 2.0 * k2x + 2.0 * k3x + k4x) / 6.0
        p += dt * (k1p + 2.0 * k2p + 2.0 * k3p + k4p) / 6.0
        t = s0.t + i * dt
        if not (math.isfinite(x) and math.isfinite(p)):
            raise InstabilityError(f"classical trajectory diverged at t={t}")
        if i % sample_every == 0:
            out.append(ClassicalState(x, p, t))
    return out


@dataclass
class OpenSystemModel:
    """An open quantum system: time-dependent Hamiltonian plus Lindblad operators.

    The Hamiltonian is stored split as h_static + drive_coeff(t) * h_drive so
    integrators can apply it without rebuilding a dense matrix each step.
    """

    basis: FockBasis
    h_static: OperatorMatrix
    h_drive: OperatorMatrix | None
    drive_coeff: Callable[[float], float] | None
    lindblads: list[OperatorMatrix] = field(default_factory=list)
    _eig: tuple | None = field(default=None, repr=False, compare=False)
    _prop_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def hamiltonian_at(self, t: float) -> OperatorMatrix:
        if self.h_drive is None:
            return self.h_static
        bw = None
        if self.h_static.bandwidth is not None and self.h_drive.bandwidth is not None:
            bw = max(self.h_static.bandwidth, self.h_drive.bandwidth)
        return OperatorMatrix(
            self.basis,
            self.h_static.entries + self.drive_coeff(t) * self.h_drive.entries,
            hermitian=True, bandwidth=bw)

    def apply_hamiltonian(self, t: float, amplitudes: np.ndarray) -> np.ndarray:
        out = self.h_static.apply(amplitudes)
        if self.h_drive is not None:
            out = out + self.drive_coeff(t) * self.h_drive.apply(amplitudes)
        return out

    def static_propagator(self, dt: float) -> np.ndarray:
        """Exact unitary exp(-i h_static dt), cached per dt.

        Built from the (lazily cached) eigendecomposition of h_static, so
        the stiff high-energy part of the spectrum advances without the
        amplitude growth an explicit scheme would suffer at the basis edge.
        """
        cached = self._prop_cache.get(dt)
        if cached is not None:
            return cached
        if self._eig is None:
            if not self.h_static.hermitian:
                raise ParameterError(
                    "static propagator requires a hermitian static Hamiltonian")
            w, v = np.linalg.eigh(self.h_static.entries)
            self._eig = (w, v)
        w, v = self._eig
        u = (v * np.exp(-1j * w * dt)) @ v.conj().T
        self._prop_cache[dt] = u
        return u


def build_duffing_quantum(params: DuffingParams, basis: FockBasis,
                          frame_q: float = 0.0, frame_p: float = 0.0) -> OpenSystemModel:
    """Quantum Duffing model on a truncated basis.

    frame_q/frame_p displace the operators, Q -> Q + q, P -> P + p, which is
    exact for this polynomial Hamiltonian and linear Lindblad operator; the
    moving-basis integrator uses this to work in a co-moving frame.
    """
    Q, P = fs.build_quadratures(basis)
    eye = np.eye(basis.dim, dtype=complex)
    q_ = Q.entries + frame_q * eye
    p_ = P.entries + frame_p * eye
    q2 = q_ @ q_
    q4 = q2 @ q2
    p2 = p_ @ p_
    lam = params.lam
    beta = params.beta
    h_static = (p2 / 2.0 + (beta * beta / 4.0) * q4 - q2 / 2.0
                + lam * (q_ @ p_ + p_ @ q_))
    # Enforce exact hermiticity against accumulated rounding.
    h_static = (h_static + h_static.conj().T) / 2.0
    h_drive = OperatorMatrix(basis, q_, hermitian=True, bandwidth=1)
    g_over_beta = params.g / beta

    def drive(t: float) -> float:
        return g_over_beta * math.cos(t)

    lindblads = []
    if params.gamma > 0.0:
        c = math.sqrt(2.0 * params.gamma)
        lindblads.append(OperatorMatrix(basis, c * (q_ + 1j * p_), bandwidth=1))
    return OpenSystemModel(
        basis=basis,
        h_static=OperatorMatrix(basis, h_static, hermitian=True, bandwidth=4),
        h_drive=h_drive,
        drive_coeff=drive,
        lindblads=lindblads)


def default_basis_dim(beta: float, cap: int = 4096) -> int:
    """Fixed-basis sizing heuristic: the attractor extent ~2/beta must fit."""
    return min(max(math.ceil((3.0 / beta) ** 2), 16), cap)
