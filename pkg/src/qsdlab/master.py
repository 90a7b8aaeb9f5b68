"""Deterministic Lindblad master-equation integrator.

This is the small-dimension oracle against which trajectory ensembles are
validated:

    drho/dt = -i [H(t), rho] + sum_j ( L_j rho L_j† - (1/2){L_j† L_j, rho} )

Integrated with fixed-step RK4; the equation is an ODE in matrix space, so
no stochastic scheme is involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, ParameterError, TruncationError
from .fockspace import FockBasis
from .models import OpenSystemModel

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
POSITIVITY_TOL = 1e-8

#: Soft guard on oracle-scale runs; O(dim^3) per step beyond this gets slow.
ORACLE_DIM_CAP = 512


@dataclass
class DensityMatrix:
    """A Hermitian, unit-trace, positive semidefinite matrix over a Fock basis."""

    basis: FockBasis
    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)
        d = self.basis.dim
        if self.entries.shape != (d, d):
            raise DimensionMismatchError(
                f"density matrix shape {self.entries.shape} vs basis dim {d}")

    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    def purity(self) -> float:
        return float(np.trace(self.entries @ self.entries).real)

    def validate(self, scale: float = 1.0):
        """Check Hermiticity/trace/positivity invariants, scaled by ``scale``."""
        herm = np.max(np.abs(self.entries - self.entries.conj().T))
        if herm > HERMITIAN_TOL * scale:
            raise TruncationError(f"density matrix non-Hermitian by {herm:.3e}")
        tr = abs(self.trace() - 1.0)
        if tr > TRACE_TOL * scale:
            raise TruncationError(f"density matrix trace off by {tr:.3e}")
        min_eig = float(np.linalg.eigvalsh((self.entries + self.entries.conj().T) / 2)[0])
        if min_eig < -POSITIVITY_TOL * scale:
            raise TruncationError(f"density matrix min eigenvalue {min_eig:.3e}")


def pure_density(amplitudes: np.ndarray, basis: FockBasis) -> DensityMatrix:
    amps = np.asarray(amplitudes, dtype=complex)
    return DensityMatrix(basis, np.outer(amps, amps.conj()))


def master_rhs(rho: DensityMatrix, model: OpenSystemModel, t: float) -> np.ndarray:
    """Right-hand side of the Lindblad equation; trace-free up to truncation edge."""
    if rho.basis.dim != model.basis.dim:
        raise DimensionMismatchError(
            f"rho dim {rho.basis.dim} vs model dim {model.basis.dim}")
    return _rhs_raw(rho.entries, model, t)


def _rhs_raw(r: np.ndarray, model: OpenSystemModel, t: float) -> np.ndarray:
    h = model.hamiltonian_at(t).entries
    out = -1j * (h @ r - r @ h)
    for lop in model.lindblads:
        l = lop.entries
        ldag = l.conj().T
        ldl = ldag @ l
        out += l @ r @ ldag - 0.5 * (ldl @ r + r @ ldl)
    return out


def master_evolve(rho0: DensityMatrix, model: OpenSystemModel,
                  t0: float, t_end: float, dt: float,
                  dim_cap: int = ORACLE_DIM_CAP,
                  validate_scale: float = 10.0) -> DensityMatrix:
    """Fixed-step RK4 evolution of the density matrix from t0 to t_end."""
    if dt <= 0:
        raise ParameterError(f"dt must be > 0, got {dt}")
    if rho0.basis.dim > dim_cap:
        raise TruncationError(
            f"dim {rho0.basis.dim} exceeds oracle cap {dim_cap}; "
            "raise dim_cap explicitly if intended")
    n_steps = int(round((t_end - t0) / dt))
    r = rho0.entries.copy()
    for i in range(n_steps):
        t = t0 + i * dt
        k1 = _rhs_raw(r, model, t)
        k2 = _rhs_raw(r + 0.5 * dt * k1, model, t + 0.5 * dt)
        k3 = _rhs_raw(r + 0.5 * dt * k2, model, t + 0.5 * dt)
        k4 = _rhs_raw(r + dt * k3, model, t + dt)
        r = r + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    result = DensityMatrix(rho0.basis, r)
    try:
        result.validate(scale=validate_scale)
    except TruncationError as exc:
        raise TruncationError(
            f"master evolution left the valid-state region ({exc}); "
            "the truncated basis is likely too small") from exc
    return result


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """T(a, b) = (1/2) ||a - b||_1 via the eigenvalues of the difference."""
    if a.basis.dim != b.basis.dim:
        raise DimensionMismatchError("trace distance needs matching bases")
    diff = a.entries - b.entries
    diff = (diff + diff.conj().T) / 2.0
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff))))


def expectation(op_entries: np.ndarray, rho: DensityMatrix) -> complex:
    return complex(np.trace(op_entries @ rho.entries))
