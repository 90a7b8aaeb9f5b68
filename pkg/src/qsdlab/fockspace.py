"""Truncated Fock-space linear algebra.

Operators and states live on a truncated number-state basis |0>..|dim-1>.
Convention (hbar = 1):

    a = (Q + iP) / sqrt(2),   Q = (a + a†)/sqrt(2),   P = (a - a†)/(i sqrt(2))

so that the damping Lindblad operator satisfies 2 sqrt(Gamma) a =
sqrt(2 Gamma) (Q + iP) exactly.  Note the 1/sqrt(2) (not 1/2): with this
choice [Q, P] = i and the vacuum has var_q = var_p = 1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, InvalidBasisError, StateError

#: Hermiticity / normalization tolerances used across the package.
HERMITIAN_TOL = 1e-12
NORM_TOL = 1e-6


@dataclass(frozen=True)
class FockBasis:
    """A truncated number-state basis of dimension ``dim``."""

    dim: int

    def __post_init__(self):
        if self.dim < 2:
            raise InvalidBasisError(f"Fock basis needs dim >= 2, got {self.dim}")


@dataclass
class OperatorMatrix:
    """A dense complex matrix over a Fock basis.

    ``bandwidth`` is the half-width of the operator's band (1 for a ladder
    operator, 4 for Q^4, ...).  When set, matrix-vector products only touch
    the stored diagonals, which is the fast path for large bases.
    """

    basis: FockBasis
    entries: np.ndarray
    hermitian: bool = False
    bandwidth: int | None = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)
        d = self.basis.dim
        if self.entries.shape != (d, d):
            raise DimensionMismatchError(
                f"operator shape {self.entries.shape} does not match basis dim {d}"
            )
        if self.hermitian:
            dev = np.max(np.abs(self.entries - self.entries.conj().T))
            if dev > HERMITIAN_TOL:
                raise StateError(f"operator flagged hermitian deviates by {dev:.3e}")

    @property
    def dim(self) -> int:
        return self.basis.dim

    def apply(self, amplitudes: np.ndarray) -> np.ndarray:
        """Matrix-vector product, band-limited when a bandwidth is declared."""
        d = self.basis.dim
        k = self.bandwidth
        if k is None or 2 * k + 1 >= d:
            return self.entries @ amplitudes
        out = np.zeros(d, dtype=complex)
        for off in range(-k, k + 1):
            diag = np.diagonal(self.entries, off)
            if off >= 0:
                out[: d - off] += diag * amplitudes[off:]
            else:
                out[-off:] += diag * amplitudes[: d + off]
        return out

    def dagger(self) -> "OperatorMatrix":
        return OperatorMatrix(self.basis, self.entries.conj().T,
                              hermitian=self.hermitian, bandwidth=self.bandwidth)

    def __matmul__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        _check_same_basis(self.basis, other.basis)
        bw = None
        if self.bandwidth is not None and other.bandwidth is not None:
            bw = self.bandwidth + other.bandwidth
        return OperatorMatrix(self.basis, self.entries @ other.entries, bandwidth=bw)


@dataclass
class StateVector:
    """A pure state |psi> over a truncated Fock basis."""

    basis: FockBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.basis.dim,):
            raise DimensionMismatchError(
                f"state length {self.amplitudes.shape} does not match basis dim "
                f"{self.basis.dim}"
            )

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "StateVector":
        return StateVector(self.basis, self.amplitudes.copy())


@dataclass
class MomentSet:
    """First and second phase-space moments of a state.

    sym_cov is the full symmetrized covariance <dQ dP + dP dQ> (not halved).
    """

    q_mean: float
    p_mean: float
    var_q: float
    var_p: float
    sym_cov: float


def _check_same_basis(a: FockBasis, b: FockBasis):
    if a.dim != b.dim:
        raise DimensionMismatchError(f"basis dims differ: {a.dim} vs {b.dim}")


def identity(basis: FockBasis) -> OperatorMatrix:
    return OperatorMatrix(basis, np.eye(basis.dim, dtype=complex),
                          hermitian=True, bandwidth=0)


def build_ladder(basis: FockBasis) -> tuple[OperatorMatrix, OperatorMatrix]:
    """Annihilation and creation operators on the truncated basis.

    a|n> = sqrt(n)|n-1>; the top row/column is truncated, so a a† - a† a
    equals the identity only on the interior (dim-1) block.
    """
    d = basis.dim
    a = np.zeros((d, d), dtype=complex)
    ns = np.arange(1, d)
    a[ns - 1, ns] = np.sqrt(ns)
    return (OperatorMatrix(basis, a, bandwidth=1),
            OperatorMatrix(basis, a.conj().T, bandwidth=1))


def build_quadratures(basis: FockBasis) -> tuple[OperatorMatrix, OperatorMatrix]:
    """Position and momentum quadratures, Q = (a + a†)/sqrt(2), P = (a - a†)/(i sqrt(2))."""
    a, adag = build_ladder(basis)
    q = (a.entries + adag.entries) / math.sqrt(2)
    p = (a.entries - adag.entries) / (1j * math.sqrt(2))
    return (OperatorMatrix(basis, q, hermitian=True, bandwidth=1),
            OperatorMatrix(basis, p, hermitian=True, bandwidth=1))


def number_operator(basis: FockBasis) -> OperatorMatrix:
    return OperatorMatrix(basis, np.diag(np.arange(basis.dim, dtype=complex)),
                          hermitian=True, bandwidth=0)


def normalize(psi: StateVector) -> StateVector:
    """Return psi scaled to unit norm; direction unchanged."""
    n = psi.norm()
    if n == 0.0 or not math.isfinite(n):
        raise StateError(f"cannot normalize state with norm {n}")
    return StateVector(psi.basis, psi.amplitudes / n)


def expectation(op: OperatorMatrix, psi: StateVector):
    """<psi|O|psi> for a normalized psi.

    Returns a real float for operators flagged hermitian (the imaginary
    residue is asserted small), a complex number otherwise.
    """
    _check_same_basis(op.basis, psi.basis)
    n = psi.norm()
    if abs(n - 1.0) > NORM_TOL:
        raise StateError(f"state not normalized: |psi| = {n}")
    val = complex(np.vdot(psi.amplitudes, op.apply(psi.amplitudes)))
    if op.hermitian:
        if abs(val.imag) > 1e-10:
            raise StateError(
                f"hermitian expectation has imaginary residue {val.imag:.3e}"
            )
        return val.real
    return val


def moments(psi: StateVector, Q: OperatorMatrix, P: OperatorMatrix) -> MomentSet:
    """Central first/second moments of psi with respect to Q and P."""
    q = expectation(Q, psi)
    p = expectation(P, psi)
    qpsi = Q.apply(psi.amplitudes)
    ppsi = P.apply(psi.amplitudes)
    q2 = float(np.vdot(qpsi, qpsi).real)
    p2 = float(np.vdot(ppsi, ppsi).real)
    # <QP + PQ> = 2 Re <Q psi | P psi>
    qp_sym = 2.0 * float(np.vdot(qpsi, ppsi).real)
    var_q = max(q2 - q * q, 0.0)
    var_p = max(p2 - p * p, 0.0)
    return MomentSet(q, p, var_q, var_p, qp_sym - 2.0 * q * p)


def tail_mass(psi: StateVector, k: int) -> float:
    """Probability held in the top k number states; cheap truncation diagnostic."""
    if k <= 0:
        return 0.0
    k = min(k, psi.basis.dim)
    n2 = psi.norm() ** 2
    if n2 == 0.0:
        raise StateError("zero state has no tail mass")
    return float(np.sum(np.abs(psi.amplitudes[-k:]) ** 2)) / n2


def vacuum_state(basis: FockBasis) -> StateVector:
    amps = np.zeros(basis.dim, dtype=complex)
    amps[0] = 1.0
    return StateVector(basis, amps)


def number_state(basis: FockBasis, n: int) -> StateVector:
    if not 0 <= n < basis.dim:
        raise InvalidBasisError(f"number state |{n}> outside basis dim {basis.dim}")
    amps = np.zeros(basis.dim, dtype=complex)
    amps[n] = 1.0
    return StateVector(basis, amps)


def coherent_state(basis: FockBasis, alpha: complex) -> StateVector:
    """Coherent state via the stable amplitude recurrence, renormalized at the end.

    With alpha = (q + ip)/sqrt(2) the state is centered at (<Q>, <P>) = (q, p).
    """
    d = basis.dim
    amps = np.zeros(d, dtype=complex)
    amps[0] = 1.0
    for n in range(1, d):
        amps[n] = amps[n - 1] * alpha / math.sqrt(n)
    return normalize(StateVector(basis, amps))
