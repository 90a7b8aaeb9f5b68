"""Shared builders for the test suite."""

import math

import numpy as np

from qsdlab import fockspace as fs
from qsdlab.fockspace import FockBasis, OperatorMatrix
from qsdlab.models import OpenSystemModel


def damped_oscillator(dim: int, gamma: float = 0.125,
                      lindblads=None) -> OpenSystemModel:
    """Damped harmonic oscillator: H = (Q^2 + P^2)/2, L = 2 sqrt(gamma) a.

    An explicit lindblads list (of dense matrices) overrides the default
    single damping operator.
    """
    basis = FockBasis(dim)
    Q, P = fs.build_quadratures(basis)
    h = OperatorMatrix(basis, (Q.entries @ Q.entries + P.entries @ P.entries) / 2.0,
                       hermitian=True, bandwidth=2)
    a, _ = fs.build_ladder(basis)
    if lindblads is None:
        ops = [OperatorMatrix(basis, 2.0 * math.sqrt(gamma) * a.entries,
                              bandwidth=1)]
    else:
        ops = [OperatorMatrix(basis, np.asarray(m, dtype=complex)) for m in lindblads]
    return OpenSystemModel(basis=basis, h_static=h, h_drive=None,
                           drive_coeff=None, lindblads=ops)
