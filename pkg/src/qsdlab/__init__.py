"""qsdlab: quantum state diffusion simulator for the forced, damped Duffing
oscillator, with master-equation, moving-basis and linearized backends."""

__version__ = "0.1.0"

from .fockspace import (FockBasis, MomentSet, OperatorMatrix, StateVector,
                        build_ladder, build_quadratures, coherent_state,
                        expectation, moments, normalize, tail_mass)
from .models import (ClassicalState, DuffingParams, OpenSystemModel,
                     build_duffing_quantum, classical_integrate, classical_rhs)
from .trajectory import (NoiseStream, TrajectoryRecord, ensemble_mean_density,
                         evolve_trajectory, qsd_step, wiener_increment)
from .master import DensityMatrix, master_evolve, master_rhs, trace_distance
from .movingbasis import (MovingState, PhaseFrame, adapt_truncation,
                          displacement_apply, mqsd_step, recenter)
from .linearized import (LinearizedState, evolve_linearized, linearized_step,
                         validity_monitor)
from .sections import SectionPoint, emit_section, parse_section
