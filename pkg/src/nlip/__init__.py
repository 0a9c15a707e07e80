"""Boundary-measurement simulation and coefficient reconstruction for nonlinear PDEs."""

from .discretize import BoundaryData, Grid2D, ScalarField, build_grid
from .elliptic import DtnOracle, EllipticProblem, make_dtn, solve_harmonic, solve_semilinear
from .multilin import EpsilonSchedule, integral_pairing, linearized_hierarchy, mixed_derivative_dtn
from .cgo import FourierTable, NullVectorPair, fourier_sample, null_vectors, reconstruct_q
from .wave import BoundaryTimeData, SpaceTimeField, SpaceTimeGrid, solve_wave, wave_dtn
from .wave_recon import DiamondRegion, PulseTriple, design_pulses, point_sample_q, reconstruct_q_diamond
from .passive import MetricField, ObservationFamily, ObserverSet
from .noise import add_noise

__version__ = "0.1.0"
