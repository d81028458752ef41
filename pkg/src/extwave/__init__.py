"""Exterior-domain defocusing wave laboratory.

Submodules: ``geometry`` (obstacles, grids, masks), ``solver`` (leapfrog
evolution), ``functionals`` (energies, norms, decay fits), ``multiplier``
(vector-field currents and integral identities), ``spectral`` (fractional
powers of the Dirichlet Laplacian) and ``cli``.
"""
from . import errors, functionals, geometry, multiplier, solver, spectral
from .errors import ExtWaveError
from .geometry import GridSpec, build_mask, build_profile
from .solver import WaveState, evolve, make_exponents, make_initial

__version__ = "0.1.0"

__all__ = ["errors", "functionals", "geometry", "multiplier", "solver", "spectral",
           "ExtWaveError", "GridSpec", "build_mask", "build_profile",
           "WaveState", "evolve", "make_exponents", "make_initial"]
