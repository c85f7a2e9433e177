"""Boundary-domain integral equation solver for variable-coefficient diffusion.

Solves the mixed problem for div(a grad u) = f on tetrahedralized domains by
collocating the segregated two-equation system built from parametrix-based
volume and surface potentials, and ships the verification suites for the
identities the formulation rests on (jump relations, Green identities,
Laplace-kernel relations, constant-coefficient reduction).
"""

__version__ = "0.1.0"
