"""Dual mixed Crouzeix-Raviart discretization of the generalized Darcy-Forchheimer problem.

The flux is discontinuous ``P_{k-1}`` and the potential lives in the Crouzeix-Raviart
space of order ``k`` on triangular meshes; the nonlinear system is solved by the
standard or the relaxed fixed-point iteration.
"""

__version__ = "0.1.0"
