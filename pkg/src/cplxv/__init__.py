"""Numerical verification toolkit for complex Pucci-type operators on C^n.

Modules: ``hermitian`` (matrices, operators), ``grid`` (lattice domains and
differences), ``solver`` (Dirichlet solvers), ``viscosity`` (touching-test
falsifiers), ``estimates`` and ``harnack`` (inequality checks), ``cli`` (batch runner).
"""

__version__ = "0.1.0"
