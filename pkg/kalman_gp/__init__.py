"""
Kalman GP - streaming spatio-temporal Gaussian-process regression.

Separable space/time kernels with a rational temporal spectrum are realized as
finite-dimensional state-space models, so Gaussian-process regression over a set
of spatial locations becomes an exact Kalman recursion.
"""

__version__ = "0.1.0"
