"""
swave: implicit theta-schemes for the stochastic wave equation with
multiplicative noise, P1 finite elements in space and a Monte Carlo harness
for strong convergence and energy stability studies.
"""

from .config import ARTIFACT_VERSION

__version__ = ARTIFACT_VERSION
