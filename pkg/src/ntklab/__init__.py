"""Finite-width neural tangent kernel analysis for Fourier-feature residual nets.

Exact empirical NTK computation, eigen-spectrum tracking, linearized
training dynamics, spectral growth checks, and a seeded experiment CLI.
"""

__version__ = "0.1.0"

from ntklab.backend import COMPILED, NAME as BACKEND_NAME

__all__ = ["COMPILED", "BACKEND_NAME", "__version__"]
