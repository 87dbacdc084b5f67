"""Numerical toolkit for convergence bounds of Sinh-Gordon form-factor series."""

from .specfun import ModelParams, QuadratureSpec

__all__ = ["ModelParams", "QuadratureSpec"]
__version__ = "0.1.0"
