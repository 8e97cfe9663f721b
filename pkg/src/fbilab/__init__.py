"""Numerical laboratory for the FBI transform calculus in one dimension.

The subpackages follow the data flow of the computations:

``numgrid``  grids, quadrature, inner products and slope fits
``jets``     truncated power series and almost analytic extensions
``fbi``      the transform ``T``, its adjoint and the projector ``TT*``
``symbols``  test symbols and their quantizations
``weights``  compactly supported weights and flat/weighted residuals
``wproj``    weighted phases, the leading Bergman kernel and its oracle
``deform``   IR-deformations, the pair ``(T_Lambda, S_Lambda)`` and weights
``qmode``    complex WKB quasimodes at a nondegenerate zero
``lab``      configuration, experiments, CSV output and the CLI
"""

from . import errors

__version__ = "0.1.0"

__all__ = ["errors", "__version__"]
