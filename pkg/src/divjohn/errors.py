"""Exception types shared across the package.

Everything derives from DivJohnError so callers can catch the whole family.
Estimator non-convergence is reported through result flags, not exceptions;
NonConvergence exists for the rare cases where no partial result makes sense.
"""

from __future__ import annotations


class DivJohnError(Exception):
    """Base class for all errors raised by this package."""


class Unsupported(DivJohnError):
    """Requested a configuration outside the implemented scope (e.g. n != 2)."""


class GridMismatch(DivJohnError):
    """Two grid objects disagree on shape, spacing, or origin."""


class EmptyRaster(DivJohnError):
    """Rasterization produced no occupied cells at the requested resolution."""


class DisconnectedRaster(DivJohnError):
    """Occupancy mask has more than one 4-connected component."""


class UnreachableCube(DivJohnError):
    """A Whitney cube has no chain of face-adjacent cubes to the root."""


class MeanNotZero(DivJohnError):
    """Right-hand side fails the compatibility condition integral f = 0."""


class OverlapTooSmall(DivJohnError):
    """Adjacent dilated cubes share too few cells to carry a transfer."""


class NoPath(DivJohnError):
    """No admissible curve to the candidate center survives the distance constraint."""


class NotASobolevTriple(DivJohnError):
    """Exponents (p, q, b) violate the admissibility relations."""


class NonConvergence(DivJohnError):
    """An iterative estimator failed to reach its tolerance and has no usable output."""


class SingularSystem(DivJohnError):
    """A saddle-point or constraint system is singular beyond the compatibility kernel."""


class PreconditionResidual(DivJohnError):
    """Inner solver finished but the constraint residual is above tolerance."""


class DecompositionFailed(DivJohnError):
    """Mean-zero decomposition violated its own invariants (support, sum, or budget)."""
