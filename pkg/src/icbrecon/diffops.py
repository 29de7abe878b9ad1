"""Forward-difference gradient with Neumann boundary, its negative adjoint and TV."""

from dataclasses import dataclass

import numpy as np

from .grids import (
    as_field,
    as_image,
    check_same_shape,
    inner_product,
    pointwise_magnitude,
)

__all__ = [
    "gradient",
    "divergence",
    "tv",
    "SubgradientCheck",
    "validate_subgradient",
    "gradient_column_counts",
]


def gradient(u):
    """Forward differences; the last column/row difference is zero."""
    u = as_image(u)
    g = np.zeros((2,) + u.shape)
    g[0, :, :-1] = u[:, 1:] - u[:, :-1]
    g[1, :-1, :] = u[1:, :] - u[:-1, :]
    return g


def divergence(p):
    """Backward-difference divergence, exactly ``-gradient^T``."""
    p = as_field(p)
    px, py = p[0], p[1]
    d = np.zeros(px.shape)
    d[:, :-1] += px[:, :-1]
    d[:, 1:] -= px[:, :-1]
    d[:-1, :] += py[:-1, :]
    d[1:, :] -= py[:-1, :]
    return d


def tv(u) -> float:
    """Isotropic total variation ``sum |grad u|``."""
    return float(np.sum(pointwise_magnitude(gradient(u))))


def gradient_column_counts(shape):
    """Number of nonzero entries of the gradient matrix touching each pixel.

    Each forward difference row has entries -1 and +1, so this is also the
    column absolute sum of the gradient matrix (at most 4 per pixel in 2-D).
    """
    h, w = shape
    c = np.zeros(shape)
    c[:, :-1] += 1
    c[:, 1:] += 1
    c[:-1, :] += 1
    c[1:, :] += 1
    return c


def gradient_row_sums(shape):
    """Absolute row sums of the gradient matrix, laid out as a vector field.

    Rows on the Neumann boundary are identically zero.
    """
    h, w = shape
    r = np.zeros((2, h, w))
    r[0, :, :-1] = 2.0
    r[1, :-1, :] = 2.0
    return r


@dataclass
class SubgradientCheck:
    max_magnitude: float
    alignment_defect: float
    is_valid: bool


def validate_subgradient(q, u, tol) -> SubgradientCheck:
    """Check that the dual field ``q`` represents a subgradient ``-div q`` of TV at ``u``.

    Valid means ``|q| <= 1`` everywhere and ``<q, grad u> = TV(u)``, both up
    to ``tol`` (the latter relative to ``1 + TV(u)``).
    """
    q = as_field(q)
    g = gradient(u)
    check_same_shape(q, g)
    max_mag = float(pointwise_magnitude(q).max()) if q.size else 0.0
    tv_u = float(np.sum(pointwise_magnitude(g)))
    defect = tv_u - inner_product(q, g)
    ok = max_mag <= 1.0 + tol and defect <= tol * (1.0 + tv_u)
    return SubgradientCheck(max_mag, defect, bool(ok))
