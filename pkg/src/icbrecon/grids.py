"""Dense grid conventions and elementwise algebra.

All grids are plain numpy arrays in row-major (C) order, so the flat index of
pixel ``(x, y)`` is ``y * width + x``:

* image          ``(height, width)`` float64
* vector field   ``(2, height, width)`` float64, ``[0]`` is the x (column)
  component and ``[1]`` the y (row) component
* complex grid   ``(height, width)`` complex128 (k-space)
* sinogram       ``(n_angles, n_bins)`` float64
"""

import numpy as np

__all__ = [
    "as_image",
    "as_field",
    "check_finite",
    "check_same_shape",
    "axpy",
    "inner_product",
    "pointwise_magnitude",
    "zeros_field",
]


def check_same_shape(x, y):
    if np.shape(x) != np.shape(y):
        raise ValueError(f"shape mismatch: {np.shape(x)} vs {np.shape(y)}")


def check_finite(x, what="array"):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{what} contains NaN or Inf")
    return x


def as_image(u):
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[np.newaxis, :]
    if u.ndim != 2:
        raise ValueError(f"image must be 2-D (height, width), got shape {u.shape}")
    return u


def as_field(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 3 or p.shape[0] != 2:
        raise ValueError(f"vector field must have shape (2, H, W), got {p.shape}")
    return p


def zeros_field(shape):
    return np.zeros((2,) + tuple(shape))


def axpy(a, x, y):
    """Return ``a * x + y`` for same-shaped grids."""
    check_same_shape(x, y)
    return a * np.asarray(x) + np.asarray(y)


def inner_product(x, y) -> float:
    """Real dual pairing of two grids.

    For vector fields both components are summed; for complex grids this is
    the real part of the Hermitian product ``sum(conj(x) * y)``.
    """
    check_same_shape(x, y)
    x = np.asarray(x)
    y = np.asarray(y)
    if np.iscomplexobj(x) or np.iscomplexobj(y):
        return float(np.sum(x.real * y.real + x.imag * y.imag))
    return float(np.dot(x.ravel(), y.ravel()))


def pointwise_magnitude(p):
    """Per-pixel Euclidean norm of a vector field."""
    p = as_field(p)
    return np.hypot(p[0], p[1])
