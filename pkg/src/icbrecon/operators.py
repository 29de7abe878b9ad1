"""Linear forward operators (PET and MRI) with exact adjoints.

Every operator maps images of ``domain_shape`` to measurements of
``range_shape`` and satisfies ``<K u, y> = <u, K* y>`` under
:func:`icbrecon.grids.inner_product`.

Besides ``apply``/``adjoint`` each operator can describe itself for the
diagonal step-size rule of the primal-dual solver (:meth:`LinearOperator.steps`).
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import correlate1d

from .grids import as_image

__all__ = [
    "LinearOperator",
    "IdentityOperator",
    "MatrixOperator",
    "ScaledOperator",
    "ComposedOperator",
    "RadonGeometry",
    "RadonTransform",
    "GaussianBlur",
    "SamplingMask",
    "MaskedFourier",
    "pet_operator",
    "radon_forward",
    "radon_adjoint",
    "gaussian_blur",
    "dft2_forward",
    "dft2_adjoint",
    "estimate_operator_norm",
]


class LinearOperator:
    """Base class. Subclasses set ``domain_shape``/``range_shape`` and implement
    ``apply`` and ``adjoint``."""

    domain_shape: tuple = ()
    range_shape: tuple = ()
    is_complex = False
    # True if every matrix entry is >= 0; then absolute row/column sums can be
    # probed by applying the operator to all-ones arrays.
    nonnegative = False

    def apply(self, u):
        raise NotImplementedError

    def adjoint(self, y):
        raise NotImplementedError

    def __call__(self, u):
        return self.apply(u)

    def abs_row_sums(self):
        if not self.nonnegative:
            raise NotImplementedError("absolute row sums need a nonnegative operator")
        return self.apply(np.ones(self.domain_shape))

    def abs_col_sums(self):
        if not self.nonnegative:
            raise NotImplementedError("absolute column sums need a nonnegative operator")
        return self.adjoint(np.ones(self.range_shape))

    @cached_property
    def norm_estimate(self) -> float:
        """Upper estimate of the spectral norm (power iteration plus 1% margin)."""
        return 1.01 * estimate_operator_norm(self, 100)

    def steps(self):
        """Dual step array and per-pixel column weight for diagonal preconditioning.

        Returns ``(sigma, col)`` such that ``||diag(sigma)^(1/2) K x||^2 <=
        sum(col * x**2)`` for all ``x``. For nonnegative matrices this is the
        row/column absolute-sum rule ``sigma = 1/row_sum``, ``col = col_sum``;
        otherwise a scalar ``sigma = 1/||K||`` with ``col = ||K||``.
        """
        if self.nonnegative:
            rows = np.asarray(self.abs_row_sums(), dtype=float)
            cols = np.asarray(self.abs_col_sums(), dtype=float)
            sigma = np.ones_like(rows)
            np.divide(1.0, rows, out=sigma, where=rows > 0)
            return sigma, cols
        n = self.norm_estimate
        return np.full(self.range_shape, 1.0 / n), np.full(self.domain_shape, n)


class IdentityOperator(LinearOperator):
    nonnegative = True

    def __init__(self, shape):
        self.domain_shape = self.range_shape = tuple(shape)

    def apply(self, u):
        return np.array(u, dtype=float, copy=True)

    def adjoint(self, y):
        return np.array(y, dtype=float, copy=True)

    @cached_property
    def norm_estimate(self):
        return 1.0


class MatrixOperator(LinearOperator):
    """Explicit (dense or sparse) real matrix acting on flattened arrays."""

    def __init__(self, matrix, domain_shape, range_shape=None):
        self.matrix = sp.csr_matrix(matrix)
        self.matrix_t = self.matrix.T.tocsr()
        self.domain_shape = tuple(domain_shape)
        self.range_shape = tuple(range_shape) if range_shape is not None else (self.matrix.shape[0],)
        self.nonnegative = bool(self.matrix.nnz == 0 or self.matrix.data.min() >= 0)

    def apply(self, u):
        return (self.matrix @ np.ravel(u)).reshape(self.range_shape)

    def adjoint(self, y):
        return (self.matrix_t @ np.ravel(y)).reshape(self.domain_shape)

    def abs_row_sums(self):
        return np.asarray(abs(self.matrix).sum(axis=1)).reshape(self.range_shape)

    def abs_col_sums(self):
        return np.asarray(abs(self.matrix).sum(axis=0)).reshape(self.domain_shape)

    def steps(self):
        rows = self.abs_row_sums().astype(float)
        sigma = np.ones_like(rows)
        np.divide(1.0, rows, out=sigma, where=rows > 0)
        return sigma, self.abs_col_sums().astype(float)


class ScaledOperator(LinearOperator):
    """``c * K`` for a positive scalar ``c``."""

    def __init__(self, op, scale):
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.op = op
        self.scale = float(scale)
        self.domain_shape = op.domain_shape
        self.range_shape = op.range_shape
        self.is_complex = op.is_complex
        self.nonnegative = op.nonnegative

    def apply(self, u):
        return self.scale * self.op.apply(u)

    def adjoint(self, y):
        return self.scale * self.op.adjoint(y)

    @cached_property
    def norm_estimate(self):
        return self.scale * self.op.norm_estimate


class ComposedOperator(LinearOperator):
    """``outer o inner``."""

    def __init__(self, outer, inner):
        if tuple(outer.domain_shape) != tuple(inner.range_shape):
            raise ValueError("incompatible operator shapes")
        self.outer = outer
        self.inner = inner
        self.domain_shape = inner.domain_shape
        self.range_shape = outer.range_shape
        self.is_complex = outer.is_complex or inner.is_complex
        self.nonnegative = outer.nonnegative and inner.nonnegative

    def apply(self, u):
        return self.outer.apply(self.inner.apply(u))

    def adjoint(self, y):
        return self.inner.adjoint(self.outer.adjoint(y))


# ---------------------------------------------------------------------------
# PET: parallel-beam Radon transform and Gaussian blur
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadonGeometry:
    """Parallel-beam geometry, angles uniform in ``[0, pi)``, bins centred on the
    rotation axis with width equal to ``pixel_size``."""

    n_angles: int
    n_bins: int
    pixel_size: float = 1.0

    def __post_init__(self):
        if self.n_angles < 1 or self.n_bins < 1:
            raise ValueError("n_angles and n_bins must be positive")
        if self.pixel_size <= 0:
            raise ValueError("pixel_size must be positive")

    @property
    def angles(self):
        return np.arange(self.n_angles) * (math.pi / self.n_angles)

    @classmethod
    def for_image(cls, shape, n_angles, pixel_size=1.0):
        """Smallest bin count covering the image diagonal."""
        h, w = shape
        n_bins = int(math.ceil(math.hypot(h, w))) + 1
        return cls(n_angles, n_bins, pixel_size)


class RadonTransform(LinearOperator):
    """Pixel-driven projector: each pixel's mass is split between the two
    detector bins nearest to its projected centre (linear interpolation).

    The adjoint is the transpose of the same sparse matrix. The total of each
    projection equals ``pixel_size * sum(u)`` exactly.
    """

    nonnegative = True

    def __init__(self, image_shape, geometry: RadonGeometry):
        h, w = image_shape
        g = geometry
        diag = math.hypot(h - 1, w - 1) / 2.0
        if diag > (g.n_bins - 1) / 2.0:
            raise ValueError(
                f"n_bins={g.n_bins} does not cover the image diagonal ({2 * diag + 1:.1f} pixels)"
            )
        self.geometry = g
        self.domain_shape = (h, w)
        self.range_shape = (g.n_angles, g.n_bins)

        xs = np.arange(w) - (w - 1) / 2.0
        ys = np.arange(h) - (h - 1) / 2.0
        xx, yy = np.meshgrid(xs, ys)
        xx = xx.ravel()
        yy = yy.ravel()
        pix = np.arange(h * w)
        rows, cols, vals = [], [], []
        centre = (g.n_bins - 1) / 2.0
        for k, theta in enumerate(g.angles):
            t = xx * math.cos(theta) + yy * math.sin(theta) + centre
            b0 = np.floor(t).astype(np.int64)
            frac = t - b0
            # t may land exactly on the last bin centre
            last = b0 >= g.n_bins - 1
            b0[last] = g.n_bins - 2
            frac[last] = 1.0
            base = k * g.n_bins
            rows += [base + b0, base + b0 + 1]
            cols += [pix, pix]
            vals += [(1.0 - frac) * g.pixel_size, frac * g.pixel_size]
        m = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(g.n_angles * g.n_bins, h * w),
        ).tocsr()
        m.eliminate_zeros()
        self.matrix = m
        self.matrix_t = m.T.tocsr()

    def apply(self, u):
        return (self.matrix @ np.ravel(u)).reshape(self.range_shape)

    def adjoint(self, s):
        return (self.matrix_t @ np.ravel(s)).reshape(self.domain_shape)


def _gaussian_kernel(sigma):
    radius = int(math.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


class GaussianBlur(LinearOperator):
    """Separable Gaussian convolution, kernel truncated at ``ceil(4 sigma)`` and
    renormalised, half-sample symmetric boundary. Self-adjoint and
    mass-preserving."""

    nonnegative = True

    def __init__(self, shape, sigma):
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        self.sigma = float(sigma)
        self.kernel = _gaussian_kernel(self.sigma)
        self.domain_shape = self.range_shape = tuple(shape)

    def apply(self, u):
        u = np.asarray(u, dtype=float)
        out = correlate1d(u, self.kernel, axis=0, mode="reflect")
        return correlate1d(out, self.kernel, axis=1, mode="reflect")

    adjoint = apply

    @cached_property
    def norm_estimate(self):
        return 1.0


def pet_operator(image_shape, geometry, blur_sigma=1.7, scale=1.0):
    """``scale * Radon o Blur`` (``scale`` converts image units to counts)."""
    op = ComposedOperator(RadonTransform(image_shape, geometry), GaussianBlur(image_shape, blur_sigma))
    return ScaledOperator(op, scale) if scale != 1.0 else op


def radon_forward(u, geometry):
    u = as_image(u)
    return RadonTransform(u.shape, geometry).apply(u)


def radon_adjoint(s, geometry, image_shape):
    return RadonTransform(image_shape, geometry).adjoint(s)


def gaussian_blur(u, sigma):
    u = as_image(u)
    return GaussianBlur(u.shape, sigma).apply(u)


# ---------------------------------------------------------------------------
# MRI: masked unitary DFT
# ---------------------------------------------------------------------------


class SamplingMask:
    """Boolean k-space mask in unshifted FFT order (DC at index ``[0, 0]``)."""

    def __init__(self, mask, kind="custom"):
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("mask must be 2-D")
        if not mask.any():
            raise ValueError("mask samples no frequencies")
        self.mask = mask
        self.kind = kind

    @property
    def shape(self):
        return self.mask.shape

    @property
    def fraction_sampled(self) -> float:
        return float(self.mask.mean())

    def __repr__(self):
        return f"SamplingMask(kind={self.kind!r}, shape={self.shape}, fraction={self.fraction_sampled:.3f})"


class MaskedFourier(LinearOperator):
    """Unitary 2-D DFT followed by restriction to the sampled frequencies.

    Unsampled entries of the output are exactly zero. The adjoint zero-fills,
    inverts and keeps the real part (images are real).
    """

    is_complex = True

    def __init__(self, mask: SamplingMask):
        if not isinstance(mask, SamplingMask):
            mask = SamplingMask(mask)
        self.mask = mask
        self.domain_shape = self.range_shape = mask.shape

    def apply(self, v):
        return np.fft.fft2(v, norm="ortho") * self.mask.mask

    def adjoint(self, g):
        return np.fft.ifft2(g * self.mask.mask, norm="ortho").real

    @cached_property
    def norm_estimate(self):
        return 1.0


def dft2_forward(v, mask):
    return MaskedFourier(mask).apply(v)


def dft2_adjoint(g, mask):
    return MaskedFourier(mask).adjoint(g)


def estimate_operator_norm(op, iterations=100, seed=0) -> float:
    """Power iteration on ``K* K``; returns ``sqrt`` of the last Rayleigh quotient.

    For a positive semidefinite ``K* K`` the Rayleigh quotients of power iterates
    are nondecreasing, so more iterations never lower the estimate.
    """
    if iterations < 10:
        raise ValueError("use at least 10 power iterations")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.domain_shape)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iterations):
        y = op.adjoint(op.apply(x))
        est = float(np.vdot(x, y).real)
        n = np.linalg.norm(y)
        if n == 0:
            return 0.0
        x = y / n
    return math.sqrt(max(est, 0.0))
