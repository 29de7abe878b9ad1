"""TV Bregman distances and their sign-free infimal convolution (ICB).

A TV subgradient is carried by its dual field ``q`` (``p = -div q``), so

    D(v)    = TV(v) - <q, grad v>
    ICB(v)  = inf_{v = phi + psi} D_q(phi) + D_{-q}(psi)

On a grid the infimum over splittings of the gradient field has the
pointwise closed form ``sum |grad v| * G(grad v/|grad v|, q)`` implemented by
:func:`icb_value`; :func:`icb_oracle` computes the same infimum numerically.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .diffops import divergence, gradient
from .grids import as_field, check_same_shape, inner_product, pointwise_magnitude
from .prox import project_shifted_ball

__all__ = [
    "SubgradientState",
    "bregman_tv",
    "icb_integrand",
    "icb_value",
    "icb_oracle",
    "OracleResult",
    "renormalize_field",
]

#: dual fields whose magnitude exceeds 1 by more than this are reported
SUBGRADIENT_TOL = 1e-3


@dataclass
class SubgradientState:
    """Dual field ``q`` of a TV subgradient, tagged with channel and iteration."""

    q: np.ndarray
    channel_id: int = 0
    bregman_iteration: int = 0

    def __post_init__(self):
        self.q = as_field(self.q)

    @classmethod
    def zeros(cls, shape, channel_id=0):
        return cls(np.zeros((2,) + tuple(shape)), channel_id, 0)

    @property
    def max_magnitude(self) -> float:
        return float(pointwise_magnitude(self.q).max())

    @property
    def subgradient(self):
        """The TV subgradient ``p = -div q`` as an image."""
        return -divergence(self.q)


def _field(q):
    return q.q if isinstance(q, SubgradientState) else as_field(q)


def renormalize_field(q, tol=SUBGRADIENT_TOL, what="subgradient field"):
    """Scale pixels with ``|q| > 1`` back to the unit sphere.

    Warns if any pixel exceeded ``1 + tol`` (poorly converged inner problem).
    """
    mag = pointwise_magnitude(q)
    worst = float(mag.max()) if mag.size else 0.0
    if worst <= 1.0:
        return q
    if worst > 1.0 + tol:
        warnings.warn(f"{what}: max magnitude {worst:.6f} exceeds 1 + {tol:g}; renormalizing", RuntimeWarning)
    return q / np.maximum(mag, 1.0)


def bregman_tv(v, q) -> float:
    """``TV(v) - <q, grad v>``; nonnegative whenever ``|q| <= 1``."""
    q = _field(q)
    g = gradient(v)
    check_same_shape(g, q)
    return float(np.sum(pointwise_magnitude(g))) - inner_product(q, g)


def icb_integrand(f_dir, q_vec):
    """Closed-form ICB density ``G(f, q)`` for a unit direction ``f``.

    Both arguments have the vector components on axis 0 (shape ``(2,)`` or
    ``(2, ...)``). With ``phi`` the angle between ``f`` and ``q`` (``phi = 0``
    where ``q = 0``)::

        G = 1 - |cos phi| |q|             if |q| <  |cos phi|
        G = |sin phi| sqrt(1 - |q|^2)     otherwise
    """
    f_dir = np.asarray(f_dir, dtype=float)
    q_vec = np.asarray(q_vec, dtype=float)
    fn = np.hypot(f_dir[0], f_dir[1])
    if np.any(np.abs(fn - 1.0) > 1e-9):
        raise ValueError("f_dir must have unit length")
    qn = np.hypot(q_vec[0], q_vec[1])
    if np.any(qn > 1.0 + 1e-9):
        raise ValueError("|q| must not exceed 1")
    qn = np.minimum(qn, 1.0)
    dot = f_dir[0] * q_vec[0] + f_dir[1] * q_vec[1]
    safe = np.where(qn > 0, qn, 1.0)
    cos = np.where(qn > 0, np.abs(dot) / (fn * safe), 1.0)
    cos = np.minimum(cos, 1.0)
    sin = np.sqrt(np.maximum(1.0 - cos * cos, 0.0))
    first = 1.0 - cos * qn
    second = sin * np.sqrt(np.maximum(1.0 - qn * qn, 0.0))
    return np.where(qn < cos, first, second)


def icb_value(v, q) -> float:
    """``sum over pixels with grad v != 0 of |grad v| * G(grad v/|grad v|, q)``."""
    q = renormalize_field(_field(q))
    g = gradient(v)
    check_same_shape(g, q)
    mag = pointwise_magnitude(g)
    sel = mag > 0
    if not sel.any():
        return 0.0
    f_dir = g[:, sel] / mag[sel]
    return float(np.sum(mag[sel] * icb_integrand(f_dir, q[:, sel])))


@dataclass
class OracleResult:
    value: float
    split: np.ndarray = field(repr=False)
    iterations: int = 0


def icb_oracle(v, q, iterations=20000, splitting="field", return_split=False, max_pixels=256, primal_step=10.0):
    """Numerical ICB by primal-dual minimisation over the splitting variable.

    ``splitting="field"`` splits the gradient field ``grad v = (grad v - g) + g``
    with ``g`` an arbitrary vector field (the quantity the closed form
    describes). ``splitting="image"`` splits the image ``v = (v - z) + z``,
    i.e. ``g = grad z``; this can only be larger and coincides in 1-D.

    Returns the smallest primal objective seen (an upper bound of the infimum).
    """
    q = renormalize_field(_field(q), what="oracle field")
    a = gradient(v)
    check_same_shape(a, q)
    if a[0].size > max_pixels:
        raise ValueError(f"oracle limited to {max_pixels} pixels, got {a[0].size}")

    def objective(g):
        r = a - g
        return float(
            np.sum(pointwise_magnitude(r)) - inner_product(q, r) + np.sum(pointwise_magnitude(g)) + inner_product(q, g)
        )

    if splitting == "field":
        fwd = lambda x: x  # noqa: E731
        adj_neg = lambda y: -y  # noqa: E731  (K^T for K = -I on the first term)
        x = np.zeros_like(a)
        lip = 2.0
    elif splitting == "image":
        fwd = gradient
        adj_neg = divergence  # -grad^T
        x = np.zeros(a.shape[1:])
        lip = 16.0
    else:
        raise ValueError(f"unknown splitting {splitting!r}")

    # the minimiser sits at distance ~1/sqrt(1 - |q|^2); favour long primal steps
    tau = primal_step / np.sqrt(lip)
    sig = 0.99 / (primal_step * np.sqrt(lip))
    y3 = np.zeros_like(a)
    y4 = np.zeros_like(a)
    xbar = x.copy()
    best = objective(fwd(x))
    best_x = x.copy()
    for it in range(iterations):
        gx = fwd(xbar)
        y3 = project_shifted_ball(y3 + sig * (a - gx), q, 1.0)
        y4 = project_shifted_ball(y4 + sig * gx, -q, 1.0)
        # d/dx of <y3, a - Kx> + <y4, Kx> is K^T (y4 - y3)
        x_new = x + tau * (adj_neg(y4) - adj_neg(y3))
        xbar = 2 * x_new - x
        x = x_new
        if it % 10 == 0 or it == iterations - 1:
            val = objective(fwd(x))
            if val < best:
                best, best_x = val, x.copy()
    return OracleResult(best, best_x, iterations) if return_split else best
