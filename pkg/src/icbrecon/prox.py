"""Proximal maps of the data-term conjugates and the dual/primal projections."""

import numpy as np

__all__ = [
    "prox_kl_conjugate",
    "prox_quadratic_conjugate",
    "project_shifted_ball",
    "project_nonnegative",
    "kl_conjugate",
    "quadratic_conjugate",
    "kl_fidelity",
    "quadratic_fidelity",
]


def prox_kl_conjugate(y, sigma, alpha, f):
    """Prox of ``sigma * H*`` for ``H(w) = alpha * sum(w - f log w)``.

    ``(alpha + y)/2 - sqrt((y - alpha)^2/4 + sigma*alpha*f)``, the root that
    stays below ``alpha``. Zero counts reduce to ``min(y, alpha)``.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("count data must be nonnegative")
    if np.any(np.asarray(sigma) <= 0) or alpha <= 0:
        raise ValueError("sigma and alpha must be positive")
    d = np.asarray(y - alpha, dtype=float)
    saf = sigma * alpha * f
    root = np.sqrt(0.25 * d * d + saf)
    # alpha - result, written without cancellation for y > alpha
    gap = np.where(d > 0, saf / np.maximum(root + 0.5 * d, 1e-300), root - 0.5 * d)
    return alpha - gap


def prox_quadratic_conjugate(y, sigma, beta, g):
    """Prox of ``sigma * H*`` for ``H(w) = beta/2 |w - g|^2`` (complex ``w``)."""
    if np.any(np.asarray(sigma) <= 0) or beta <= 0:
        raise ValueError("sigma and beta must be positive")
    return (beta * y - sigma * beta * g) / (beta + sigma)


def project_shifted_ball(s, shift, radius):
    """Project the vector field ``s`` onto ``{s : |s + shift| <= radius}`` pixelwise."""
    if np.any(np.asarray(radius) < 0):
        raise ValueError("radius must be nonnegative")
    t = s + shift
    mag = np.hypot(t[0], t[1])
    scale = np.minimum(1.0, radius / np.maximum(mag, 1e-300))
    return t * scale - shift


def project_nonnegative(u):
    return np.maximum(u, 0.0)


def kl_fidelity(w, f, alpha):
    """``alpha * sum(w - f log w)`` with ``0 log 0 = 0``; ``inf`` if some ``w <= 0``
    carries counts."""
    w = np.asarray(w, dtype=float)
    f = np.asarray(f, dtype=float)
    pos = f > 0
    if np.any(w[pos] <= 0) or np.any(w < 0):
        return np.inf
    return float(alpha * (np.sum(w) - np.sum(f[pos] * np.log(w[pos]))))


def kl_conjugate(y, f, alpha):
    """``sum alpha f (log(alpha f/(alpha - y)) - 1)``; ``inf`` outside the domain."""
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    pos = f > 0
    if np.any(y[pos] >= alpha) or np.any(y[~pos] > alpha):
        return np.inf
    af = alpha * f[pos]
    return float(np.sum(af * (np.log(af / (alpha - y[pos])) - 1.0)))


def quadratic_fidelity(w, g, beta):
    d = np.asarray(w) - g
    return float(0.5 * beta * np.sum(d.real**2 + d.imag**2))


def quadratic_conjugate(y, g, beta):
    """``|y|^2/(2 beta) + Re<y, g>``."""
    y = np.asarray(y)
    return float(np.sum(y.real**2 + y.imag**2) / (2 * beta) + np.sum(y.real * np.real(g) + y.imag * np.imag(g)))
