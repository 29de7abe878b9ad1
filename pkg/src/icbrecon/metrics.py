"""Structural similarity against a ground truth, optionally over a region of interest."""

import numpy as np
from skimage.metrics import structural_similarity

__all__ = ["ssim", "ssim_map"]


def ssim_map(x, truth, dynamic_range):
    """Local SSIM map: 11x11 Gaussian window (sigma 1.5), ``C1 = (0.01 L)^2``,
    ``C2 = (0.03 L)^2``, population statistics."""
    x = np.asarray(x, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if x.shape != truth.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {truth.shape}")
    if not dynamic_range > 0:
        raise ValueError("dynamic_range must be positive")
    _, smap = structural_similarity(
        x,
        truth,
        data_range=float(dynamic_range),
        gaussian_weights=True,
        sigma=1.5,
        use_sample_covariance=False,
        K1=0.01,
        K2=0.03,
        full=True,
    )
    return smap


def ssim(x, truth, dynamic_range, roi=None) -> float:
    """Mean local SSIM, averaged over ``roi`` (boolean mask) if given."""
    smap = ssim_map(x, truth, dynamic_range)
    if roi is None:
        return float(smap.mean())
    roi = np.asarray(roi, dtype=bool)
    if roi.shape != smap.shape or not roi.any():
        raise ValueError("roi must be a nonempty mask of the image shape")
    return float(smap[roi].mean())
