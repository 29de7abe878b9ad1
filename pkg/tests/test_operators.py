import math

import numpy as np
import pytest
from oracles import adjoint_defect

from icbrecon.grids import inner_product
from icbrecon.operators import (
    ComposedOperator,
    GaussianBlur,
    IdentityOperator,
    MaskedFourier,
    MatrixOperator,
    RadonGeometry,
    RadonTransform,
    SamplingMask,
    ScaledOperator,
    dft2_adjoint,
    dft2_forward,
    estimate_operator_norm,
    gaussian_blur,
    pet_operator,
    radon_adjoint,
    radon_forward,
)


def test_radon_adjoint_pairs():
    geom = RadonGeometry.for_image((32, 32), 24)
    op = RadonTransform((32, 32), geom)
    rng = np.random.default_rng(0)
    assert max(adjoint_defect(op, rng) for _ in range(20)) < 1e-10


def test_radon_zero_and_positivity():
    geom = RadonGeometry.for_image((16, 16), 12)
    assert np.all(radon_forward(np.zeros((16, 16)), geom) == 0)
    assert np.all(radon_adjoint(np.zeros(geom.n_angles * geom.n_bins).reshape(12, -1), geom, (16, 16)) == 0)
    back = radon_adjoint(np.ones((12, geom.n_bins)), geom, (16, 16))
    assert np.all(back > 0)
    rng = np.random.default_rng(1)
    assert np.all(radon_forward(rng.random((16, 16)), geom) >= 0)


def test_radon_point_mass_per_angle():
    geom = RadonGeometry.for_image((21, 21), 17, pixel_size=0.5)
    u = np.zeros((21, 21))
    u[4, 13] = 3.0
    s = radon_forward(u, geom)
    assert np.allclose(s.sum(axis=1), 3.0 * 0.5, rtol=1e-12)
    # each angle touches at most two neighbouring bins
    assert np.all((s > 0).sum(axis=1) <= 2)


def test_radon_disk_profiles_agree_between_angles():
    n = 64
    y, x = np.mgrid[:n, :n] - (n - 1) / 2
    disk = (np.hypot(x, y) < 20).astype(float)
    geom = RadonGeometry.for_image((n, n), 4)
    s = radon_forward(disk, geom)
    # angles 0 and 90 degrees map the pixel grid onto itself
    assert np.allclose(s[0], s[2], rtol=1e-6, atol=1e-9)
    # the profile is symmetric about the rotation axis
    assert np.allclose(s[0], s[0][::-1], atol=1e-9)


def test_radon_rejects_short_detector():
    with pytest.raises(ValueError):
        RadonTransform((32, 32), RadonGeometry(8, 20))


def test_blur_properties():
    rng = np.random.default_rng(2)
    op = GaussianBlur((32, 32), 1.7)
    assert np.allclose(op.apply(np.full((32, 32), 2.5)), 2.5, atol=1e-12)
    u, v = rng.standard_normal((2, 32, 32))
    assert abs(inner_product(op.apply(u), v) - inner_product(u, op.apply(v))) < 1e-10
    assert op.apply(u).sum() == pytest.approx(u.sum(), rel=1e-12)
    assert np.all(op.apply(rng.random((32, 32))) >= 0)
    other = GaussianBlur((32, 32), 0.8)
    assert np.allclose(op.apply(other.apply(u)), other.apply(op.apply(u)), atol=1e-10)
    with pytest.raises(ValueError):
        gaussian_blur(u, 0.0)


def test_blur_fwhm():
    d = np.zeros((41, 41))
    d[20, 20] = 1
    b = gaussian_blur(d, 1.7)
    prof = b[20]
    half = prof.max() / 2
    # linear interpolation of the half-maximum crossing
    right = next(i for i in range(20, 41) if prof[i] < half)
    x = right - 1 + (prof[right - 1] - half) / (prof[right - 1] - prof[right])
    fwhm = 2 * (x - 20)
    assert fwhm == pytest.approx(2.355 * 1.7, abs=0.1)


def test_pet_operator():
    geom = RadonGeometry.for_image((32, 32), 20)
    op = pet_operator((32, 32), geom, 1.7)
    rng = np.random.default_rng(3)
    assert max(adjoint_defect(op, rng) for _ in range(10)) < 1e-9
    assert np.all(op.apply(np.zeros((32, 32))) == 0)
    y, x = np.mgrid[:32, :32] - 15.5
    disk = (np.hypot(x, y) < 10).astype(float)
    s = op.apply(disk)
    assert np.all(s >= 0)
    # every ray through the disk support carries counts
    hit = RadonTransform((32, 32), geom).apply(disk) > 0
    assert np.all(s[hit] > 0)
    scaled = pet_operator((32, 32), geom, 1.7, scale=3.0)
    assert np.allclose(scaled.apply(disk), 3 * s)


def dft_matrix(n):
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def test_masked_fourier_matches_dense_dft():
    h, w = 8, 8
    rng = np.random.default_rng(4)
    m = rng.random((h, w)) < 0.5
    m[0, 0] = True
    F = np.kron(dft_matrix(h), dft_matrix(w))
    B = np.diag(m.ravel().astype(float)) @ F
    v = rng.standard_normal((h, w))
    assert np.allclose(dft2_forward(v, SamplingMask(m)).ravel(), B @ v.ravel(), atol=1e-12)
    y = rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))
    lhs = np.real(np.vdot(B @ v.ravel(), y.ravel()))
    rhs = float(v.ravel() @ dft2_adjoint(y, SamplingMask(m)).ravel())
    assert abs(lhs - rhs) <= 1e-10


def test_full_mask_round_trip():
    rng = np.random.default_rng(5)
    v = rng.standard_normal((16, 12))
    mask = SamplingMask(np.ones((16, 12), bool), "full")
    assert np.allclose(dft2_adjoint(dft2_forward(v, mask), mask), v, atol=1e-10)
    assert np.all(dft2_forward(np.zeros((16, 12)), mask) == 0)


def test_unsampled_entries_are_zero():
    m = np.zeros((8, 8), bool)
    m[::2] = True
    g = dft2_forward(np.random.default_rng(6).standard_normal((8, 8)), SamplingMask(m))
    assert np.all(g[~m] == 0)


def test_empty_mask_rejected():
    with pytest.raises(ValueError):
        SamplingMask(np.zeros((4, 4), bool))


def test_operator_norms():
    assert estimate_operator_norm(IdentityOperator((5, 5)), 20) == pytest.approx(1, abs=1e-6)
    full = MaskedFourier(SamplingMask(np.ones((8, 8), bool)))
    assert estimate_operator_norm(full, 20) == pytest.approx(1, abs=1e-6)
    diag = MatrixOperator(np.diag([1.0, 2.0, 3.0]), (3,))
    assert estimate_operator_norm(diag, 200) == pytest.approx(3, abs=1e-6)
    with pytest.raises(ValueError):
        estimate_operator_norm(diag, 5)


def test_operator_norm_nondecreasing():
    rng = np.random.default_rng(7)
    op = MatrixOperator(rng.standard_normal((12, 9)), (9,))
    ests = [estimate_operator_norm(op, k) for k in (10, 20, 40, 80)]
    assert all(b >= a - 1e-12 for a, b in zip(ests, ests[1:]))
    assert ests[-1] <= np.linalg.norm(op.matrix.toarray(), 2) * (1 + 1e-12)
    assert ests[-1] >= 0.99 * np.linalg.norm(op.matrix.toarray(), 2)


def test_composed_and_scaled():
    rng = np.random.default_rng(8)
    a = MatrixOperator(rng.random((6, 4)), (4,), (6,))
    b = MatrixOperator(rng.random((4, 5)), (5,), (4,))
    op = ScaledOperator(ComposedOperator(a, b), 2.0)
    assert op.nonnegative
    assert adjoint_defect(op, rng) < 1e-12
    dense = 2.0 * a.matrix.toarray() @ b.matrix.toarray()
    assert np.allclose(op.abs_row_sums(), dense.sum(axis=1))
    assert np.allclose(op.abs_col_sums(), dense.sum(axis=0))
    with pytest.raises(ValueError):
        ComposedOperator(b, b)
    with pytest.raises(ValueError):
        ScaledOperator(a, -1.0)


def test_step_rule_bound():
    # sum_i sigma_i (K x)_i^2 <= sum_j col_j x_j^2 for the diagonal step rule
    rng = np.random.default_rng(9)
    geom = RadonGeometry.for_image((16, 16), 10)
    ops = [pet_operator((16, 16), geom, 1.2), MaskedFourier(SamplingMask(rng.random((16, 16)) < 0.4))]
    for op in ops:
        sigma, col = op.steps()
        for _ in range(5):
            x = rng.standard_normal(op.domain_shape)
            kx = op.apply(x)
            lhs = float(np.sum(sigma * np.abs(kx) ** 2))
            assert lhs <= float(np.sum(col * x**2)) * (1 + 1e-9)


def test_geometry_validation():
    with pytest.raises(ValueError):
        RadonGeometry(0, 10)
    with pytest.raises(ValueError):
        RadonGeometry(3, 10, pixel_size=0)
    g = RadonGeometry.for_image((30, 40), 7)
    assert g.n_bins >= math.hypot(30, 40)
