import json

import numpy as np
import pytest

from icbrecon import io
from icbrecon.metrics import ssim, ssim_map


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - size // 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def patch_ssim(x, y, L):
    """SSIM of one 11x11 patch with the Gaussian window, written out directly."""
    w = gaussian_window()
    mx, my = (w * x).sum(), (w * y).sum()
    vx = (w * (x - mx) ** 2).sum()
    vy = (w * (y - my) ** 2).sum()
    cxy = (w * (x - mx) * (y - my)).sum()
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    return (2 * mx * my + c1) * (2 * cxy + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2))


def test_ssim_identity_and_offset():
    rng = np.random.default_rng(0)
    x = rng.random((32, 32))
    assert ssim(x, x, 1.0) == 1.0
    assert ssim(x + 0.5, x, 1.0) < 1.0


def test_ssim_checkerboard_negative():
    y, x = np.mgrid[:11, :11]
    board = ((x + y) % 2).astype(float)
    ref = patch_ssim(board, 1 - board, 1.0)
    assert ref < 0
    # centre of the local map uses exactly this patch
    big = np.pad(board, 11, mode="wrap")
    inv = 1 - big
    m = ssim_map(big, inv, 1.0)
    assert m[16, 16] == pytest.approx(ref, abs=1e-12)
    assert ssim(big, inv, 1.0) < 0


def test_ssim_symmetric_and_bounded():
    rng = np.random.default_rng(1)
    a, b = rng.random((2, 40, 40))
    assert abs(ssim(a, b, 1.0) - ssim(b, a, 1.0)) <= 1e-12
    assert -1 <= ssim(a, b, 1.0) <= 1


def test_ssim_roi():
    rng = np.random.default_rng(2)
    truth = rng.random((32, 32))
    x = truth.copy()
    x[:, :16] = 0
    roi = np.zeros((32, 32), bool)
    roi[:, 24:] = True
    assert ssim(x, truth, 1.0, roi) > ssim(x, truth, 1.0)
    with pytest.raises(ValueError):
        ssim(x, truth, 1.0, np.zeros((32, 32), bool))
    with pytest.raises(ValueError):
        ssim(x, truth[:, :20], 1.0)
    with pytest.raises(ValueError):
        ssim(x, truth, 0.0)


@pytest.mark.parametrize(
    "kind,make",
    [
        ("image", lambda r: r.standard_normal((64, 64))),
        ("field", lambda r: r.standard_normal((2, 16, 12))),
        ("sinogram", lambda r: r.random((10, 37))),
        ("complex", lambda r: r.standard_normal((8, 8)) + 1j * r.standard_normal((8, 8))),
    ],
)
def test_grid_round_trip(tmp_path, kind, make):
    a = make(np.random.default_rng(3))
    path = tmp_path / f"{kind}.bin"
    io.save_grid(path, a, kind, {"seed": np.int64(3), "note": "x"})
    b, k = io.load_grid(path)
    assert k == kind
    assert b.dtype == a.dtype and b.shape == a.shape
    assert a.tobytes() == b.tobytes()
    assert io.load_metadata(path) == {"seed": 3, "note": "x"}


def test_header_layout(tmp_path):
    path = io.save_image(tmp_path / "u.bin", np.zeros((3, 5)))
    raw = path.read_bytes()
    assert raw[:4] == b"ICBR"
    assert io.read_header(raw) == ("image", 3, 5)
    assert len(raw) == 20 + 15 * 8


def test_malformed_files(tmp_path):
    path = io.save_image(tmp_path / "u.bin", np.ones((4, 4)))
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "bad.bin"
    bad.write_bytes(bytes(raw[:-8]))
    with pytest.raises(io.FormatError):
        io.load_grid(bad)
    bad.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(io.FormatError):
        io.load_grid(bad)
    bad.write_bytes(bytes(raw[:10]))
    with pytest.raises(io.FormatError):
        io.load_grid(bad)
    raw[8:12] = (9).to_bytes(4, "little")
    bad.write_bytes(bytes(raw))
    with pytest.raises(io.FormatError):
        io.load_grid(bad)
    with pytest.raises(io.FormatError):
        io.load_grid(path, expect="sinogram")


def test_signal_csv_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((2, 100)) * 1e3
    path = io.save_signal_csv(tmp_path / "s.csv", [a, b], ["blue", "red"])
    back = io.load_signal_csv(path)
    assert list(back) == ["blue", "red"]
    assert np.array_equal(back["blue"], a) and np.array_equal(back["red"], b)
    with open(path) as fh:
        header = fh.readline().strip()
        first = fh.readline().strip().split(",")
    assert header == "index,blue,red"
    assert f"{float(first[1]):.17g}" == f"{a[0]:.17g}"
    with pytest.raises(ValueError):
        io.save_signal_csv(tmp_path / "t.csv", [a, b[:5]])


def test_config_loading(tmp_path):
    with pytest.raises(FileNotFoundError, match="config not found"):
        io.load_config(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ValueError):
        io.load_config(p)
    p.write_text("[1, 2]")
    with pytest.raises(ValueError):
        io.load_config(p)
    p.write_text(json.dumps({"method": "tv", "alpha": 0.1}))
    cfg = io.load_config(p)
    assert cfg["method"] == "tv" and cfg["_base_dir"] == str(tmp_path)
