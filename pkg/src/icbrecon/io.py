"""Self-describing binary grids, JSON sidecars, CSV signals and run configs.

Binary layout (all little-endian)::

    magic  b"ICBR"
    uint32 version
    uint32 kind        1 image, 2 vector field, 3 sinogram, 4 complex grid
    uint32 height
    uint32 width
    float64 payload    H*W values (image, sinogram), 2*H*W (field, complex)

Fields are stored component-major; complex grids interleave real and
imaginary parts per entry.
"""

import csv
import json
import os
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "FormatError",
    "KINDS",
    "save_grid",
    "load_grid",
    "save_image",
    "save_field",
    "save_sinogram",
    "save_complex",
    "read_header",
    "save_metadata",
    "load_metadata",
    "save_signal_csv",
    "load_signal_csv",
    "load_config",
    "save_json",
]

MAGIC = b"ICBR"
VERSION = 1
KINDS = {"image": 1, "field": 2, "sinogram": 3, "complex": 4}
_KIND_NAMES = {v: k for k, v in KINDS.items()}
_HEADER = struct.Struct("<4sIIII")


class FormatError(ValueError):
    """Malformed or inconsistent grid file."""


def _payload_len(kind, height, width):
    per = 2 if kind in ("field", "complex") else 1
    return per * height * width


def save_grid(path, array, kind, metadata=None):
    """Write ``array`` as a ``kind`` grid; optional ``metadata`` goes to a sidecar."""
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    a = np.asarray(array)
    if kind == "field":
        if a.ndim != 3 or a.shape[0] != 2:
            raise ValueError(f"field must have shape (2, H, W), got {a.shape}")
        h, w = a.shape[1:]
        payload = np.ascontiguousarray(a, dtype="<f8")
    elif kind == "complex":
        if a.ndim != 2:
            raise ValueError(f"complex grid must be 2-D, got {a.shape}")
        h, w = a.shape
        payload = np.ascontiguousarray(a, dtype="<c16")
    else:
        if a.ndim != 2 or np.iscomplexobj(a):
            raise ValueError(f"{kind} must be a real 2-D array, got {a.dtype} {a.shape}")
        h, w = a.shape
        payload = np.ascontiguousarray(a, dtype="<f8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, KINDS[kind], h, w))
        fh.write(payload.tobytes())
    if metadata is not None:
        save_metadata(path, metadata)
    return path


def save_image(path, u, metadata=None):
    return save_grid(path, u, "image", metadata)


def save_field(path, q, metadata=None):
    return save_grid(path, q, "field", metadata)


def save_sinogram(path, s, metadata=None):
    return save_grid(path, s, "sinogram", metadata)


def save_complex(path, g, metadata=None):
    return save_grid(path, g, "complex", metadata)


def read_header(raw):
    if len(raw) < _HEADER.size:
        raise FormatError("file shorter than header")
    magic, version, code, h, w = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if code not in _KIND_NAMES:
        raise FormatError(f"unknown kind code {code}")
    return _KIND_NAMES[code], h, w


def load_grid(path, expect=None):
    """Return ``(array, kind)``; raises :class:`FormatError` on any inconsistency."""
    raw = Path(path).read_bytes()
    kind, h, w = read_header(raw)
    if expect is not None and kind != expect:
        raise FormatError(f"{path}: expected {expect}, found {kind}")
    body = raw[_HEADER.size :]
    n = _payload_len(kind, h, w)
    if len(body) != 8 * n:
        raise FormatError(f"{path}: header says {n} values, payload has {len(body) / 8:g}")
    if kind == "complex":
        a = np.frombuffer(body, dtype="<c16").reshape(h, w)
    elif kind == "field":
        a = np.frombuffer(body, dtype="<f8").reshape(2, h, w)
    else:
        a = np.frombuffer(body, dtype="<f8").reshape(h, w)
    return a.astype(a.dtype.newbyteorder("="), copy=True), kind


def _sidecar(path):
    return Path(str(path) + ".json")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def save_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def save_metadata(path, metadata):
    """Sidecar ``<path>.json`` next to a grid file."""
    return save_json(_sidecar(path), metadata)


def load_metadata(path):
    side = _sidecar(path)
    if not side.exists():
        return {}
    return json.loads(side.read_text())


def save_signal_csv(path, signals, names=None):
    """Write 1-D signals as columns ``index, name1, name2, ...`` with round-trip precision."""
    cols = [np.asarray(s, dtype=float).ravel() for s in signals]
    if len({c.size for c in cols}) != 1:
        raise ValueError("signals must have equal length")
    names = list(names) if names is not None else [f"s{i}" for i in range(len(cols))]
    if len(names) != len(cols):
        raise ValueError("one name per signal required")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index"] + names)
        for i in range(cols[0].size):
            # repr gives the shortest string that round-trips a float64
            writer.writerow([i] + [repr(float(c[i])) for c in cols])
    return path


def load_signal_csv(path):
    """Return ``{name: 1-D array}`` in column order."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "index":
        raise FormatError(f"{path}: missing header row")
    names = rows[0][1:]
    data = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=float)
    if data.size and data.shape[1] != len(names):
        raise FormatError(f"{path}: ragged rows")
    return {n: data[:, j].copy() for j, n in enumerate(names)}


def load_config(path):
    """Load a JSON run config; relative paths inside resolve against its folder."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    cfg.setdefault("_base_dir", os.fspath(path.parent.resolve()))
    return cfg
