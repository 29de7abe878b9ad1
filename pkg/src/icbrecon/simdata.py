"""Procedural PET/MRI phantoms, 1-D test signals, k-space masks and noise.

Random numbers come from numpy's counter-based Philox bit generator, seeded
explicitly, so every data set is reproducible from its parameters. numpy's
Poisson sampler uses the PTRS transformed-rejection method for means >= 10
and multiplication of uniforms below that.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_dilation

from .diffops import gradient
from .grids import pointwise_magnitude
from .operators import MaskedFourier, SamplingMask

__all__ = [
    "PhantomPair",
    "NoiseSpec",
    "PET_VALUES",
    "MRI_VALUES",
    "make_phantom_pair",
    "make_1d_signals",
    "SIGNAL_EDGES",
    "make_mask",
    "count_scale",
    "simulate_pet",
    "simulate_mri",
    "rng_from_seed",
    "signal_edges",
    "MASK_KINDS",
]

# Intensities per region; every pair of touching regions differs in both
# channels. Jumps agree in sign at background/ring and white matter/CSF and
# disagree at ring/grey matter, grey/white matter and white matter/nuclei.
PET_VALUES = {
    "background": 0.0,
    "ring": 1.0,
    "grey": 6.0,
    "white": 2.0,
    "csf": 0.5,
    "nuclei": 7.0,
    "pet_lesion": 10.0,
}
MRI_VALUES = {
    "background": 0.0,
    "ring": 0.9,
    "grey": 0.45,
    "white": 0.7,
    "csf": 0.15,
    "nuclei": 0.55,
    "mri_lesion": 1.0,
}


def rng_from_seed(seed, stream=0):
    """Philox generator; ``stream`` jumps ahead by ``stream * 2**128`` draws so
    different streams of one seed never overlap."""
    bits = np.random.Philox(int(seed))
    if stream:
        bits = bits.jumped(int(stream))
    return np.random.Generator(bits)


@dataclass
class PhantomPair:
    pet: np.ndarray
    mri: np.ndarray
    labels: np.ndarray = field(repr=False)
    shared_edge_mask: np.ndarray = field(repr=False)
    pet_lesion_mask: np.ndarray = field(repr=False)
    mri_lesion_mask: np.ndarray = field(repr=False)
    support: np.ndarray = field(repr=False)

    @property
    def size(self):
        return self.pet.shape[0]


def _star(x, y, cx, cy, r0, harmonics):
    """Inside test for a smooth star-shaped region ``r < r0 (1 + sum a cos(k t + p))``."""
    dx, dy = x - cx, y - cy
    r = np.hypot(dx, dy)
    t = np.arctan2(dy, dx)
    bound = np.ones_like(t)
    for k, a, p in harmonics:
        bound += a * np.cos(k * t + p)
    return r < r0 * bound


def _ellipse(x, y, cx, cy, ax, ay, angle=0.0):
    c, s = np.cos(angle), np.sin(angle)
    u = (x - cx) * c + (y - cy) * s
    v = -(x - cx) * s + (y - cy) * c
    return (u / ax) ** 2 + (v / ay) ** 2 < 1.0


_HEAD = [(2, 0.06, 0.3), (3, 0.02, 1.1), (5, 0.015, 0.4)]
_WHITE = [(2, 0.10, 0.3), (3, 0.05, 2.0), (4, 0.06, 0.7), (6, 0.03, 1.3)]


def make_phantom_pair(size) -> PhantomPair:
    """Nested piecewise-constant brain-like phantom on a ``size x size`` grid.

    Regions (outside in): background, skull ring, grey matter, white matter,
    two ventricles (CSF) and two deep nuclei. A hot lesion exists only in the
    PET image (inside grey matter) and a bright lesion only in the MRI image
    (inside white matter).
    """
    size = int(size)
    if size < 32:
        raise ValueError("phantom size must be at least 32")
    c = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    x, y = np.meshgrid(c, c)
    head = _star(x, y, 0.0, 0.0, 0.88, _HEAD)
    brain = _star(x, y, 0.0, 0.0, 0.78, _HEAD)
    white = _star(x, y, 0.0, 0.02, 0.52, _WHITE)
    csf = _ellipse(x, y, -0.13, -0.08, 0.07, 0.2, 0.25) | _ellipse(x, y, 0.13, -0.08, 0.07, 0.2, -0.25)
    nuclei = _ellipse(x, y, -0.2, 0.22, 0.09, 0.06, 0.5) | _ellipse(x, y, 0.2, 0.22, 0.09, 0.06, -0.5)
    pet_lesion = _ellipse(x, y, 0.5, -0.42, 0.07, 0.07)
    mri_lesion = _ellipse(x, y, -0.32, 0.0, 0.07, 0.06, 0.4)

    names = ["background", "ring", "grey", "white", "csf", "nuclei", "pet_lesion", "mri_lesion"]
    labels = np.zeros((size, size), dtype=np.int8)
    labels[head] = 1
    labels[brain] = 2
    labels[white] = 3
    labels[csf & white] = 4
    labels[nuclei & white] = 5
    # lesions sit inside a single tissue so the other channel shows no edge
    pet_les = pet_lesion & brain & ~white
    mri_les = mri_lesion & white & ~csf & ~nuclei
    labels[pet_les] = 6
    labels[mri_les] = 7

    pet_table = np.array([PET_VALUES.get(n, np.nan) for n in names])
    mri_table = np.array([MRI_VALUES.get(n, np.nan) for n in names])
    pet_table[7] = PET_VALUES["white"]
    mri_table[6] = MRI_VALUES["grey"]
    pet = pet_table[labels]
    mri = mri_table[labels]

    # forward differences put a lesion's edge on pixels just outside it
    pet_mask = binary_dilation(pet_les, iterations=1)
    mri_mask = binary_dilation(mri_les, iterations=1)
    pet_edges = pointwise_magnitude(gradient(pet)) > 0
    mri_edges = pointwise_magnitude(gradient(mri)) > 0
    shared = pet_edges & mri_edges
    support = binary_dilation(head, iterations=2)
    return PhantomPair(pet, mri, labels, shared, pet_mask, mri_mask, support)


# 1-D signals: edge positions in percent of the length and the plateau values.
SIGNAL_EDGES = (10, 30, 50, 70, 90)
_BLUE_LEVELS = (2.0, 3.5, 6.5, 5.0, 2.5, 5.5)
_RED_LEVELS = (6.0, 3.0, 5.5, 8.5, 6.0, 9.0)


def signal_edges(length):
    return [int(round(p * length / 100.0)) for p in SIGNAL_EDGES]


def make_1d_signals(length=100):
    """Two piecewise-constant ``1 x length`` signals with a common jump set.

    Jumps agree in sign at 30, 70, 90 and disagree at 10, 50 (percent of the
    length); the height ratios vary too much for a global rescaling to match
    them. Blue carries the two smallest jumps (1.5 at 10 and 50).
    """
    length = int(length)
    if length < 100:
        raise ValueError("signal length must be at least 100")
    edges = [0] + signal_edges(length) + [length]
    blue = np.empty(length)
    red = np.empty(length)
    for k in range(len(edges) - 1):
        blue[edges[k] : edges[k + 1]] = _BLUE_LEVELS[k]
        red[edges[k] : edges[k + 1]] = _RED_LEVELS[k]
    return blue[np.newaxis, :], red[np.newaxis, :]


def _centered_coords(size):
    k = np.arange(size) - size // 2
    return np.meshgrid(k, k)


def _to_fft_order(centered):
    return np.fft.ifftshift(centered)


def _spokes(size, n):
    mask = np.zeros((size, size), dtype=bool)
    c = size // 2
    t = np.arange(-size, size + 0.5, 0.25)
    for a in np.arange(n) * np.pi / n:
        xs = np.rint(c + t * np.cos(a)).astype(int)
        ys = np.rint(c + t * np.sin(a)).astype(int)
        ok = (xs >= 0) & (xs < size) & (ys >= 0) & (ys < size)
        mask[ys[ok], xs[ok]] = True
    return mask


def _spiral(size, turns):
    mask = np.zeros((size, size), dtype=bool)
    c = size // 2
    r_max = size / np.sqrt(2.0)
    theta_max = 2 * np.pi * turns
    # arc-length sampling, about four points per pixel
    n = int(4 * np.pi * r_max * turns) + 100
    s = np.linspace(0.0, 1.0, n)
    theta = theta_max * np.sqrt(s)
    r = r_max * theta / theta_max
    xs = np.rint(c + r * np.cos(theta)).astype(int)
    ys = np.rint(c + r * np.sin(theta)).astype(int)
    ok = (xs >= 0) & (xs < size) & (ys >= 0) & (ys < size)
    mask[ys[ok], xs[ok]] = True
    mask[c, c] = True
    return mask


def _closest(build, candidates, target):
    best = None
    for p in candidates:
        m = build(p)
        err = abs(m.mean() - target)
        if best is None or err < best[0]:
            best = (err, p, m)
    return best[1], best[2]


def _first_reaching(build, target, lo, hi):
    """Line counts give a nondecreasing fraction; step until it passes ``target``."""
    prev = None
    for n in range(lo, hi):
        m = build(n)
        if m.mean() >= target:
            if prev is not None and target - prev[1].mean() < m.mean() - target:
                return prev
            return n, m
        prev = (n, m)
    return prev


MASK_KINDS = ("full", "half", "spokes", "spiral")


def make_mask(kind, size, spokes=None, turns=None) -> SamplingMask:
    """k-space sampling pattern, returned in FFT order (DC at ``[0, 0]``).

    ``half`` keeps every second row (the DC row included). ``spokes`` draws
    ``spokes`` lines through the centre; ``spiral`` rasterises an Archimedean
    spiral with ``turns`` turns reaching the corners. Unset counts are chosen
    to sample about 50 % (spokes) and 13 % (spiral) of k-space.
    """
    size = int(size)
    if size < 2:
        raise ValueError("mask size must be at least 2")
    if kind == "full":
        m = np.ones((size, size), dtype=bool)
    elif kind == "half":
        _, ky = _centered_coords(size)
        m = ky % 2 == 0
    elif kind == "spokes":
        if spokes is None:
            spokes, m = _first_reaching(lambda n: _spokes(size, n), 0.5, 4, 4 * size)
        else:
            if int(spokes) < 1:
                raise ValueError("need at least one spoke")
            spokes = int(spokes)
            m = _spokes(size, spokes)
    elif kind == "spiral":
        if turns is None:
            cand = np.arange(1.0, size / 2.0, 0.25)
            turns, m = _closest(lambda t: _spiral(size, t), cand, 0.13)
        else:
            if not float(turns) > 0:
                raise ValueError("turns must be positive")
            m = _spiral(size, float(turns))
    else:
        raise ValueError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")
    mask = SamplingMask(_to_fft_order(m), kind)
    mask.params = {"spokes": spokes, "turns": turns}
    return mask


@dataclass
class NoiseSpec:
    kind: str
    target_total_counts: float = 1.5e6
    energy_fraction: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("poisson-counts", "complex-gaussian"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "poisson-counts" and not self.target_total_counts > 0:
            raise ValueError("target counts must be positive")
        if self.kind == "complex-gaussian" and not 0 < self.energy_fraction < 1:
            raise ValueError("energy fraction must lie in (0, 1)")


def count_scale(truth, op, total_counts) -> float:
    """Factor ``c`` with ``sum(c * K truth) = total_counts``."""
    clean = op.apply(truth)
    s = float(np.sum(clean))
    if s <= 0:
        raise ValueError("clean sinogram is zero")
    return float(total_counts) / s


def simulate_pet(truth, op, spec: NoiseSpec):
    """Poisson counts with means ``c * K truth`` scaled to the target total.

    Reconstruct with ``ScaledOperator(op, count_scale(...))`` so that the
    model matches the simulated means.
    """
    truth = np.asarray(truth, dtype=float)
    if np.any(truth < 0):
        raise ValueError("PET activity must be nonnegative")
    mean = count_scale(truth, op, spec.target_total_counts) * op.apply(truth)
    mean = np.maximum(mean, 0.0)
    return rng_from_seed(spec.rng_seed).poisson(mean).astype(float)


def simulate_mri(truth, mask, spec: NoiseSpec):
    """Masked unitary k-space data plus complex Gaussian noise on the sampled
    frequencies, with expected noise energy ``energy_fraction`` times the clean
    data energy."""
    if not isinstance(mask, SamplingMask):
        mask = SamplingMask(mask)
    clean = MaskedFourier(mask).apply(np.asarray(truth, dtype=float))
    m = mask.mask
    energy = float(np.sum(np.abs(clean) ** 2))
    std = np.sqrt(spec.energy_fraction * energy / (2.0 * m.sum()))
    rng = rng_from_seed(spec.rng_seed, stream=1)
    noise = np.zeros(clean.shape, dtype=complex)
    k = int(m.sum())
    noise[m] = std * (rng.standard_normal(k) + 1j * rng.standard_normal(k))
    return clean + noise
