"""Outer Bregman loop over several channels, and the baseline reconstructions.

Each Bregman iteration solves, for every channel ``i`` in list order,

    u_i <- argmin H_i(K_i u) + w_ii D_{q_i}(u) + sum_{j != i} w_ij ICB_{q_j}(u)

using the subgradients ``q_j`` of the *previous* iteration for all channels,
then updates every ``q_i`` from the solver's dual variable. All images and
subgradients start at zero, so the first iterate is a set of independent TV
reconstructions.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .diffops import divergence, gradient, gradient_column_counts, validate_subgradient
from .grids import check_finite
from .icb import SUBGRADIENT_TOL, SubgradientState
from .metrics import ssim
from .operators import LinearOperator, MaskedFourier
from .pdhg import (
    DivergenceError,
    GapReport,
    InnerProblem,
    inner_solve,
    update_subgradient,
)
from .prox import (
    kl_fidelity,
    project_nonnegative,
    prox_kl_conjugate,
    prox_quadratic_conjugate,
    quadratic_fidelity,
)

__all__ = [
    "ChannelSpec",
    "JointRunConfig",
    "SolveReport",
    "JointResult",
    "run_joint",
    "reconstruct_tv",
    "reconstruct_bregman_tv",
    "reconstruct_mlem",
    "reconstruct_zero_fill",
    "reconstruct_jtv",
    "poisson_log_likelihood",
    "balance_alphas",
]

log = logging.getLogger(__name__)


@dataclass
class ChannelSpec:
    """One measured channel and its row of the weight matrix.

    ``weight_row[j]`` is the weight of channel ``j``'s subgradient in this
    channel's regulariser; ``weight_row[i]`` (the own weight) must be positive.
    ``alpha=None`` asks :func:`run_joint` to balance the data terms.
    """

    name: str
    operator: LinearOperator
    data: np.ndarray
    fidelity: str
    alpha: Optional[float]
    weight_row: list
    nonneg: bool = True

    def validate(self, index, n_channels):
        row = [float(w) for w in self.weight_row]
        if len(row) != n_channels:
            raise ValueError(f"{self.name}: weight row has {len(row)} entries for {n_channels} channels")
        if any(w < 0 for w in row):
            raise ValueError(f"{self.name}: weights must be nonnegative")
        if abs(sum(row) - 1.0) > 1e-12:
            raise ValueError(f"{self.name}: weights must sum to 1, got {sum(row)!r}")
        if not row[index] > 0:
            raise ValueError(f"{self.name}: own weight must be positive")
        self.weight_row = row


@dataclass
class JointRunConfig:
    channels: list
    n_bregman: int = 1
    tol_gap: float = 1e-4
    tol_constraint: float = 1e-5
    max_iters: int = 20000
    check_every: int = 10
    ground_truths: Optional[list] = None
    ssim_ranges: Optional[list] = None
    ssim_roi: Optional[np.ndarray] = None
    stop_on_ssim_decline: bool = False
    # "jacobi": every channel sees the previous iteration's subgradients;
    # "sequential": later channels already see this iteration's updates
    update: str = "jacobi"
    # start each inner solve from the channel's previous iterate instead of the data back-projection
    warm_start: bool = False

    def validate(self):
        if self.update not in ("jacobi", "sequential"):
            raise ValueError(f"update must be 'jacobi' or 'sequential', got {self.update!r}")
        if self.n_bregman < 1:
            raise ValueError("n_bregman must be at least 1")
        if not self.channels:
            raise ValueError("at least one channel is required")
        shapes = {tuple(c.operator.domain_shape) for c in self.channels}
        if len(shapes) != 1:
            raise ValueError(f"channels live on different grids: {shapes}")
        n = len(self.channels)
        for i, c in enumerate(self.channels):
            c.validate(i, n)
        if self.ground_truths is not None and len(self.ground_truths) != n:
            raise ValueError("need one ground truth per channel")
        if self.stop_on_ssim_decline and self.ground_truths is None:
            raise ValueError("stop_on_ssim_decline needs ground truths")


@dataclass
class SolveReport:
    bregman_iteration: int
    channel: str
    order: int
    gap: GapReport
    converged: bool
    max_q_magnitude: float
    subgradient_valid: bool
    ssim: Optional[float] = None

    def as_dict(self):
        return {
            "bregman_iteration": self.bregman_iteration,
            "channel": self.channel,
            "order": self.order,
            "gap_per_pixel": self.gap.gap_per_pixel,
            "range_constraint_violation": self.gap.range_constraint_violation,
            "divergence_constraint": self.gap.divergence_constraint,
            "inner_iterations": self.gap.inner_iterations,
            "converged": self.converged,
            "max_q_magnitude": self.max_q_magnitude,
            "subgradient_valid": self.subgradient_valid,
            "ssim": self.ssim,
        }


@dataclass
class JointResult:
    images: list
    subgradients: list
    history: list = field(default_factory=list, repr=False)
    reports: list = field(default_factory=list, repr=False)
    inner: list = field(default_factory=list, repr=False)
    halted: Optional[str] = None
    names: list = field(default_factory=list)

    def image(self, name):
        return self.images[self.names.index(name)]


def _ssim(cfg, i, u):
    if cfg.ground_truths is None:
        return None
    truth = cfg.ground_truths[i]
    rng = cfg.ssim_ranges[i] if cfg.ssim_ranges is not None else float(np.ptp(truth)) or 1.0
    return ssim(u, truth, rng, roi=cfg.ssim_roi)


def run_joint(cfg: JointRunConfig, keep_inner=False) -> JointResult:
    """Coupled Bregman iterations (Jacobi over channels, list order recorded)."""
    cfg.validate()
    chans = cfg.channels
    if any(c.alpha is None for c in chans):
        balance_alphas(cfg)
    shape = tuple(chans[0].operator.domain_shape)
    n = len(chans)
    images = [np.zeros(shape) for _ in chans]
    qs = [SubgradientState.zeros(shape, channel_id=i) for i in range(n)]
    res = JointResult(images, qs, names=[c.name for c in chans])
    prev_ssim = None

    for k in range(cfg.n_bregman):
        new_images, new_qs, step_ssim = [], [], []
        current = list(qs)
        for i, ch in enumerate(chans):
            row = ch.weight_row
            problem = InnerProblem(
                operator=ch.operator,
                data=ch.data,
                fidelity=ch.fidelity,
                alpha=ch.alpha,
                own_weight=row[i],
                own_q=qs[i],
                foreign=[(row[j], current[j]) for j in range(n) if j != i],
                nonneg=ch.nonneg,
            )
            try:
                u0 = images[i] if cfg.warm_start and k > 0 else None
                out = inner_solve(
                    problem, cfg.tol_gap, cfg.tol_constraint, cfg.max_iters, check_every=cfg.check_every, u0=u0
                )
            except DivergenceError as err:
                log.error("channel %s, Bregman iteration %d: %s", ch.name, k + 1, err)
                res.halted = f"{ch.name} at Bregman iteration {k + 1}: {err}"
                return res
            q_new = update_subgradient(qs[i], out.y2, row[i])
            q_new.channel_id = i
            check = validate_subgradient(q_new.q, out.u, SUBGRADIENT_TOL)
            s = _ssim(cfg, i, out.u)
            step_ssim.append(s)
            res.reports.append(
                SolveReport(k + 1, ch.name, i, out.report, out.converged, check.max_magnitude, check.is_valid, s)
            )
            if keep_inner:
                res.inner.append(out)
            new_images.append(out.u)
            new_qs.append(q_new)
            if cfg.update == "sequential":
                current[i] = q_new

        if cfg.stop_on_ssim_decline and prev_ssim is not None:
            if all(s < p for s, p in zip(step_ssim, prev_ssim)):
                log.info("SSIM declined in every channel at Bregman iteration %d; keeping iteration %d", k + 1, k)
                res.halted = f"ssim decline at Bregman iteration {k + 1}"
                return res
        prev_ssim = step_ssim
        images, qs = new_images, new_qs
        res.images, res.subgradients = images, qs
        res.history.append([u.copy() for u in images])
    return res


def _fidelity_value(ch, u):
    ku = ch.operator.apply(u)
    if ch.fidelity == "kl":
        # KL divergence including the data-only constant so both terms are >= 0
        f = np.asarray(ch.data, dtype=float)
        pos = f > 0
        return float(np.sum(ku) - np.sum(f) + np.sum(f[pos] * np.log(f[pos] / np.maximum(ku[pos], 1e-300))))
    return quadratic_fidelity(ku, ch.data, 1.0)


def balance_alphas(cfg: JointRunConfig, reference=0, rounds=4, rtol=0.1):
    """Choose the unset data weights so the data terms of the first (TV)
    iterate are within ``rtol`` of the reference channel's.

    The reference channel must have its ``alpha`` set. Unset weights start at
    the reference value and are rescaled by the ratio of data-term values.
    """
    ref = cfg.channels[reference]
    if ref.alpha is None:
        raise ValueError("the reference channel needs an explicit alpha")
    ref_u = reconstruct_tv(ref, cfg.tol_gap, cfg.tol_constraint, cfg.max_iters)
    target = ref.alpha * _fidelity_value(ref, ref_u)
    for i, ch in enumerate(cfg.channels):
        if ch.alpha is not None:
            continue
        ch.alpha = ref.alpha
        for _ in range(rounds):
            u = reconstruct_tv(ch, cfg.tol_gap, cfg.tol_constraint, cfg.max_iters)
            val = ch.alpha * _fidelity_value(ch, u)
            if val <= 0 or abs(val - target) <= rtol * target:
                break
            ch.alpha *= target / val
        log.info("balanced alpha for %s: %g", ch.name, ch.alpha)
    return [c.alpha for c in cfg.channels]


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def reconstruct_tv(ch: ChannelSpec, tol_gap=1e-4, tol_constraint=1e-5, max_iters=20000):
    """Single-channel TV reconstruction (one Bregman step from ``q = 0``)."""
    problem = InnerProblem(ch.operator, ch.data, ch.fidelity, ch.alpha, nonneg=ch.nonneg)
    return inner_solve(problem, tol_gap, tol_constraint, max_iters).u


def reconstruct_bregman_tv(ch: ChannelSpec, n_bregman, tol_gap=1e-4, tol_constraint=1e-5, max_iters=20000):
    """Uncoupled Bregman-TV iterations; returns the list of iterates."""
    solo = ChannelSpec(ch.name, ch.operator, ch.data, ch.fidelity, ch.alpha, [1.0], ch.nonneg)
    cfg = JointRunConfig([solo], n_bregman, tol_gap, tol_constraint, max_iters)
    return [h[0] for h in run_joint(cfg).history]


def poisson_log_likelihood(u, op, f) -> float:
    """``sum f log(Ku) - Ku`` (without the data-only constant)."""
    ku = op.apply(u)
    f = np.asarray(f, dtype=float)
    pos = f > 0
    if np.any(ku[pos] <= 0):
        return -np.inf
    return float(np.sum(f[pos] * np.log(ku[pos])) - np.sum(ku))


def reconstruct_mlem(data, op, iterations, return_history=False):
    """Multiplicative EM from a flat start; pixels without sensitivity stay fixed."""
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    f = np.asarray(data, dtype=float)
    if np.any(f < 0):
        raise ValueError("count data must be nonnegative")
    sens = op.adjoint(np.ones(op.range_shape))
    active = sens > 0
    u = np.ones(op.domain_shape)
    hist = [u.copy()] if return_history else None
    for _ in range(iterations):
        ku = op.apply(u)
        ratio = np.zeros_like(ku)
        np.divide(f, ku, out=ratio, where=ku > 0)
        back = op.adjoint(ratio)
        u = np.where(active, u * back / np.where(active, sens, 1.0), u)
        if return_history:
            hist.append(u.copy())
    return (u, hist) if return_history else u


def reconstruct_zero_fill(g, mask):
    """Zero-filled inverse DFT, projected onto the nonnegative images."""
    return project_nonnegative(MaskedFourier(mask).adjoint(g))


def _data_dual_update(ch, y, sigma, kx):
    if ch.fidelity == "kl":
        return prox_kl_conjugate(y + sigma * kx, sigma, ch.alpha, ch.data)
    return prox_quadratic_conjugate(y + sigma * kx, sigma, ch.alpha, ch.data)


def _jtv_objective(chans, images):
    val = 0.0
    for ch, u in zip(chans, images):
        ku = ch.operator.apply(u)
        if ch.fidelity == "kl":
            val += ch.alpha * kl_fidelity(ku, ch.data, 1.0)
        else:
            val += quadratic_fidelity(ku, ch.data, ch.alpha)
    grads = np.concatenate([gradient(u) for u in images])
    return val + float(np.sum(np.sqrt(np.sum(grads**2, axis=0))))


def jtv(images) -> float:
    """Joint TV ``sum sqrt(sum_c |grad u_c|^2)``."""
    grads = np.concatenate([gradient(u) for u in images])
    return float(np.sum(np.sqrt(np.sum(grads**2, axis=0))))


def reconstruct_jtv(channels, max_iters=5000, tol=1e-6, check_every=50):
    """Joint-TV reconstruction of several channels on one grid.

    Primal-dual iteration with one joint dual field of ``2 * n_channels``
    components projected onto the pointwise unit ball. Stops when the relative
    primal change over ``check_every`` iterations drops below ``tol``.
    """
    chans = list(channels)
    if not chans:
        raise ValueError("need at least one channel")
    shape = tuple(chans[0].operator.domain_shape)
    if any(tuple(c.operator.domain_shape) != shape for c in chans):
        raise ValueError("channels must share a grid")
    counts = gradient_column_counts(shape)
    sig, taus, ys, us = [], [], [], []
    for ch in chans:
        s1, col = ch.operator.steps()
        sig.append(s1)
        taus.append(1.0 / (np.asarray(col, dtype=float) + counts))
        ys.append(np.zeros(ch.operator.range_shape, dtype=complex if ch.operator.is_complex else float))
        u0 = ch.operator.adjoint(ch.data)
        us.append(project_nonnegative(u0) if ch.nonneg else u0)
    sig_grad = 0.5
    xi = np.zeros((2 * len(chans),) + shape)
    ubars = [u.copy() for u in us]
    for it in range(1, max_iters + 1):
        for c, ch in enumerate(chans):
            ys[c] = _data_dual_update(ch, ys[c], sig[c], ch.operator.apply(ubars[c]))
            xi[2 * c : 2 * c + 2] += sig_grad * gradient(ubars[c])
        mag = np.sqrt(np.sum(xi**2, axis=0))
        xi /= np.maximum(mag, 1.0)
        change = 0.0
        norm = 0.0
        for c, ch in enumerate(chans):
            step = ch.operator.adjoint(ys[c]) - divergence(xi[2 * c : 2 * c + 2])
            new = us[c] - taus[c] * step
            if ch.nonneg:
                new = project_nonnegative(new)
            check_finite(new, f"{ch.name} iterate")
            change += float(np.sum((new - us[c]) ** 2))
            norm += float(np.sum(new**2))
            ubars[c] = 2.0 * new - us[c]
            us[c] = new
        if it % check_every == 0 and np.sqrt(change) <= tol * max(np.sqrt(norm), 1e-300):
            break
    return us
