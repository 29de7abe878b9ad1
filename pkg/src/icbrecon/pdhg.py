"""Inner primal-dual solver for one Bregman step of one channel.

For channel ``i`` with own weight ``w`` and foreign channels ``j`` with
weights ``w_j`` the step solves

    min_{u in C, z_j}  H(K u) + w D_{q_i}(u) + sum_j w_j [D_{q_j}(u - z_j) + D_{-q_j}(z_j)]

where ``D_q(v) = TV(v) - <q, grad v>``. Each Bregman term is dualised as a
projection onto a shifted pointwise ball, which gives the saddle problem

    min_{u, z} max_{y}  <y1, K u> + <y2, grad u> + sum_j <y3_j, grad(u - z_j)> + <y4_j, grad z_j>
                        - H*(y1) - indicators(y2, y3_j, y4_j) + indicator_C(u)

solved with diagonally preconditioned Chambolle-Pock iterations.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .diffops import divergence, gradient, gradient_column_counts, gradient_row_sums
from .grids import check_finite, check_same_shape
from .icb import SUBGRADIENT_TOL, SubgradientState, bregman_tv, renormalize_field
from .operators import LinearOperator
from .prox import (
    kl_conjugate,
    kl_fidelity,
    project_nonnegative,
    project_shifted_ball,
    prox_kl_conjugate,
    prox_quadratic_conjugate,
    quadratic_conjugate,
    quadratic_fidelity,
)

__all__ = [
    "InnerProblem",
    "InnerState",
    "GapReport",
    "InnerResult",
    "DivergenceError",
    "build_preconditioner",
    "init_state",
    "compute_gap",
    "inner_solve",
    "update_subgradient",
    "FIDELITIES",
]

log = logging.getLogger(__name__)

FIDELITIES = ("kl", "quadratic")
WEIGHT_TOL = 1e-12


class DivergenceError(FloatingPointError):
    """Raised when an iterate becomes non-finite."""

    def __init__(self, iteration, what):
        super().__init__(f"non-finite {what} at inner iteration {iteration}")
        self.iteration = iteration


def _as_state(q, shape):
    if q is None:
        return SubgradientState.zeros(shape)
    if isinstance(q, SubgradientState):
        return q
    return SubgradientState(q)


@dataclass
class InnerProblem:
    """One row of the weight matrix together with the channel's data model.

    ``alpha`` multiplies the data term (``alpha * KL`` or ``alpha/2 |.|^2``).
    ``foreign`` is a list of ``(weight, q_j)`` pairs; zero weights are allowed
    and contribute nothing.
    """

    operator: LinearOperator
    data: np.ndarray
    fidelity: str
    alpha: float
    own_weight: float = 1.0
    own_q: Optional[SubgradientState] = None
    foreign: list = field(default_factory=list)
    nonneg: bool = True

    def __post_init__(self):
        if self.fidelity not in FIDELITIES:
            raise ValueError(f"fidelity must be one of {FIDELITIES}, got {self.fidelity!r}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.own_weight > 0:
            raise ValueError("own weight must be positive")
        shape = tuple(self.operator.domain_shape)
        self.own_q = _as_state(self.own_q, shape)
        self.foreign = [(float(w), _as_state(q, shape)) for w, q in self.foreign]
        weights = [w for w, _ in self.foreign]
        if any(w < 0 for w in weights):
            raise ValueError("weights must be nonnegative")
        total = self.own_weight + sum(weights)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1, got {total!r}")
        check_same_shape(self.own_q.q[0], np.empty(shape))
        for _, q in self.foreign:
            check_same_shape(q.q[0], np.empty(shape))
        data = np.asarray(self.data)
        check_same_shape(data, np.empty(self.operator.range_shape))
        if self.fidelity == "kl" and np.any(data < 0):
            raise ValueError("count data must be nonnegative")
        self.data = data

    @property
    def shape(self):
        return tuple(self.operator.domain_shape)

    @property
    def active_foreign(self):
        """Foreign channels with nonzero weight (the others are inert)."""
        return [(w, q) for w, q in self.foreign if w > 0]

    def fidelity_value(self, ku) -> float:
        if self.fidelity == "kl":
            return self.alpha * kl_fidelity(ku, self.data, 1.0)
        return quadratic_fidelity(ku, self.data, self.alpha)

    def conjugate_value(self, y1) -> float:
        if self.fidelity == "kl":
            return kl_conjugate(y1, self.data, self.alpha)
        return quadratic_conjugate(y1, self.data, self.alpha)

    def prox_conjugate(self, y, sigma):
        if self.fidelity == "kl":
            return prox_kl_conjugate(y, sigma, self.alpha, self.data)
        return prox_quadratic_conjugate(y, sigma, self.alpha, self.data)

    def primal_value(self, u, z) -> float:
        """Data term plus the weighted Bregman distances (splitting form)."""
        val = self.fidelity_value(self.operator.apply(u))
        val += self.own_weight * bregman_tv(u, self.own_q)
        for (w, q), zj in zip(self.active_foreign, z):
            val += w * (bregman_tv(u - zj, q) + bregman_tv(zj, -q.q))
        return float(val)


@dataclass
class Steps:
    tau_u: np.ndarray
    tau_z: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    sigma3: np.ndarray
    sigma4: np.ndarray
    flagged_rows: int = 0


def build_preconditioner(problem: InnerProblem) -> Steps:
    """Diagonal step sizes ``tau_j = 1/sum_i |K_ij|``, ``sigma_i = 1/sum_j |K_ij|``.

    The block operator has rows ``K``, ``grad`` (y2), ``[grad, -grad]`` (y3_j)
    and ``[0, grad]`` (y4_j). Zero rows (Neumann boundary) get ``sigma = 1``.
    Operators that are not entrywise nonnegative (the masked DFT) use
    ``sigma = 1/||K||`` and contribute ``||K||`` to each column.
    """
    shape = problem.shape
    n_foreign = len(problem.active_foreign)
    sig1, col_k = problem.operator.steps()
    counts = gradient_column_counts(shape)
    rows = gradient_row_sums(shape)
    zero_rows = rows == 0

    def inv_rows(r):
        s = np.ones_like(r)
        np.divide(1.0, r, out=s, where=r > 0)
        return s

    col_u = np.asarray(col_k, dtype=float) + (1 + n_foreign) * counts
    if np.any(col_u <= 0):
        raise ValueError("primal variable not touched by any operator")
    return Steps(
        tau_u=1.0 / col_u,
        tau_z=1.0 / (2.0 * counts) if n_foreign else np.ones(shape),
        sigma1=np.asarray(sig1, dtype=float),
        sigma2=inv_rows(rows),
        sigma3=inv_rows(2.0 * rows),
        sigma4=inv_rows(rows),
        flagged_rows=int(zero_rows.sum()),
    )


@dataclass
class InnerState:
    u: np.ndarray
    ubar: np.ndarray
    z: list
    zbar: list
    y1: np.ndarray
    y2: np.ndarray
    y3: list
    y4: list
    steps: Steps


@dataclass
class GapReport:
    gap_per_pixel: float
    range_constraint_violation: float
    divergence_constraint: float
    inner_iterations: int = 0
    primal: float = float("nan")
    dual: float = float("nan")

    def meets(self, tol_gap, tol_constraint) -> bool:
        return (
            self.gap_per_pixel <= tol_gap
            and self.range_constraint_violation <= tol_constraint
            and self.divergence_constraint <= tol_constraint
        )


def _initial_image(problem: InnerProblem):
    """``c * K* f`` with the least-squares scale ``c`` matching ``K K* f`` to ``f``."""
    k = problem.operator
    f = problem.data
    b = k.adjoint(f)
    kb = k.apply(b)
    denom = float(np.vdot(kb, kb).real)
    c = float(np.vdot(kb, f).real) / denom if denom > 0 else 0.0
    u = c * b if c > 0 else b
    return project_nonnegative(u) if problem.nonneg else u


def init_state(problem: InnerProblem, u0=None) -> InnerState:
    shape = problem.shape
    u = _initial_image(problem) if u0 is None else np.array(u0, dtype=float)
    n = len(problem.active_foreign)
    y1_dtype = complex if problem.operator.is_complex else float
    return InnerState(
        u=u,
        ubar=u.copy(),
        z=[np.zeros(shape) for _ in range(n)],
        zbar=[np.zeros(shape) for _ in range(n)],
        y1=np.zeros(problem.operator.range_shape, dtype=y1_dtype),
        y2=np.zeros((2,) + shape),
        y3=[np.zeros((2,) + shape) for _ in range(n)],
        y4=[np.zeros((2,) + shape) for _ in range(n)],
        steps=build_preconditioner(problem),
    )


def _range_term(state, problem):
    c = problem.operator.adjoint(state.y1) - divergence(state.y2)
    for y3 in state.y3:
        c = c - divergence(y3)
    return c


def compute_gap(state: InnerState, problem: InnerProblem, iterations=0) -> GapReport:
    """Primal-dual gap per pixel and the two dual constraint residuals.

    The range residual is the distance of ``K* y1 - div y2 - sum div y3`` from
    the dual cone of ``C`` (``>= 0`` when ``u`` is constrained nonnegative,
    ``{0}`` otherwise). The divergence residual is ``max |div y3 - div y4|``.
    """
    n = state.u.size
    primal = problem.primal_value(state.u, state.z)
    conj = problem.conjugate_value(state.y1)
    c = _range_term(state, problem)
    if problem.nonneg:
        range_viol = float(max(0.0, -c.min()))
    else:
        range_viol = float(np.abs(c).max())
    div_res = 0.0
    for y3, y4 in zip(state.y3, state.y4):
        div_res = max(div_res, float(np.abs(divergence(y3) - divergence(y4)).max()))
    return GapReport((primal + conj) / n, range_viol, div_res, iterations, primal, -conj)


@dataclass
class InnerResult:
    u: np.ndarray
    z: list
    y1: np.ndarray
    y2: np.ndarray
    y3: list
    y4: list
    report: GapReport
    converged: bool
    history: list = field(default_factory=list, repr=False)


def _check(x, it, what):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(it, what)


def inner_solve(
    problem: InnerProblem,
    tol_gap=1e-4,
    tol_constraint=1e-5,
    max_iters=20000,
    check_every=10,
    u0=None,
    callback: Optional[Callable[[GapReport], None]] = None,
) -> InnerResult:
    """Run the preconditioned primal-dual iteration until the gap and both
    constraint residuals are below tolerance or ``max_iters`` is reached.

    The result is flagged ``converged=False`` in the latter case; a non-finite
    iterate raises :class:`DivergenceError`.
    """
    if tol_gap <= 0 or tol_constraint <= 0:
        raise ValueError("tolerances must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be positive")
    st = init_state(problem, u0)
    s = st.steps
    op = problem.operator
    w = problem.own_weight
    own_shift = w * problem.own_q.q
    foreign = problem.active_foreign
    shifts = [wj * qj.q for wj, qj in foreign]
    history = []
    report = None
    converged = False

    for it in range(1, max_iters + 1):
        # dual ascent at the extrapolated point
        st.y1 = problem.prox_conjugate(st.y1 + s.sigma1 * op.apply(st.ubar), s.sigma1)
        gu = gradient(st.ubar)
        st.y2 = project_shifted_ball(st.y2 + s.sigma2 * gu, own_shift, w)
        for j, (wj, _) in enumerate(foreign):
            gz = gradient(st.zbar[j])
            st.y3[j] = project_shifted_ball(st.y3[j] + s.sigma3 * (gu - gz), shifts[j], wj)
            st.y4[j] = project_shifted_ball(st.y4[j] + s.sigma4 * gz, -shifts[j], wj)

        # primal descent
        div3 = [divergence(y3) for y3 in st.y3]
        ku = op.adjoint(st.y1) - divergence(st.y2)
        for d in div3:
            ku = ku - d
        u_new = st.u - s.tau_u * ku
        if problem.nonneg:
            u_new = project_nonnegative(u_new)
        st.ubar = 2.0 * u_new - st.u
        st.u = u_new
        for j in range(len(foreign)):
            z_new = st.z[j] - s.tau_z * (div3[j] - divergence(st.y4[j]))
            st.zbar[j] = 2.0 * z_new - st.z[j]
            st.z[j] = z_new

        if it % check_every == 0 or it == max_iters:
            _check(st.u, it, "primal image")
            _check(st.y1, it, "data dual")
            report = compute_gap(st, problem, it)
            history.append(report)
            if callback is not None:
                callback(report)
            if report.meets(tol_gap, tol_constraint):
                converged = True
                break

    if not converged:
        log.warning(
            "inner solve stopped at max_iters=%d: gap/N=%.3g range=%.3g div=%.3g",
            max_iters,
            report.gap_per_pixel,
            report.range_constraint_violation,
            report.divergence_constraint,
        )
    return InnerResult(st.u, st.z, st.y1, st.y2, st.y3, st.y4, report, converged, history)


def update_subgradient(q_old, y2, w, tol=SUBGRADIENT_TOL) -> SubgradientState:
    """``q_new = y2 / w + q_old``, renormalised (with a warning) where ``|q_new| > 1``."""
    if not w > 0:
        raise ValueError("own weight must be positive")
    old = _as_state(q_old, np.shape(y2)[1:])
    q = check_finite(y2 / w + old.q, "subgradient field")
    q = renormalize_field(q, tol)
    return SubgradientState(q, old.channel_id, old.bregman_iteration + 1)
