"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are repeated in the terminal summary under "acceptance criteria".
"""

import time

import numpy as np
from oracles import (
    adjoint_defect,
    newton_prox_kl,
    numeric_prox_kl_conj,
    numeric_prox_quad_conj,
    random_field,
    rof_reference,
)

from icbrecon.diffops import validate_subgradient
from icbrecon.experiments import (
    check_recovery,
    joint_benefit_study,
    noisy_signals,
    signals_config,
)
from icbrecon.grids import pointwise_magnitude
from icbrecon.icb import icb_integrand, icb_oracle, icb_value
from icbrecon.joint import (
    ChannelSpec,
    JointRunConfig,
    poisson_log_likelihood,
    reconstruct_bregman_tv,
    reconstruct_mlem,
    reconstruct_tv,
    run_joint,
)
from icbrecon.operators import (
    GaussianBlur,
    IdentityOperator,
    MaskedFourier,
    RadonGeometry,
    RadonTransform,
    pet_operator,
)
from icbrecon.pdhg import InnerProblem, inner_solve, update_subgradient
from icbrecon.prox import prox_kl_conjugate, prox_quadratic_conjugate
from icbrecon.simdata import make_mask, make_phantom_pair, rng_from_seed

TIGHT = dict(tol_gap=1e-9, tol_constraint=1e-9, max_iters=50000)


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def test_adjoints(verdict):
    shape = (32, 32)
    geom = RadonGeometry.for_image(shape, 24)
    ops = {
        "radon": RadonTransform(shape, geom),
        "blur": GaussianBlur(shape, 1.7),
        "pet": pet_operator(shape, geom, 1.7, scale=3.0),
        "dft": MaskedFourier(make_mask("spokes", 32)),
    }

    def run():
        rng = rng_from_seed(1)
        return {name: max(adjoint_defect(op, rng) for _ in range(50)) for name, op in ops.items()}

    worst, secs = timed(run)
    ok = all(v <= 1e-8 for v in worst.values()) and secs < 10
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict("1 adjoint tests (50 per operator, rel 1e-8)", ok, f"{detail}; {secs:.1f}s")


def test_icb_closed_form(verdict):
    def run():
        rng = rng_from_seed(2)
        errs = []
        for _ in range(20):
            v = rng.standard_normal((8, 8))
            q = random_field(rng, (8, 8), 0.9)
            errs.append(abs(icb_value(v, q) - icb_oracle(v, q, iterations=20000)))
        # continuity across |q| = |cos phi|, approached from both sides
        phi = rng.uniform(0, np.pi / 2, 10000)
        rot = rng.uniform(0, 2 * np.pi, 10000)
        f = np.stack([np.cos(rot), np.sin(rot)])
        d = np.stack([np.cos(rot + phi), np.sin(rot + phi)])
        c = np.cos(phi)
        jump = np.abs(icb_integrand(f, (c - 1e-12) * d) - icb_integrand(f, np.minimum(c + 1e-12, 1.0) * d))
        # sign symmetry of the density and of the functional
        q = random_field(rng, 10000, 1.0)
        g = icb_integrand(f, q)
        sym = np.array_equal(g, icb_integrand(f, -q)) and np.array_equal(g, icb_integrand(-f, q))
        v = rng.standard_normal((8, 8))
        qq = random_field(rng, (8, 8), 1.0)
        sym = sym and icb_value(v, qq) == icb_value(-v, qq) == icb_value(v, -qq)
        return max(errs), float(jump.max()), sym

    (err, jump, sym), secs = timed(run)
    ok = err <= 1e-4 and jump <= 1e-9 and sym and secs < 120
    verdict("2 ICB closed form vs oracle", ok, f"max err {err:.1e}, boundary jump {jump:.1e}, sign symmetric {sym}; {secs:.0f}s")


def test_prox_oracles(verdict):
    def run():
        rng = rng_from_seed(3)
        kl = quad = moreau = 0.0
        for _ in range(1000):
            y = rng.uniform(-20, 20)
            sigma = 10 ** rng.uniform(-2, 1)
            alpha = 10 ** rng.uniform(-1, 1)
            f = 0.0 if rng.random() < 0.1 else 10 ** rng.uniform(-1, 2)
            p = prox_kl_conjugate(y, sigma, alpha, f)
            kl = max(kl, abs(p - numeric_prox_kl_conj(y, sigma, alpha, f)))
            moreau = max(moreau, abs(p + sigma * newton_prox_kl(y / sigma, 1 / sigma, alpha, f) - y))

            yc = complex(*rng.uniform(-10, 10, 2))
            gc = complex(*rng.uniform(-10, 10, 2))
            beta = 10 ** rng.uniform(-2, 2)
            pq = prox_quadratic_conjugate(yc, sigma, beta, gc)
            quad = max(quad, abs(pq - numeric_prox_quad_conj(yc, sigma, beta, gc)))
            # prox of t * beta/2 |x - g|^2 in closed form
            t = 1 / sigma
            prox_h = (beta * t * gc + yc / sigma) / (beta * t + 1)
            moreau = max(moreau, abs(pq + sigma * prox_h - yc))
        return kl, quad, moreau

    (kl, quad, moreau), secs = timed(run)
    ok = kl <= 1e-8 and quad <= 1e-8 and moreau <= 1e-9 and secs < 30
    verdict("3 prox oracles and Moreau identity", ok, f"kl {kl:.1e}, quadratic {quad:.1e}, moreau {moreau:.1e}; {secs:.1f}s")


def test_rof_equivalence(verdict):
    def run():
        rng = rng_from_seed(4)
        x = np.zeros((32, 32))
        x[8:24, 6:20] = 1.0
        x[14:28, 16:26] += 0.6
        g = x + 0.15 * rng.standard_normal(x.shape)
        ref = rof_reference(g, 8.0, iters=20000)
        prob = InnerProblem(IdentityOperator(g.shape), g, "quadratic", 8.0, 1.0, None, [], nonneg=False)
        u = inner_solve(prob, **TIGHT).u
        return np.linalg.norm(u - ref) / np.linalg.norm(ref)

    rel, secs = timed(run)
    verdict("4 ROF equivalence (rel l2 1e-4)", rel <= 1e-4 and secs < 30, f"rel {rel:.1e}; {secs:.1f}s")


def test_signals_recovery(verdict):
    def run():
        results = []
        for seed in range(5):
            _, (fb, fr) = noisy_signals(seed)
            cfg = signals_config(fb, fr, **SIGNAL_SOLVER)
            res = run_joint(cfg)
            edges = [10, 30, 50, 70, 90]
            rb = check_recovery(res.images[0], fb, edges)
            rr = check_recovery(res.images[1], fr, edges)
            results.append(rb[0] and rr[0] and max(rb[1], rr[1]) <= 1e-3)
        return results

    results, secs = timed(run)
    wins = sum(results)
    ok = wins >= 4 and secs < 120
    verdict("5 1-D joint recovery (jump sets and plateau means, >= 4 of 5 seeds)", ok,
            f"{wins}/5 seeds {results}; {secs:.0f}s")


SIGNAL_SOLVER = dict(tol_gap=1e-7, tol_constraint=1e-7, max_iters=50000)


def test_joint_benefit(verdict):
    study, secs = timed(lambda: joint_benefit_study(size=128, seed=0))
    rows, ok = [], secs < 1800
    for kind, r in study.items():
        tv, icb = r["tv"], r["icb"]
        win = icb["pet_ssim"] > tv["pet_ssim"] and icb["mri_ssim"] >= tv["mri_ssim"] - 0.005
        ok &= win
        rows.append(f"{kind}: pet {tv['pet_ssim']:.3f}->{icb['pet_ssim']:.3f} "
                    f"mri {tv['mri_ssim']:.3f}->{icb['mri_ssim']:.3f}{'' if win else ' LOSS'}")
    verdict("6 joint PET/MRI benefit over separate TV (all four masks)", ok, "; ".join(rows) + f"; {secs:.0f}s")


def test_decoupling(verdict):
    def run():
        rng = rng_from_seed(7)
        x = np.zeros((16, 16))
        x[3:11, 4:12] = 1.0
        x[8:14, 2:7] += 0.5
        g1 = x + 0.1 * rng.standard_normal(x.shape)
        g2 = 2 * x.T + 0.2 * rng.standard_normal(x.shape)
        op = IdentityOperator(x.shape)
        a = ChannelSpec("a", op, g1, "quadratic", 6.0, [1.0, 0.0], False)
        b = ChannelSpec("b", op, g2, "quadratic", 3.0, [0.0, 1.0], False)
        joint = run_joint(JointRunConfig([a, b], 4))
        worst = 0.0
        for i, ch in enumerate((a, b)):
            solo = reconstruct_bregman_tv(ch, 4)
            worst = max(worst, max(np.abs(joint.history[k][i] - solo[k]).max() for k in range(4)))
        # first iterate from q = 0 is plain TV, also in a coupled run
        c = ChannelSpec("a", op, g1, "quadratic", 6.0, [0.6, 0.4], False)
        d = ChannelSpec("b", op, g2, "quadratic", 3.0, [0.3, 0.7], False)
        first = run_joint(JointRunConfig([c, d], 1, **TIGHT))
        tv_err = max(
            np.linalg.norm(first.images[i] - reconstruct_tv(ch, **TIGHT)) / np.linalg.norm(first.images[i])
            for i, ch in enumerate((a, b))
        )
        return worst, tv_err

    (worst, tv_err), secs = timed(run)
    ok = worst <= 1e-10 and tv_err <= 1e-4 and secs < 60
    verdict("7 decoupling identities", ok, f"W=I vs Bregman-TV {worst:.1e}, K=1 vs TV rel {tv_err:.1e}; {secs:.1f}s")


def test_scale_invariance(verdict):
    c = 7.0

    def rel(a, b):
        return np.linalg.norm(b - c * a) / np.linalg.norm(c * a)

    def run():
        rng = rng_from_seed(8)
        n = 12
        x = np.zeros((n, n))
        x[3:9, 3:9] = 1.0
        x[4:6, 2:10] += 0.5
        qo = 0.8 * np.stack([np.zeros_like(x), np.ones_like(x)])
        qf = random_field(rng, (n, n), 0.6)
        geom = RadonGeometry.for_image((n, n), 8)
        pet = pet_operator((n, n), geom, 1.0, scale=30.0)
        f = rng.poisson(pet.apply(x + 0.2)).astype(float)
        g = x + 0.1 * rng.standard_normal(x.shape)
        ident = IdentityOperator(x.shape)
        errs = {}
        for label, extra in (("TV", {}), ("coupled", dict(own_weight=0.6, own_q=qo, foreign=[(0.4, qf)]))):
            a = inner_solve(InnerProblem(pet, f, "kl", 2.0, **extra), **TIGHT).u
            b = inner_solve(InnerProblem(pet, c * f, "kl", 2.0, **extra), **TIGHT).u
            errs[f"kl {label}"] = rel(a, b)
            a = inner_solve(InnerProblem(ident, g, "quadratic", 4.0, nonneg=False, **extra), **TIGHT).u
            b = inner_solve(InnerProblem(ident, c * g, "quadratic", 4.0 / c, nonneg=False, **extra), **TIGHT).u
            errs[f"quadratic {label}"] = rel(a, b)
        return errs

    errs, secs = timed(run)
    ok = all(v <= 1e-4 for v in errs.values()) and secs < 120
    verdict("8 scale invariance (c = 7)", ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f"; {secs:.0f}s")


def test_mlem_monotone(verdict):
    def run():
        ph = make_phantom_pair(32)
        op = pet_operator((32, 32), RadonGeometry.for_image((32, 32), 16), 1.7, scale=5.0)
        clean = op.apply(ph.pet)
        noisy = rng_from_seed(9).poisson(clean).astype(float)
        worst = -np.inf
        for f in (clean, noisy):
            _, hist = reconstruct_mlem(f, op, 200, return_history=True)
            ll = np.array([poisson_log_likelihood(u, op, f) for u in hist])
            worst = max(worst, float(np.max(ll[:-1] - ll[1:])))
        return worst

    drop, secs = timed(run)
    verdict("9 MLEM log-likelihood nondecreasing (200 iterations)", drop <= 1e-10 and secs < 30,
            f"largest decrease {drop:.1e}; {secs:.1f}s")


def audit_run(res, chans, n_bregman, stats):
    """Replay the subgradient updates of a Jacobi run and audit every inner solve."""
    n = len(chans)
    shape = res.images[0].shape
    qs = [np.zeros((2,) + shape) for _ in chans]
    for k in range(n_bregman):
        new = []
        for i, ch in enumerate(chans):
            out = res.inner[n * k + i]
            rep = out.report
            w = ch.weight_row
            if out.converged:
                stats["converged"] += 1
                stats["coupled"] += k > 0
                stats["gap"] = max(stats["gap"], rep.gap_per_pixel)
                stats["div"] = max(stats["div"], rep.divergence_constraint)
            ball = [pointwise_magnitude(out.y2 + w[i] * qs[i]) - w[i]]
            for y3, y4, j in zip(out.y3, out.y4, [j for j in range(n) if j != i and w[j] > 0]):
                ball.append(pointwise_magnitude(y3 + w[j] * qs[j]) - w[j])
                ball.append(pointwise_magnitude(y4 - w[j] * qs[j]) - w[j])
            stats["ball"] = max(stats["ball"], max(float(b.max()) for b in ball))
            q_new = update_subgradient(qs[i], out.y2, w[i])
            stats["valid"] &= validate_subgradient(q_new.q, out.u, 1e-3).is_valid
            stats["solves"] += 1
            new.append(q_new.q)
        qs = new


def test_solver_bookkeeping(verdict):
    def run():
        stats = dict(solves=0, converged=0, coupled=0, gap=-np.inf, div=0.0, ball=-np.inf, valid=True)
        _, (fb, fr) = noisy_signals(0)
        cfg = signals_config(fb, fr, n_bregman=3)
        audit_run(run_joint(cfg, keep_inner=True), cfg.channels, 3, stats)

        n = 32
        ph = make_phantom_pair(n)
        mask = make_mask("half", n)
        pet = pet_operator((n, n), RadonGeometry.for_image((n, n), 16), 1.7, scale=5.0)
        f = rng_from_seed(10).poisson(pet.apply(ph.pet)).astype(float)
        mri = MaskedFourier(mask)
        noise = rng_from_seed(11).standard_normal((2, n, n)) * 0.02
        g = mri.apply(ph.mri) + mask.mask * (noise[0] + 1j * noise[1])
        chans = [
            ChannelSpec("pet", pet, f, "kl", 0.5, [0.4, 0.6]),
            ChannelSpec("mri", mri, g, "quadratic", 20.0, [0.3, 0.7]),
        ]
        audit_run(run_joint(JointRunConfig(chans, 2, max_iters=3000), keep_inner=True), chans, 2, stats)
        return stats

    st, secs = timed(run)
    ok = (
        st["coupled"] > 0
        and st["gap"] <= 1e-4
        and st["div"] <= 1e-5
        and st["ball"] <= 1e-12
        and st["valid"]
    )
    verdict("10 solver bookkeeping", ok,
            f"{st['converged']}/{st['solves']} solves converged ({st['coupled']} coupled); over those gap/N "
            f"{st['gap']:.1e}, div {st['div']:.1e}; ball excess {st['ball']:.1e}, subgradients valid {st['valid']}; "
            f"{secs:.1f}s")
