"""Command line front end: phantoms, masks, simulation, reconstruction, evaluation.

Every subcommand writes self-describing grid files plus JSON sidecars, so a
pipeline is::

    icbrecon phantom --kind brain2d --size 128 --out ph
    icbrecon mask --kind spiral --size 128 --out spiral.bin
    icbrecon simulate --phantom ph --mask spiral.bin --seed 1 --out sim
    icbrecon reconstruct --config run.json --out rec
    icbrecon evaluate --recon rec --truth ph --report rec/eval.json
"""

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import io
from .experiments import MRI_RANGE, PET_RANGE, check_recovery, jump_set
from .joint import (
    ChannelSpec,
    JointRunConfig,
    reconstruct_bregman_tv,
    reconstruct_jtv,
    reconstruct_mlem,
    reconstruct_tv,
    reconstruct_zero_fill,
    run_joint,
)
from .metrics import ssim
from .operators import (
    IdentityOperator,
    MaskedFourier,
    RadonGeometry,
    SamplingMask,
    pet_operator,
)
from .simdata import (
    MASK_KINDS,
    NoiseSpec,
    count_scale,
    make_1d_signals,
    make_mask,
    make_phantom_pair,
    rng_from_seed,
    signal_edges,
    simulate_mri,
    simulate_pet,
)

log = logging.getLogger("icbrecon")

METHODS = ("icb", "tv", "bregman-tv", "mlem", "zerofill", "jtv")
META = "meta.json"


class CliError(Exception):
    pass


def _read_meta(folder):
    path = Path(folder) / META
    if not path.is_file():
        raise CliError(f"{folder}: no {META} (not produced by this tool?)")
    return json.loads(path.read_text())


def _write_meta(folder, meta):
    io.save_json(Path(folder) / META, meta)


# ---------------------------------------------------------------------------
# phantom / mask / simulate
# ---------------------------------------------------------------------------


def cmd_phantom(args):
    out = Path(args.out)
    if args.kind == "signals1d":
        blue, red = make_1d_signals(args.size)
        io.save_image(out / "blue.bin", blue)
        io.save_image(out / "red.bin", red)
        io.save_signal_csv(out / "signals.csv", [blue, red], ["blue", "red"])
        _write_meta(out, {"kind": "signals1d", "size": args.size, "channels": ["blue", "red"],
                          "edges": signal_edges(args.size)})
    else:
        ph = make_phantom_pair(args.size)
        io.save_image(out / "pet.bin", ph.pet)
        io.save_image(out / "mri.bin", ph.mri)
        io.save_image(out / "labels.bin", ph.labels.astype(float))
        io.save_image(out / "support.bin", ph.support.astype(float))
        io.save_image(out / "pet_lesion.bin", ph.pet_lesion_mask.astype(float))
        io.save_image(out / "mri_lesion.bin", ph.mri_lesion_mask.astype(float))
        _write_meta(out, {"kind": "brain2d", "size": args.size, "channels": ["pet", "mri"]})
    print(f"phantom written to {out}")


def cmd_mask(args):
    m = make_mask(args.kind, args.size, spokes=args.spokes, turns=args.turns)
    meta = {"kind": args.kind, "size": args.size, "fraction": m.fraction_sampled, "params": getattr(m, "params", {})}
    io.save_image(args.out, m.mask.astype(float), meta)
    print(f"{args.kind} mask, {100 * m.fraction_sampled:.1f}% sampled -> {args.out}")


def _load_mask(path):
    arr, _ = io.load_grid(path, expect="image")
    meta = io.load_metadata(path)
    return SamplingMask(arr > 0.5, kind=meta.get("kind", "custom"))


def cmd_simulate(args):
    pmeta = _read_meta(args.phantom)
    src, out = Path(args.phantom), Path(args.out)
    meta = {"kind": pmeta["kind"], "phantom": str(src.resolve()), "seed": args.seed, "channels": pmeta["channels"]}
    if pmeta["kind"] == "signals1d":
        rng = rng_from_seed(args.seed)
        noisy = []
        for name in pmeta["channels"]:
            clean, _ = io.load_grid(src / f"{name}.bin")
            f = clean + args.sigma * rng.standard_normal(clean.shape)
            io.save_image(out / f"{name}_data.bin", f)
            noisy.append(f)
        io.save_signal_csv(out / "noisy.csv", noisy, pmeta["channels"])
        meta["sigma"] = args.sigma
    else:
        if args.mask is None:
            raise CliError("brain2d simulation needs --mask")
        pet, _ = io.load_grid(src / "pet.bin")
        mri, _ = io.load_grid(src / "mri.bin")
        mask = _load_mask(args.mask)
        if mask.shape != mri.shape:
            raise CliError(f"mask shape {mask.shape} does not match phantom {mri.shape}")
        n_angles = args.angles or pet.shape[0] // 2
        geom = RadonGeometry.for_image(pet.shape, n_angles)
        base = pet_operator(pet.shape, geom, args.blur)
        counts = simulate_pet(pet, base, NoiseSpec("poisson-counts", args.counts, rng_seed=args.seed))
        kspace = simulate_mri(mri, mask, NoiseSpec("complex-gaussian", energy_fraction=args.noise_energy,
                                                   rng_seed=args.seed))
        io.save_sinogram(out / "pet_data.bin", counts)
        io.save_complex(out / "mri_data.bin", kspace)
        shutil.copyfile(args.mask, out / "mask.bin")
        mask_meta = Path(str(args.mask) + ".json")
        if mask_meta.exists():
            shutil.copyfile(mask_meta, out / "mask.bin.json")
        meta.update(n_angles=n_angles, blur_sigma=args.blur, counts=args.counts,
                    count_scale=count_scale(pet, base, args.counts), noise_energy=args.noise_energy,
                    mask_kind=mask.kind, mask_fraction=mask.fraction_sampled)
    _write_meta(out, meta)
    print(f"data written to {out}")


# ---------------------------------------------------------------------------
# reconstruct / sweep
# ---------------------------------------------------------------------------


def _channels_from_data(data_dir, cfg):
    """Channel specs for a simulated data folder, weights taken from ``cfg``."""
    meta = _read_meta(data_dir)
    d = Path(data_dir)
    lam, mu = float(cfg.get("lam", 1.0)), float(cfg.get("mu", 1.0))
    alpha, beta = cfg.get("alpha"), cfg.get("beta")
    if meta["kind"] == "signals1d":
        fb, _ = io.load_grid(d / "blue_data.bin")
        fr, _ = io.load_grid(d / "red_data.bin")
        op = IdentityOperator(fb.shape)
        chans = [
            ChannelSpec("blue", op, fb, "quadratic", alpha, [lam, 1.0 - lam], False),
            ChannelSpec("red", op, fr, "quadratic", beta, [1.0 - mu, mu], False),
        ]
    else:
        f, _ = io.load_grid(d / "pet_data.bin", expect="sinogram")
        g, _ = io.load_grid(d / "mri_data.bin", expect="complex")
        mask = _load_mask(d / "mask.bin")
        shape = mask.shape
        geom = RadonGeometry.for_image(shape, meta["n_angles"])
        op = pet_operator(shape, geom, meta["blur_sigma"], meta["count_scale"])
        chans = [
            ChannelSpec("pet", op, f, "kl", alpha, [lam, 1.0 - lam]),
            ChannelSpec("mri", MaskedFourier(mask), g, "quadratic", beta, [1.0 - mu, mu]),
        ]
    return meta, chans


def _truths(meta):
    folder = Path(meta["phantom"])
    if not (folder / META).is_file():
        return None, None, None
    truths = [io.load_grid(folder / f"{n}.bin")[0] for n in meta["channels"]]
    if meta["kind"] == "brain2d":
        roi = io.load_grid(folder / "support.bin")[0] > 0.5
        return truths, [PET_RANGE, MRI_RANGE], roi
    # SSIM needs a 2-D window, so signals are judged by their jump sets instead
    return None, None, None


def run_config(cfg):
    """Run one reconstruction described by a config dict.

    Returns ``(images, names, report)`` where ``report`` is JSON-ready.
    """
    method = cfg.get("method", "icb")
    if method not in METHODS:
        raise CliError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if "data" not in cfg:
        raise CliError("config needs a 'data' entry (simulated data folder)")
    data_dir = Path(cfg.get("_base_dir", ".")) / cfg["data"]
    meta, chans = _channels_from_data(data_dir, cfg)
    solver = {k: cfg[k] for k in ("tol_gap", "tol_constraint", "max_iters") if k in cfg}
    names = [c.name for c in chans]
    report = {"method": method, "data": str(data_dir), "config": {k: v for k, v in cfg.items() if k != "_base_dir"}}

    if method in ("tv", "bregman-tv", "jtv") and any(c.alpha is None for c in chans):
        raise CliError(f"method {method} needs explicit alpha and beta")
    if method == "icb":
        truths, ranges, roi = _truths(meta)
        run = JointRunConfig(
            chans,
            int(cfg.get("n_bregman", 1)),
            ground_truths=truths,
            ssim_ranges=ranges,
            ssim_roi=roi,
            stop_on_ssim_decline=bool(cfg.get("stop_on_ssim_decline", False)) and truths is not None,
            update=cfg.get("update", "jacobi"),
            **solver,
        )
        res = run_joint(run)
        images = res.images
        report["reports"] = [r.as_dict() for r in res.reports]
        report["alphas"] = [c.alpha for c in chans]
        report["halted"] = res.halted
        report["history"] = res.history
    elif method == "tv":
        images = [reconstruct_tv(c, **solver) for c in chans]
    elif method == "bregman-tv":
        k = int(cfg.get("n_bregman", 1))
        hist = [reconstruct_bregman_tv(c, k, **solver) for c in chans]
        images = [h[-1] for h in hist]
        report["history"] = [list(step) for step in zip(*hist)]
    elif method == "jtv":
        images = reconstruct_jtv(chans, max_iters=int(cfg.get("max_iters", 5000)))
    elif method == "mlem":
        if meta["kind"] != "brain2d":
            raise CliError("mlem needs PET data")
        images = [reconstruct_mlem(chans[0].data, chans[0].operator, int(cfg.get("mlem_iterations", 50)))]
        names = names[:1]
    else:  # zerofill
        if meta["kind"] != "brain2d":
            raise CliError("zerofill needs MRI data")
        images = [reconstruct_zero_fill(chans[1].data, chans[1].operator.mask)]
        names = names[1:]
    return images, names, report


def _save_run(out, images, names, report):
    out = Path(out)
    history = report.pop("history", None)
    for name, u in zip(names, images):
        io.save_image(out / f"{name}.bin", u)
    if history:
        for k, step in enumerate(history, start=1):
            for name, u in zip(names, step):
                io.save_image(out / "history" / f"{name}_{k:03d}.bin", u)
    report["channels"] = names
    _write_meta(out, report)


def cmd_reconstruct(args):
    cfg = io.load_config(args.config)
    images, names, report = run_config(cfg)
    _save_run(args.out, images, names, report)
    print(f"{report['method']} reconstruction of {', '.join(names)} -> {args.out}")


def parse_values(spec):
    """``"a:step:b"`` (inclusive) or a comma-separated list."""
    if ":" in spec:
        parts = [float(p) for p in spec.split(":")]
        if len(parts) != 3 or parts[1] <= 0:
            raise CliError(f"bad range {spec!r}; expected start:step:stop")
        a, step, b = parts
        n = int(np.floor((b - a) / step + 1e-9)) + 1
        return [round(a + i * step, 12) for i in range(max(n, 0))]
    return [float(p) for p in spec.split(",") if p]


def cmd_sweep(args):
    base = io.load_config(args.config)
    values = parse_values(args.values)
    if not values:
        raise CliError("no sweep values")
    out = Path(args.out)
    summary = []
    for v in values:
        cfg = dict(base)
        if args.vary == "weight":
            # value = influence of the other channel on the swept one
            key = "lam" if args.channel in (None, 0, "0") else "mu"
            cfg[key] = 1.0 - v
        else:
            cfg[args.vary] = v
        images, names, report = run_config(cfg)
        sub = out / f"{args.vary}_{v:g}"
        _save_run(sub, images, names, report)
        entry = {"value": v, "dir": sub.name}
        truths, ranges, roi = _truths(_read_meta(Path(cfg["_base_dir"]) / cfg["data"]))
        if truths is not None:
            entry["ssim"] = {n: ssim(u, truths[i], ranges[i], roi) for i, (n, u) in enumerate(zip(names, images))}
        summary.append(entry)
        print(f"{args.vary}={v:g} done")
    io.save_json(out / "sweep.json", {"vary": args.vary, "channel": args.channel, "runs": summary})


# ---------------------------------------------------------------------------
# evaluate / plot
# ---------------------------------------------------------------------------


def cmd_evaluate(args):
    rmeta = _read_meta(args.recon)
    tmeta = _read_meta(args.truth)
    truth_dir = Path(args.truth)
    roi = None
    if (truth_dir / "support.bin").exists():
        roi = io.load_grid(truth_dir / "support.bin")[0] > 0.5
    results = {}
    for name in rmeta["channels"]:
        u, _ = io.load_grid(Path(args.recon) / f"{name}.bin")
        t, _ = io.load_grid(truth_dir / f"{name}.bin")
        if u.shape != t.shape:
            raise CliError(f"{name}: reconstruction {u.shape} vs truth {t.shape}")
        rng = {"pet": PET_RANGE, "mri": MRI_RANGE}.get(name, float(np.ptp(t)) or 1.0)
        entry = {"rmse": float(np.sqrt(np.mean((u - t) ** 2))), "dynamic_range": rng}
        if tmeta["kind"] != "signals1d":
            entry["ssim"] = ssim(u, t, rng, roi)
        else:
            entry["jumps"] = jump_set(u)
            entry["true_jumps"] = tmeta["edges"]
            data_dir = Path(rmeta.get("data", ""))
            if (data_dir / f"{name}_data.bin").exists():
                f, _ = io.load_grid(data_dir / f"{name}_data.bin")
                exact, err = check_recovery(u, f, tmeta["edges"])
                entry.update(jumps_exact=exact, plateau_error=err)
        results[name] = entry
    io.save_json(args.report, {"recon": str(args.recon), "truth": str(args.truth), "channels": results})
    for name, e in results.items():
        if "ssim" in e:
            print(f"{name}: SSIM {e['ssim']:.4f}")
        else:
            print(f"{name}: RMSE {e['rmse']:.4f} jumps {e['jumps']}")


def cmd_plot(args):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    folder = Path(args.inp)
    meta = _read_meta(folder)
    names = meta.get("channels", [])
    images = [io.load_grid(folder / f"{n}.bin")[0] for n in names if (folder / f"{n}.bin").exists()]
    reports = meta.get("reports") or []
    ncols = max(len(images), 1) + (1 if reports else 0)
    fig, axes = plt.subplots(1, ncols, figsize=(4 * ncols, 4), squeeze=False)
    axes = axes[0]
    for ax, name, u in zip(axes, names, images):
        if u.shape[0] == 1:
            ax.plot(u.ravel(), drawstyle="steps-mid")
        else:
            ax.imshow(u, cmap="gray")
            ax.axis("off")
        ax.set_title(name)
    if reports:
        ax = axes[-1]
        for name in names:
            rs = [r for r in reports if r["channel"] == name]
            ks = [r["bregman_iteration"] for r in rs]
            if all(r.get("ssim") is not None for r in rs):
                ax.plot(ks, [r["ssim"] for r in rs], "o-", label=f"{name} SSIM")
            else:
                ax.semilogy(ks, [max(r["gap_per_pixel"], 1e-16) for r in rs], "o-", label=f"{name} gap")
        ax.set_xlabel("Bregman iteration")
        ax.legend()
    fig.tight_layout()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(args.out, dpi=100)
    plt.close(fig)
    print(f"plot written to {args.out}")


def build_parser():
    p = argparse.ArgumentParser(prog="icbrecon", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", help="write a phantom pair or the 1-D signals")
    s.add_argument("--kind", choices=["brain2d", "signals1d"], required=True)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("mask", help="write a k-space sampling mask")
    s.add_argument("--kind", choices=MASK_KINDS, required=True)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--spokes", type=int)
    s.add_argument("--turns", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("simulate", help="simulate noisy PET/MRI (or 1-D) data")
    s.add_argument("--phantom", required=True)
    s.add_argument("--mask")
    s.add_argument("--counts", type=float, default=1.5e6)
    s.add_argument("--noise-energy", type=float, default=0.05)
    s.add_argument("--sigma", type=float, default=0.35, help="noise level for 1-D signals")
    s.add_argument("--angles", type=int, help="projection angles (default size/2)")
    s.add_argument("--blur", type=float, default=1.7)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reconstruct", help="run a reconstruction from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("evaluate", help="SSIM of a reconstruction against the phantom")
    s.add_argument("--recon", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="repeat a reconstruction over a parameter series")
    s.add_argument("--config", required=True)
    s.add_argument("--vary", required=True, help="'weight' or any config key")
    s.add_argument("--values", required=True, help="start:step:stop or comma list")
    s.add_argument("--channel", default="0", help="channel whose weight is varied (0 or 1)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("plot", help="montage of a result folder")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (CliError, FileNotFoundError, ValueError, io.FormatError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
