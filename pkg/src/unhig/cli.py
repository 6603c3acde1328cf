"""``nukesctl`` and ``hsic`` command-line entry points.

Exit codes: 0 ok, 1 usage or bad configuration, 2 data error, 3 check failure.
``NUKES_THREADS`` caps the BLAS/FFT thread pools.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, DataError, InvalidParam, UnhigError

log = logging.getLogger("unhig")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 32x32, got {text!r}")
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return w, h


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    from .hsicube import SceneSpec, build_srf, degrade, save_cube, save_srf_csv, synth_scene

    w, h = args.size
    cube = synth_scene(SceneSpec(seed=args.seed, bands=args.bands, width=w, height=h))
    save_cube(cube, args.output)
    print(f"wrote {args.output} ({args.bands} bands, {w}x{h})")
    if args.rgb or args.srf:
        srf = build_srf(bands=args.bands)
        if args.rgb:
            save_cube(degrade(cube, srf), args.rgb)
            print(f"wrote {args.rgb}")
        if args.srf:
            save_srf_csv(srf, args.srf)
            print(f"wrote {args.srf}")
    return EXIT_OK


def cmd_rnd(args) -> int:
    from .hsicube import load_cube, load_srf_csv, null_component, range_component, save_cube

    srf = load_srf_csv(args.srf)
    cube = load_cube(args.input)
    if args.range:
        save_cube(range_component(cube, srf), args.range)
    if args.null:
        save_cube(null_component(cube, srf), args.null)
    if not (args.range or args.null):
        raise InvalidParam("give --range and/or --null")
    return EXIT_OK


def _train_config(args):
    from .training import TrainConfig

    base = TrainConfig.from_json(args.config).to_dict() if args.config else {}
    for key in ("steps", "seed", "size", "dtype", "n_hsi", "n_rgb", "n_val"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    if getattr(args, "wide_blocks", False):
        base["stage_blocks"] = [1, 2, 4, 2, 1]
    return TrainConfig.from_dict(base)


def _progress(every: int):
    def report(step, parts):
        if every and (step == 1 or step % every == 0):
            print(f"step {step:5d}  total {parts['total']:.5f}  cyc {parts['L_cyc']:.5f}", flush=True)
    return report


def cmd_train(args) -> int:
    from .plotting import plot_losses
    from .training import read_losses, train

    cfg = _train_config(args)
    out = Path(args.out)
    man = train(cfg, out, _progress(args.log_every))
    plot_losses(read_losses(man.loss_csv), out / "losses.png")
    print(f"losses   {man.loss_csv}")
    print(f"ckpt     {man.checkpoint}")
    print(f"figure   {out / 'losses.png'}")
    print(f"val psnr {man.psnr_init:.3f} dB -> {man.psnr_final:.3f} dB")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .checkpoint import load_inference_generator
    from .gradcore import Tensor
    from .hsicube import HsiCube, load_cube, save_cube
    from .nukesformer import generator_forward

    gen, touched = load_inference_generator(args.ckpt)
    rgb = load_cube(args.input)
    out = generator_forward(gen, Tensor(rgb.data)).data
    save_cube(HsiCube(out), args.output)
    for path in touched:
        print(f"loaded {path}")
    print(f"wrote {args.output} ({out.shape[0]} bands)")
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .hsicube import load_cube
    from .metrics import error_map, evaluate, write_pgm

    ref, rec = load_cube(args.ref), load_cube(args.rec)
    report = evaluate(ref, rec, args.sam_mode)
    if args.json:
        report.write_json(args.json)
    if args.errmap:
        write_pgm(error_map(ref, rec, args.band), args.errmap)
    print("rmse,mrae,psnr_db,ssim,sam_deg")
    print(f"{report.rmse:.6g},{report.mrae:.6g},{report.psnr_db:.6g},{report.ssim_mean:.6g},{report.sam_deg:.6g}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradchecks import primitive_coverage
    from .gradcore import REGISTRY, run_case

    names, missing = primitive_coverage()
    cases = [c for n, c in REGISTRY.items() if not args.only or args.only in n]
    if args.list:
        for c in cases:
            print(f"{c.kind:10s} {c.name}")
        return EXIT_OK
    failed = 0
    for case in cases:
        rep = run_case(case, seed=args.seed)
        failed += not rep.passed
        print(rep.line(), flush=True)
    print(f"{len(cases) - failed}/{len(cases)} passed; {len(names) - len(missing)}/{len(names)} primitives covered")
    if missing:
        print("uncovered primitives: " + ", ".join(sorted(missing)))
    return EXIT_CHECK if failed or missing else EXIT_OK


def cmd_ablate(args) -> int:
    from .plotting import plot_ablation
    from .training import VARIANTS, ablate, median_psnr

    cfg = _train_config(args)
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ConfigInvalid(f"unknown variants {bad}; choose from {', '.join(VARIANTS)}")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    out = Path(args.out)
    rows = ablate(cfg, out, variants, seeds, _progress(args.log_every))
    plot_ablation(rows, out / "ablation.png")
    med = median_psnr(rows)
    print("variant,median_psnr_db")
    for v in variants:
        print(f"{v},{med[v]:.4f}")
    print(f"table   {out / 'ablation.csv'}")
    print(f"figure  {out / 'ablation.png'}")
    if args.check_order and "base" in med:
        worse = [v for v in variants if med[v] > med["base"]]
        if worse:
            print("ordering check FAILED: base below " + ", ".join(worse))
            return EXIT_CHECK
        print("ordering check passed")
    return EXIT_OK


def cmd_gabor_bank(args) -> int:
    from .gmsa import gabor_kernel
    from .plotting import plot_kernels

    freqs = args.freqs or [0.5, 1.0, 1.5, 2.0]
    thetas = args.thetas or [np.pi * i / len(freqs) for i in range(len(freqs))]
    if len(thetas) != len(freqs):
        raise InvalidParam("--thetas must match --freqs in length")
    kernels = np.stack([gabor_kernel(f, t, args.sigma, args.ksize, args.alt_form) for f, t in zip(freqs, thetas)])
    rows = []
    for m, (f, t, k) in enumerate(zip(freqs, thetas, kernels)):
        for r in range(args.ksize):
            rows.append([m, f, t, r] + [repr(float(v)) for v in k[r]])
    header = ["kernel", "freq", "theta", "row"] + [f"c{j}" for j in range(args.ksize)]
    _write_csv(args.dump, header, rows)
    if args.png:
        plot_kernels(kernels, args.png)
    return EXIT_OK


def cmd_spline(args) -> int:
    from .nukes import basis_table, clamped_uniform_knots, ncpg_generate
    from .plotting import plot_basis

    p = args.degree
    if args.knots:
        knots = np.asarray(args.knots)
    elif args.random_seed is not None:
        raw = np.random.default_rng(args.random_seed).normal(size=args.interior + 1)
        knots, _ = ncpg_generate(raw, np.zeros(args.interior + p + 1), p, args.range)
    else:
        knots = clamped_uniform_knots(args.interior, p, args.range)
    xs = np.linspace(knots[p], knots[-p - 1], args.samples)
    table = basis_table(p, knots, xs)
    header = ["x"] + [f"N{i}" for i in range(table.shape[1] - 1)]
    _write_csv(args.eval, header, [[repr(float(v)) for v in row] for row in table])
    if args.png:
        plot_basis(table[:, 0], table[:, 1:], args.png, title=f"degree {p}")
    return EXIT_OK


def _write_csv(path, header, rows):
    fh = sys.stdout if path in (None, "-") else open(path, "w", newline="")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()


# ---------------------------------------------------------------- parsers

def _add_synth(sub):
    p = sub.add_parser("synth", help="write a synthetic hyperspectral scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bands", type=int, default=31)
    p.add_argument("--size", type=_size, default=(32, 32), help="WxH")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--rgb", help="also write the degraded RGB image here")
    p.add_argument("--srf", help="also write the spectral response CSV here")
    p.set_defaults(func=cmd_synth)


def _add_rnd(sub):
    p = sub.add_parser("rnd", help="split a cube into range and null-space parts")
    p.add_argument("--srf", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--range")
    p.add_argument("--null")
    p.set_defaults(func=cmd_rnd)


def _add_train_args(p):
    p.add_argument("--config", help="JSON config; unknown keys are rejected")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--dtype", choices=("f32", "f64"))
    p.add_argument("--n-hsi", dest="n_hsi", type=int)
    p.add_argument("--n-rgb", dest="n_rgb", type=int)
    p.add_argument("--n-val", dest="n_val", type=int)
    p.add_argument("--wide-blocks", action="store_true", help="use stage blocks 1,2,4,2,1")
    p.add_argument("--log-every", type=int, default=50)


def build_nukesctl() -> argparse.ArgumentParser:
    ap = _Parser(prog="nukesctl", description="Unpaired RGB-to-hyperspectral toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_synth(sub)
    _add_rnd(sub)

    p = sub.add_parser("train", help="train on synthetic unpaired data")
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="RGB to hyperspectral with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("metrics", help="compare a reconstruction with its reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--rec", required=True)
    p.add_argument("--json")
    p.add_argument("--sam-mode", choices=("band", "pixel"), default="band")
    p.add_argument("--errmap", help="write the per-pixel RMSE map as an 8-bit PGM")
    p.add_argument("--band", default="all", help="band index for --errmap, or 'all'")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("gradcheck", help="finite-difference check of every registered op")
    p.add_argument("--only", help="substring filter on case names")
    p.add_argument("--list", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train the ablation variants and compare them")
    _add_train_args(p)
    p.add_argument("--variants", help="comma-separated subset of base,no-nukes,no-gmsa,no-dcpm-g,no-dcpm-s")
    p.add_argument("--seeds", help="comma-separated seeds (default: config seed)")
    p.add_argument("--check-order", action="store_true", help="exit 3 unless base has the best median PSNR")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gabor-bank", help="dump Gabor kernels as CSV grids")
    p.add_argument("--dump", default="-", help="CSV path or - for stdout")
    p.add_argument("--freqs", type=_floats)
    p.add_argument("--thetas", type=_floats)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--ksize", type=int, default=7)
    p.add_argument("--alt-form", action="store_true", help="use the (y/f)^2 kernel term")
    p.add_argument("--png")
    p.set_defaults(func=cmd_gabor_bank)

    p = sub.add_parser("spline", help="tabulate B-spline basis values")
    p.add_argument("--eval", default="-", help="CSV path or - for stdout")
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--interior", type=int, default=8)
    p.add_argument("--range", type=float, default=4.0)
    p.add_argument("--knots", type=_floats, help="explicit knot vector")
    p.add_argument("--random-seed", type=int, help="non-uniform knots from this seed")
    p.add_argument("--samples", type=int, default=101)
    p.add_argument("--png")
    p.set_defaults(func=cmd_spline)
    return ap


def build_hsic() -> argparse.ArgumentParser:
    ap = _Parser(prog="hsic", description="Hyperspectral cube utilities.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_synth(sub)
    _add_rnd(sub)
    return ap


def _run(parser: argparse.ArgumentParser, argv) -> int:
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("NUKES_THREADS")
    try:
        if threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=max(1, int(threads))):
                return args.func(args)
        return args.func(args)
    except (ConfigInvalid, InvalidParam) as e:
        print(f"{parser.prog}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, UnhigError) as e:
        print(f"{parser.prog}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None) -> int:
    return _run(build_nukesctl(), argv)


def hsic_main(argv=None) -> int:
    return _run(build_hsic(), argv)


if __name__ == "__main__":
    sys.exit(main())
