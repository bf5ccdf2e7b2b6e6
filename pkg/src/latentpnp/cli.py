"""Command-line entry point: ``latentpnp <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 divergence or solver
failure, 4 missing input file.
"""

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig, load_config
from .errors import ConfigError, LatentPnPError, MissingFileError
from .experiment import prepare, run_experiment
from .metrics import psnr, ssim
from .schedule import TimestepRule, build_schedule, timestep_for_noise

IMAGE_SUFFIXES = (".png", ".lrt1")
SUMMARY_FIELDS = ("image", "run_id", "psnr", "ssim", "measurement_psnr", "rho_hat", "converged_at", "nfe", "wall_clock_s")


def _config(args, task=None):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {"seed": args.seed}
    if task is not None:
        changes["task"] = task
    if getattr(args, "out_dir", None):
        changes["out_dir"] = args.out_dir
    if getattr(args, "iterations", None):
        changes["sampler"] = replace(cfg.sampler, n_iter=args.iterations)
    cfg = replace(cfg, **changes)
    if getattr(args, "image", None):
        cfg = replace(cfg, input=replace(cfg.input, image=str(args.image), measurement=None))
    if getattr(args, "measurement", None):
        cfg = replace(cfg, input=replace(cfg.input, image=None, measurement=str(args.measurement)))
    return cfg


def _list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingFileError(directory, "image directory")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ConfigError(f"no .png or .lrt1 images in {directory}")
    return files


def _summary_row(path, report):
    m = report.get("metrics", {})
    return {
        "image": path,
        "run_id": Path(report.get("out_dir", "")).name,
        "psnr": m.get("posterior_mean", {}).get("psnr"),
        "ssim": m.get("posterior_mean", {}).get("ssim"),
        "measurement_psnr": m.get("measurement", {}).get("psnr"),
        "rho_hat": report.get("rho_hat"),
        "converged_at": report.get("converged_at"),
        "nfe": report.get("nfe"),
        "wall_clock_s": report.get("wall_clock_s"),
    }


def _write_summary(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, SUMMARY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if row[k] is None else row[k] for k in SUMMARY_FIELDS})


def _run_one(cfg, figures):
    return run_experiment(cfg, write=True, figures=figures)


def _run(args, task=None):
    cfg = _config(args, task)
    figures = not args.no_figures
    if not args.images:
        report = run_experiment(cfg, write=True, figures=figures)
        _write_summary(Path(report["out_dir"]) / "summary.csv", [_summary_row(cfg.input.image or "", report)])
        _emit(_brief(report))
        return 0
    files = _list_images(args.images)
    cfgs = [
        replace(cfg, input=replace(cfg.input, image=str(p), measurement=None), run_id=f"{p.stem}-s{cfg.seed}")
        for p in files
    ]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            reports = list(pool.map(_run_one, cfgs, [figures] * len(cfgs)))
    else:
        reports = [_run_one(c, figures) for c in cfgs]
    out = Path(cfg.out_dir)
    rows = [_summary_row(str(p), r) for p, r in zip(files, reports)]
    _write_summary(out / "summary.csv", rows)
    _emit({"runs": [_brief(r) for r in reports], "summary": str(out / "summary.csv")})
    return 0


def _brief(report):
    keys = ("task", "seed", "rho_hat", "converged_at", "iterations", "nfe", "metrics", "out_dir", "wall_clock_s")
    return {k: report.get(k) for k in keys}


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_degrade(args):
    cfg = _config(args)
    truth, obs, _ = prepare(cfg)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_lrt1(out.with_suffix(".lrt1"), obs.y)
    io.write_png(out.with_suffix(".png"), obs.y, bits=16)
    written = [str(out.with_suffix(".lrt1")), str(out.with_suffix(".png"))]
    if truth is not None:
        t = out.with_name(out.stem + "_truth.lrt1")
        io.write_lrt1(t, truth)
        written.append(str(t))
    _emit({"written": written, "sigma": cfg.sigma, "task": cfg.task, "seed": cfg.seed})
    return 0


def cmd_restore(args):
    return _run(args)


def cmd_calibrate(args):
    return _run(args, task="calibrate-only")


def cmd_denoise(args):
    return _run(args, task="denoise-only")


def _pairs(pred_dir, ref_dir):
    preds = {p.stem: p for p in _list_images(pred_dir)}
    refs = {p.stem: p for p in _list_images(ref_dir)}
    common = sorted(set(preds) & set(refs))
    if not common:
        raise ConfigError(f"no matching file stems between {pred_dir} and {ref_dir}")
    return [(preds[s], refs[s]) for s in common]


def cmd_eval(args):
    rows = []
    for pred, ref in _pairs(args.pred, args.ref):
        x = io.load_array(pred)
        r = io.load_array(ref)
        if x.shape != r.shape:
            raise ConfigError(f"shape mismatch {pred.name}: {x.shape} vs {r.shape}")
        try:
            s = ssim(x, r)
        except ValueError:
            s = None
        rows.append({"image": pred.stem, "psnr": psnr(x, r), "ssim": s})
    vals = [r["psnr"] for r in rows]
    ssims = [r["ssim"] for r in rows if r["ssim"] is not None]
    result = {
        "images": rows,
        "mean_psnr": float(np.mean(vals)),
        "mean_ssim": float(np.mean(ssims)) if ssims else None,
    }
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, ("image", "psnr", "ssim"), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    _emit(result)
    return 0


def cmd_schedule_info(args):
    if args.config:
        d = load_config(args.config).denoiser
        T, lo, hi, lam, rule = d.T, d.beta_min, d.beta_max, d.lam, TimestepRule(d.rule, d.t_star)
    else:
        T, lo, hi, lam = args.T, args.beta_min, args.beta_max, args.lam
        rule = TimestepRule(args.rule, args.t_star)
    sched = build_schedule(T, lo, hi)
    info = {"T": T, "beta_min": lo, "beta_max": hi, "lambda": lam, "rule": rule.mode,
            "t_star": timestep_for_noise(sched, lam, rule)}
    info.update(sched.to_dict())
    _emit(info)
    return 0


def _add_run_args(p, batch=True):
    p.add_argument("--config", type=Path, help="TOML experiment config (schema 1)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--image", type=Path, help="ground-truth image, overrides the config")
    p.add_argument("--measurement", type=Path, help="observed y, overrides the config")
    p.add_argument("--iterations", type=int)
    p.add_argument("--no-figures", action="store_true")
    if batch:
        p.add_argument("--images", type=Path, help="directory of ground-truth images (batch mode)")
        p.add_argument("--workers", type=int, default=1)


def build_parser():
    parser = argparse.ArgumentParser(prog="latentpnp", description="Latent-space PnP-ULA image restoration.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="simulate y = A x + noise")
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--image", type=Path)
    p.add_argument("--output", "-o", type=Path, required=True)
    p.set_defaults(func=cmd_degrade)

    for name, func, text in (
        ("restore", cmd_restore, "posterior-mean restoration"),
        ("calibrate", cmd_calibrate, "restoration with SAPG calibration of rho"),
        ("denoise", cmd_denoise, "single denoiser pass with lambda = sigma^2"),
    ):
        p = sub.add_parser(name, help=text)
        _add_run_args(p)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="PSNR/SSIM of predictions against references")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--csv", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("schedule-info", help="print the DDPM schedule as JSON")
    p.add_argument("--config", type=Path)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--beta-min", type=float, default=1e-4)
    p.add_argument("--beta-max", type=float, default=0.02)
    p.add_argument("--lam", type=float, default=1.5 / 255)
    p.add_argument("--rule", default="explicit")
    p.add_argument("--t-star", type=int, default=3)
    p.set_defaults(func=cmd_schedule_info)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LatentPnPError as exc:
        print(f"latentpnp: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
