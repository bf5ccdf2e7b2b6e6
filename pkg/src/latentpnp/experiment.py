"""End-to-end restoration runs driven by an :class:`ExperimentConfig`."""

import csv
import hashlib
import io as _io
import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .calibration import CalibratorConfig
from .config import dump_config, config_to_dict
from .denoisers import (
    AnalyticGaussianDenoiser,
    DdpmChainDenoiser,
    EquivariantDenoiser,
    ExternalScoreBackend,
    GaussianScoreBackend,
)
from .errors import ConfigError
from .metrics import psnr, ssim
from .operators import (
    Blur,
    Downsample,
    Mask,
    Observation,
    SolverConfig,
    degrade,
    gaussian_kernel,
    motion_kernel,
    operator_norm,
    random_mask,
)
from .rng import RngStream
from .sampler import SamplerConfig, run_sampler
from .schedule import TimestepRule, build_schedule
from .synthetic import generate_test_image
from .tensor import parse_group

TRACE_FIELDS = ("iteration", "drift_likelihood", "drift_prior", "psnr", "rho", "rho_bar")


def _require_seed(cfg):
    if cfg.seed is None:
        raise ConfigError("an explicit seed is required for stochastic runs")
    return int(cfg.seed)


def load_truth(cfg):
    """Ground-truth image from file or the synthetic generator (``None`` if only y is given)."""
    spec = cfg.input
    if spec.image:
        return io.load_array(spec.image, channels=spec.channels)
    if spec.measurement:
        return None
    dims = (spec.channels, spec.size, spec.size)
    return generate_test_image(spec.synthetic, dims, _require_seed(cfg))


def build_operator(cfg, shape):
    """Forward operator for ``cfg.task`` acting on images of ``shape``."""
    o = cfg.operator
    task = cfg.task
    if task in ("deblur-gaussian", "calibrate-only"):
        return Blur(gaussian_kernel(o.kernel_size, o.bandwidth))
    if task == "deblur-motion":
        if o.kernel_path:
            k = io.load_array(o.kernel_path)
            k = np.squeeze(k)
            return Blur(k / k.sum())
        return Blur(motion_kernel(o.motion_size, o.motion_seed))
    if task == "inpaint":
        if o.mask_path:
            m = np.squeeze(io.load_array(o.mask_path))
            return Mask((m > 0.5).astype(np.float64))
        return Mask(random_mask(shape[-2:], o.mask_rate, o.mask_seed))
    if task == "superresolve":
        return Downsample(gaussian_kernel(o.kernel_size, o.bandwidth), o.sr_factor)
    if task == "denoise-only":
        return Mask(np.ones(shape[-2:]))
    raise ConfigError(f"unknown task {task!r}")


def _prior_moments(cfg, obs):
    """Prior mean and variance for analytic denoisers (estimated from y when unset)."""
    spec = cfg.denoiser
    y = obs.y
    if isinstance(obs.operator, Mask):
        kept = np.broadcast_to(obs.operator.mask, y.shape) > 0
        vals = y[kept] if kept.any() else y.ravel()
    else:
        vals = y.ravel()
    mu = spec.prior_mean if spec.prior_mean is not None else float(np.mean(vals))
    var = spec.prior_var if spec.prior_var is not None else max(float(np.var(vals)) - obs.sigma2, 1e-4)
    return mu, var


def build_denoiser(cfg, obs, shape, lam=None):
    spec = cfg.denoiser
    lam = spec.lam if lam is None else lam
    mu, var = _prior_moments(cfg, obs)
    mu_img = np.full(shape, mu)
    if spec.backend == "analytic-gaussian":
        inner = AnalyticGaussianDenoiser(mu_img, var, lam)
    elif spec.backend in ("ddpm-gaussian", "external"):
        sched = build_schedule(spec.T, spec.beta_min, spec.beta_max)
        if spec.backend == "external":
            if not spec.command:
                raise ConfigError("external score backend needs denoiser.command")
            backend = ExternalScoreBackend(spec.command)
        else:
            backend = GaussianScoreBackend(sched, mu_img, var)
        inner = DdpmChainDenoiser(backend, sched, lam, spec.eta, TimestepRule(spec.rule, spec.t_star))
    else:
        raise ConfigError(f"unknown denoiser backend {spec.backend!r}")
    if spec.equivariant:
        return EquivariantDenoiser(inner, parse_group(spec.group))
    return inner


def initial_latent(cfg, obs, shape, mu):
    mode = cfg.sampler.init
    if mode == "prior-mean":
        return np.full(shape, mu)
    if mode != "measurement":
        raise ConfigError(f"unknown init {mode!r}")
    op = obs.operator
    if isinstance(op, Mask):
        keep = np.broadcast_to(op.mask, shape)
        return np.where(keep > 0, obs.y, mu)
    if isinstance(op, Downsample):
        f = op.factor
        return np.repeat(np.repeat(obs.y, f, axis=-2), f, axis=-1)
    return obs.y.copy()


def _hash_inputs(cfg, truth, obs):
    h = hashlib.sha256()
    for p in (cfg.input.image, cfg.input.measurement, cfg.operator.kernel_path, cfg.operator.mask_path):
        if p:
            h.update(Path(p).read_bytes())
    if truth is not None and not cfg.input.image:
        h.update(np.ascontiguousarray(truth).tobytes())
    h.update(np.ascontiguousarray(obs.y).tobytes())
    return h.hexdigest()


def _run_id(cfg):
    if cfg.run_id:
        return cfg.run_id
    # the output location does not change results, so it is left out of the id
    digest = hashlib.sha256(dump_config(replace(cfg, out_dir="")).encode()).hexdigest()[:12]
    return f"{cfg.task}-s{cfg.seed}-{digest}"


def write_trace_csv(path, trace):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_FIELDS)
    for row in trace:
        writer.writerow(["" if row.get(k) is None else repr(row[k]) for k in TRACE_FIELDS])
    Path(path).write_text(buf.getvalue())


def prepare(cfg):
    """Truth (may be ``None``), observation and image shape for ``cfg``."""
    seed = _require_seed(cfg)
    truth = load_truth(cfg)
    y = None
    if cfg.input.measurement:
        y = io.load_array(cfg.input.measurement, channels=cfg.input.channels)
    if truth is not None:
        shape = truth.shape
    elif cfg.task == "superresolve":
        f = cfg.operator.sr_factor
        shape = (y.shape[0], y.shape[1] * f, y.shape[2] * f)
    else:
        shape = y.shape
    op = build_operator(cfg, shape)
    if y is not None:
        obs = Observation(y=y, sigma=cfg.sigma, operator=op)
    else:
        obs = degrade(op, truth, cfg.sigma, RngStream(seed, 0))
    return truth, obs, shape


def _denoise_only(cfg, truth, obs, shape):
    d = build_denoiser(cfg, obs, shape, lam=obs.sigma2)
    rng = RngStream(_require_seed(cfg), 1)
    out = d(obs.y, rng)
    calls = getattr(d, "calls", 1)
    return out, None, [], None, None, {"denoiser_calls": calls, "nfe": d.nfe}


def run_experiment(cfg, write=True, figures=True):
    """Run one configured experiment and return its report dictionary.

    Outputs go to ``cfg.out_dir/<run_id>/``: ``mean.png``, ``mean.lrt1``,
    ``std.png``, ``std.lrt1``, ``measurement.lrt1``, ``trace.csv``,
    ``report.json``, ``config.echo.toml`` and ``figures/``.
    """
    seed = _require_seed(cfg)
    t0 = time.perf_counter()
    truth, obs, shape = prepare(cfg)
    nfe_per_call = None

    if cfg.task == "denoise-only":
        mean, var, trace, rho_hat, converged, counts = _denoise_only(cfg, truth, obs, shape)
        rho_final = None
    else:
        d = build_denoiser(cfg, obs, shape)
        mu, _ = _prior_moments(cfg, obs)
        z0 = initial_latent(cfg, obs, shape, mu)
        s = cfg.sampler
        sampler_cfg = SamplerConfig(
            gamma=s.gamma, lam=cfg.denoiser.lam, n_iter=s.n_iter, burn_in=s.burn_in, mode=s.mode,
            solver=SolverConfig(cfg.solver.method, cfg.solver.cg_tol, cfg.solver.cg_max_iter),
        )
        c = cfg.calibrator
        calibrate = (c.enabled or cfg.task == "calibrate-only") and s.mode == "latent"
        cal_cfg = None
        if calibrate:
            cal_cfg = CalibratorConfig(
                rho0=c.rho0, c0=c.c0, p=c.p, rho_min=c.rho_min, rho_max=c.rho_max, tol_rho=c.tol_rho,
                tol_x=c.tol_x, averaging=c.averaging, gradient=c.gradient,
                stop_on_convergence=c.stop_on_convergence,
            )
        op_norm = operator_norm(obs.operator, shape)
        res = run_sampler(
            z0, obs, s.rho, d, sampler_cfg, RngStream(seed, 1), calibrator=cal_cfg, truth=truth, op_norm=op_norm,
        )
        mean, var, trace = res.posterior_mean, res.posterior_var, res.trace
        rho_hat, rho_final, converged = res.rho_hat, res.rho_final, res.converged_at
        counts = {"denoiser_calls": d.calls, "nfe": d.nfe}
        inner = getattr(d, "inner", d)
        nfe_per_call = getattr(inner, "t_star", 0)

    report = {
        "task": cfg.task,
        "seed": seed,
        "rho_hat": rho_hat,
        "rho_final": rho_final,
        "converged_at": converged,
        "iterations": len(trace),
        "denoiser_calls": counts["denoiser_calls"],
        "nfe": counts["nfe"],
        "nfe_per_call": nfe_per_call,
        "metrics": {},
        "input_hash": _hash_inputs(cfg, truth, obs),
        "config": config_to_dict(cfg),
    }
    if truth is not None:
        report["metrics"]["posterior_mean"] = {"psnr": psnr(mean, truth), "ssim": _safe_ssim(mean, truth)}
        if obs.y.shape == truth.shape:
            meas = measurement_image(obs)
            report["metrics"]["measurement"] = {"psnr": psnr(meas, truth), "ssim": _safe_ssim(meas, truth)}
    report["wall_clock_s"] = time.perf_counter() - t0

    if write:
        out = Path(cfg.out_dir) / _run_id(cfg)
        out.mkdir(parents=True, exist_ok=True)
        io.write_lrt1(out / "mean.lrt1", mean)
        io.write_png(out / "mean.png", mean, bits=16)
        io.write_lrt1(out / "measurement.lrt1", obs.y)
        io.write_png(out / "measurement.png", obs.y, bits=16)
        std = np.sqrt(var) if var is not None else np.zeros_like(mean)
        io.write_lrt1(out / "std.lrt1", std)
        peak = float(std.max())
        io.write_png(out / "std.png", std / peak if peak > 0 else std, bits=16)
        report["std_png_scale"] = peak
        write_trace_csv(out / "trace.csv", trace)
        (out / "config.echo.toml").write_text(dump_config(cfg))
        if figures:
            from .plotting import render_run_figures

            report["figures"] = render_run_figures(out / "figures", trace, truth, obs.y, mean, std)
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
        report["out_dir"] = str(out)
    return report


def measurement_image(obs):
    """``y`` as scored against the truth; unobserved pixels of a mask count as 0."""
    if isinstance(obs.operator, Mask):
        return obs.y * np.broadcast_to(obs.operator.mask, obs.y.shape)
    return obs.y


def _safe_ssim(x, ref):
    try:
        return ssim(x, ref)
    except ValueError:
        return None
