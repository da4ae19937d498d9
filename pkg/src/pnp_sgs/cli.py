"""``pnp-sgs`` command line: degrade, run, eval, schedule."""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import core
from .config import ConfigError, RunConfig, ScheduleBlock, load_config
from .denoiser import ExternalDenoiser, GaussianConjugateDenoiser
from .errors import PnPSGSError, ProtocolError
from .io import (array_digest, load_chain, load_npy, read_image, save_chain, save_npy,
                 write_json, write_png)
from .metrics import evaluate, format_psnr
from .plotting import plot_schedule, plot_summary, plot_t_star_trace
from .sampler import (Chain, Deblur, Inpaint, SamplerConfig, SuperRes, initial_state,
                      run_sampler, summarize)
from .schedule import build_cosine_schedule, build_linear_schedule, invert_noise_variance

log = logging.getLogger("pnp_sgs")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SAMPLER, EXIT_PROTOCOL = 0, 2, 3, 4, 5


class IOFailure(Exception):
    pass


def build_schedule(block: ScheduleBlock):
    if block.kind == "linear":
        return build_linear_schedule(block.T, block.b0, block.bT)
    return build_cosine_schedule(block.T, block.s)


# --------------------------------------------------------------------------- degrade

def _operator_for(cfg: RunConfig, shape, rng):
    t = cfg.task
    if t.kind == "inpaint":
        return core.random_mask(shape, t.fraction, rng)
    kernel = core.gaussian_kernel(t.kernel_size, t.kernel_std)
    blur = core.circulant_from_kernel(kernel, shape)
    if t.kind == "deblur":
        return blur
    return core.ComposedOperator(core.stride_mask(shape, t.factor), blur)


def _noise_for(cfg: RunConfig, shape):
    if cfg.task.noise_map is not None:
        var = read_image(cfg.path(cfg.task.noise_map))
        return core.NoiseModel.diagonal(np.broadcast_to(var, shape).copy())
    return core.NoiseModel.scalar(cfg.task.sigma)


def _observation_image(op, y, shape):
    if isinstance(op, core.CirculantOperator):
        return y
    mask = op if isinstance(op, core.MaskOperator) else op.mask
    return initial_state(Inpaint(y, mask, 1.0)) if y.size else np.zeros(shape)


def cmd_degrade(cfg: RunConfig) -> int:
    try:
        x = core.as_image(read_image(cfg.path(cfg.io.input)))
    except OSError as exc:
        raise IOFailure(f"cannot read input image: {exc}") from exc
    rng = np.random.default_rng([cfg.sampler.seed, 1])
    try:
        op = _operator_for(cfg, x.shape[1:], rng)
        noise = _noise_for(cfg, x.shape)
    except PnPSGSError as exc:
        raise ConfigError(str(exc)) from exc
    y = core.degrade(x, op, noise, rng)

    out = cfg.path(cfg.io.workdir)
    out.mkdir(parents=True, exist_ok=True)
    save_npy(out / "measurement.npy", y)
    save_npy(out / "reference.npy", x)
    files = ["measurement.npy", "reference.npy"]
    if isinstance(op, (core.MaskOperator, core.ComposedOperator)):
        mask = op if isinstance(op, core.MaskOperator) else op.mask
        save_npy(out / "mask_indices.npy", mask.kept_indices, dtype="<i8")
        files.append("mask_indices.npy")
    if cfg.task.kind != "inpaint":
        save_npy(out / "kernel.npy", core.gaussian_kernel(cfg.task.kernel_size, cfg.task.kernel_std).taps)
        files.append("kernel.npy")
    if noise.kind == "diagonal":
        save_npy(out / "noise_variances.npy", noise.diag_variances)
        files.append("noise_variances.npy")
    write_png(out / "observation.png", _observation_image(op, y, x.shape))
    write_json(out / "manifest.json", {
        "task": cfg.to_dict()["task"],
        "image_shape": list(x.shape),
        "measurement_shape": list(y.shape),
        "seed": cfg.sampler.seed,
        "files": sorted(files),
        "measurement_digest": array_digest(load_npy(out / "measurement.npy")),
        "config_digest": cfg.digest(),
    })
    log.info("wrote %s", out)
    return EXIT_OK


# --------------------------------------------------------------------------- run

def load_task(cfg: RunConfig):
    d = cfg.path(cfg.io.workdir)
    try:
        meta = json.loads((d / "manifest.json").read_text())
        y = load_npy(d / "measurement.npy").astype(np.float64)
        shape = tuple(meta["image_shape"])
        kind = cfg.task.kind
        mask = blur = None
        if kind in ("inpaint", "superres"):
            mask = core.MaskOperator(load_npy(d / "mask_indices.npy"), shape[1:])
        if kind in ("deblur", "superres"):
            blur = core.circulant_from_kernel(core.ConvolutionKernel(load_npy(d / "kernel.npy")), shape[1:])
        if kind == "deblur" and (d / "noise_variances.npy").exists():
            noise = core.NoiseModel.diagonal(load_npy(d / "noise_variances.npy").astype(np.float64))
        else:
            noise = core.NoiseModel.scalar(cfg.task.sigma)
    except (OSError, KeyError, ValueError) as exc:
        raise IOFailure(f"cannot load degrade artifacts from {d}: {exc}") from exc
    if meta.get("task", {}).get("kind", kind) != kind:
        raise ConfigError(f"workdir holds a {meta['task']['kind']!r} measurement, config says {kind!r}")

    t = cfg.task
    if kind == "deblur":
        task = Deblur(y, blur, noise)
    elif kind == "inpaint":
        task = Inpaint(y, mask, t.sigma)
    else:
        task = SuperRes(y, blur, mask, t.sigma, t.rho1, t.rho2, t.ridge)
    artifacts = [y] + ([mask.kept_indices] if mask is not None else []) \
        + ([blur.kernel_spectrum] if blur is not None else [])
    return task, kind + ":" + array_digest(*artifacts)


def make_model(cfg: RunConfig, task, schedule):
    d = cfg.denoiser
    if d.kind == "external":
        return ExternalDenoiser(d.command, schedule, d.timeout)
    if isinstance(d.m0, (int, float)) and not isinstance(d.m0, bool):
        m0 = np.full(task.image_shape, float(d.m0))
    elif d.m0 == "observation":
        m0 = initial_state(task)
    else:
        try:
            m0 = read_image(cfg.path(d.m0))
        except OSError as exc:
            raise IOFailure(f"cannot read denoiser.m0: {exc}") from exc
        if m0.shape != tuple(task.image_shape):
            raise ConfigError(f"denoiser.m0 has shape {m0.shape}, expected {task.image_shape}")
    return GaussianConjugateDenoiser(m0, d.tau2, schedule)


def sampler_config(cfg: RunConfig, chain_index=0) -> SamplerConfig:
    s = cfg.sampler
    return SamplerConfig(rho=s.rho, n_mc=s.n_mc, n_bi=s.n_bi, early_stop=s.early_stop,
                         rescale_input=s.rescale_input, t_star_cap=s.t_star_cap,
                         seed=s.seed + chain_index, ci_level=s.ci_level,
                         max_chain_bytes=s.max_chain_bytes)


def t_star_summary(trace, tol=2):
    """Initial and final t*, and the first iteration after which t* stays within ``tol`` of the final value."""
    trace = np.asarray(trace)
    off = np.flatnonzero(np.abs(trace - trace[-1]) > tol)
    stab = int(off[-1]) + 2 if off.size else 1
    return {"initial": int(trace[0]), "final": int(trace[-1]), "stabilization_iteration": stab}


def pool_chains(chains) -> Chain:
    if len(chains) == 1:
        return chains[0]
    if any(c.thin for c in chains):
        k = len(chains)
        stats = {
            "n": sum(c.stats["n"] for c in chains),
            "mean_x": sum(c.stats["mean_x"] for c in chains) / k,
            "mean_z": sum(c.stats["mean_z"] for c in chains) / k,
            "var_x": sum(c.stats["var_x"] for c in chains) / k,
        }
        return Chain(None, None, np.concatenate([c.t_star_trace[c.n_bi:] for c in chains]), 0,
                     {}, stats, np.concatenate([c.reservoir for c in chains]))
    xs = np.concatenate([c.x_samples[c.n_bi:] for c in chains])
    zs = np.concatenate([c.z_samples[c.n_bi:] for c in chains])
    trace = np.concatenate([c.t_star_trace[c.n_bi:] for c in chains])
    return Chain(xs, zs, trace, 0)


def _run_one(cfg, task, schedule, k):
    scfg = sampler_config(cfg, k)
    model = make_model(cfg, task, schedule)
    try:
        return run_sampler(task, model, schedule, scfg)
    finally:
        model.close()


def cmd_run(cfg: RunConfig, n_chains: int = 1) -> int:
    t0 = time.perf_counter()
    schedule = build_schedule(cfg.schedule)
    task, task_digest = load_task(cfg)
    if cfg.sampler.t_star_cap is not None and cfg.sampler.t_star_cap > schedule.T:
        raise ConfigError("sampler.t_star_cap exceeds the schedule length")
    if n_chains == 1:
        chains = [_run_one(cfg, task, schedule, 0)]
    else:
        with ThreadPoolExecutor(max_workers=n_chains) as pool:
            chains = list(pool.map(lambda k: _run_one(cfg, task, schedule, k), range(n_chains)))

    out = cfg.path(cfg.io.output)
    out.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    for k, chain in enumerate(chains):
        save_chain(chain, out / f"chain_{k:03d}", {
            "schedule": schedule.ident, "task_digest": task_digest, "config_digest": digest})

    summary = summarize(pool_chains(chains), cfg.sampler.ci_level)
    for name in ("mmse_x", "mmse_z", "ci_lower", "ci_upper", "pixel_std"):
        arr = getattr(summary, name)
        save_npy(out / f"{name}.npy", arr)
        write_png(out / f"{name}.png", arr)

    traces = np.stack([c.t_star_trace for c in chains])
    with open(out / "t_star_trace.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration"] + [f"t_star_chain{k}" if n_chains > 1 else "t_star" for k in range(n_chains)])
        for n in range(traces.shape[1]):
            w.writerow([n + 1, *traces[:, n].tolist()])
    cap = sampler_config(cfg).cap(schedule)
    plot_t_star_trace(traces, cfg.sampler.n_bi, out / "t_star_trace.png", cap=cap, T=schedule.T)
    obs = _observation_image(getattr(task, "op", None) or task.mask, task.y, task.image_shape)
    plot_summary(summary, out / "summary.png", observation=obs)

    wall = time.perf_counter() - t0
    write_json(out / "run_manifest.json", {
        "config": cfg.to_dict(),
        "config_digest": digest,
        "schedule": schedule.ident,
        "task_digest": task_digest,
        "chains": n_chains,
        "wall_clock_s": wall,
        "t_star": [t_star_summary(tr) for tr in traces],
    })
    log.info("run finished in %.2f s -> %s", wall, out)
    return EXIT_OK


# --------------------------------------------------------------------------- eval

def _estimate_from(path: Path):
    """Return (estimate, run manifest or None) from a run directory or an image file."""
    if path.is_dir():
        manifest = path / "run_manifest.json"
        meta = json.loads(manifest.read_text()) if manifest.exists() else None
        return read_image(path / "mmse_x.npy"), meta
    return read_image(path), None


def cmd_eval(pairs, out_path=None) -> int:
    images, metas = [], []
    for ref_path, est_path in pairs:
        try:
            ref = read_image(ref_path)
            est, meta = _estimate_from(Path(est_path))
        except (OSError, ValueError) as exc:
            raise IOFailure(f"cannot read evaluation inputs: {exc}") from exc
        rep = evaluate(ref, est)
        images.append({"reference": str(ref_path), "estimate": str(est_path), **rep.to_json()})
        metas.append(meta)
    psnrs = [float(r["psnr"]) for r in images]
    report = {
        "images": images,
        "mean": {"psnr": format_psnr(float(np.mean(psnrs))),
                 "ssim": float(np.mean([r["ssim"] for r in images]))},
    }
    runs = [m for m in metas if m is not None]
    if runs:
        report["config_digest"] = runs[0]["config_digest"] if len(runs) == 1 else [m["config_digest"] for m in runs]
        report["wall_clock_s"] = sum(m["wall_clock_s"] for m in runs)
        report["t_star"] = [t for m in runs for t in m["t_star"]]
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out_path is None:
        sys.stdout.write(text)
    else:
        Path(out_path).write_text(text)
    return EXIT_OK


# --------------------------------------------------------------------------- schedule

def schedule_csv(schedule) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "beta", "nu", "scale"])
    betas = np.concatenate([[0.0], schedule.betas])
    for t in range(schedule.T + 1):
        w.writerow([t, repr(float(betas[t])), repr(float(schedule.noise_var[t])),
                    repr(float(schedule.signal_scale[t]))])
    return buf.getvalue()


def cmd_schedule(block: ScheduleBlock, invert=None, out=None, plot=None) -> int:
    try:
        schedule = build_schedule(block)
    except PnPSGSError as exc:
        raise ConfigError(str(exc)) from exc
    if out is not None:
        Path(out).write_text(schedule_csv(schedule))
    if plot is not None:
        plot_schedule(schedule, plot)
    if invert is not None:
        print(invert_noise_variance(schedule, invert))
    elif out is None:
        sys.stdout.write(schedule_csv(schedule))
    return EXIT_OK


# --------------------------------------------------------------------------- entry point

def build_parser():
    p = argparse.ArgumentParser(prog="pnp-sgs", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("degrade", help="simulate a measurement y = Hx + n")
    d.add_argument("--config", required=True, help="JSON run config")
    d.add_argument("--seed", type=int, help="override sampler.seed")

    r = sub.add_parser("run", help="run the sampler on a degraded measurement")
    r.add_argument("--config", required=True, help="JSON run config")
    r.add_argument("--seed", type=int, help="override sampler.seed")
    r.add_argument("--chains", type=int, default=1, help="independent chains, seeded seed..seed+K-1")

    e = sub.add_parser("eval", help="PSNR/SSIM report")
    e.add_argument("--config", help="evaluate the run described by this config")
    e.add_argument("--ref", action="append", default=[], help="reference image (repeatable)")
    e.add_argument("--est", action="append", default=[], help="estimate image or run directory (repeatable)")
    e.add_argument("--out", help="report path (default: stdout, or report.json in the run output with --config)")

    s = sub.add_parser("schedule", help="dump or invert a diffusion schedule")
    s.add_argument("--config")
    s.add_argument("--kind", choices=["linear", "cosine"])
    s.add_argument("--T", type=int)
    s.add_argument("--b0", type=float)
    s.add_argument("--bT", type=float)
    s.add_argument("--s", type=float)
    s.add_argument("--invert", type=float, metavar="S2", help="print the step whose noise variance is closest to S2")
    s.add_argument("--out", help="CSV path (default: stdout)")
    s.add_argument("--plot", help="PNG path for a schedule plot")
    return p


def _dispatch(args) -> int:
    if args.command == "schedule":
        block = load_config(args.config).schedule if args.config else ScheduleBlock()
        for key in ("kind", "T", "b0", "bT", "s"):
            if getattr(args, key) is not None:
                setattr(block, key, getattr(args, key))
        block.check()
        return cmd_schedule(block, args.invert, args.out, args.plot)

    if args.command == "eval":
        if args.config:
            cfg = load_config(args.config)
            ref = cfg.path(cfg.io.reference or cfg.io.input)
            out = cfg.path(cfg.io.output)
            return cmd_eval([(ref, out)], args.out or out / "report.json")
        if not args.ref or len(args.ref) != len(args.est):
            raise ConfigError("eval needs --config or matching --ref/--est pairs")
        return cmd_eval(list(zip(args.ref, args.est)), args.out)

    try:
        cfg = load_config(args.config, args.seed)
    except OSError as exc:
        raise IOFailure(f"cannot read config: {exc}") from exc
    if args.command == "degrade":
        return cmd_degrade(cfg)
    if args.chains < 1:
        raise ConfigError("--chains must be >= 1")
    return cmd_run(cfg, args.chains)


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PNP_SGS_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"pnp-sgs: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IOFailure as exc:
        print(f"pnp-sgs: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ProtocolError as exc:
        print(f"pnp-sgs: denoiser protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except PnPSGSError as exc:
        print(f"pnp-sgs: sampler error: {exc}", file=sys.stderr)
        return EXIT_SAMPLER
    except OSError as exc:
        print(f"pnp-sgs: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
