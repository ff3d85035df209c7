"""Command-line interface.

Subcommands: synth, denoise, baseline, sweep, gap-curves, audit-masking,
metrics.  Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical
divergence.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from mash import __version__, seeds
from mash.config import (
    SWEEP_KEYS,
    build_config,
    load_config_file,
    parse_bool_list,
    parse_float_list,
)
from mash.errors import DivergenceError, ImageFormatError
from mash.harness import (
    AUDIT_COLUMNS,
    GAP_EPSILON_COLUMNS,
    GAP_TRACE_COLUMNS,
    SWEEP_COLUMNS,
    SweepSpec,
    gap_curves,
    masking_accuracy_audit,
    sweep,
    synth_noisy,
    write_csv,
)
from mash.image_io import load_image, save_image
from mash.metrics import psnr, ssim
from mash.noise import NoiseModel, sample_noise_fast
from mash.pipeline import run_baseline, run_mash

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DIVERGED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(ValueError):
    pass


def _add_common(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, help="root seed (overrides config)")
    p.add_argument("--out-dir", default=".", help="output directory")
    p.add_argument("--preset", choices=["desk", "ci"], default="desk")
    p.add_argument("--threads", type=int, help="torch CPU threads")


def build_parser() -> _Parser:
    parser = _Parser(prog="mash", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="add synthetic correlated noise to a clean image")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", help="noisy output path (default <out-dir>/noisy.mshf)")
    p.add_argument("--save-noise", help="also write the raw noise field here")

    p = sub.add_parser("denoise", help="full adaptive run on one noisy image")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--clean", help="ground truth for metrics")

    p = sub.add_parser("baseline", help="fixed masking-ratio run")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--clean")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--lps", action="store_true", help="shuffle flat regions at the split point")

    p = sub.add_parser("sweep", help="grid of fixed-ratio runs over (tau, beta)")
    _add_common(p)
    p.add_argument("--images", nargs="+", required=True, help="clean input images")
    p.add_argument("--taus", default="0.2,0.5,0.8")
    p.add_argument("--betas", default="0,1")
    p.add_argument("--lps-flags", default="0")
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--n-jobs", type=int, default=1)

    p = sub.add_parser("gap-curves", help="warm-up sigma traces per correlation level")
    _add_common(p)
    p.add_argument("--images", nargs="+", required=True, help="clean input images")
    p.add_argument("--betas", default="0,0.5,1")
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--k", type=int, default=3)

    p = sub.add_parser("audit-masking", help="adaptive-selection accuracy vs per-image argmax")
    _add_common(p)
    p.add_argument("--images", nargs="+", required=True, help="clean input images")
    p.add_argument("--betas", default="0,1")
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--k", type=int, default=3)

    p = sub.add_parser("metrics", help="PSNR/SSIM between two image files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    return parser


def _resolve_cfg(args):
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = build_config(args.preset, file_values, overrides)
    if args.threads:
        import torch

        torch.set_num_threads(args.threads)
    return cfg, file_values


def _grid_value(args, file_values, key, parser):
    # CLI default < config file < explicit CLI value; argparse cannot tell
    # default from explicit, so the config file only fills unset-looking keys
    value = getattr(args, key.replace("-", "_"), None)
    if key in file_values:
        return parser(file_values[key])
    return parser(value)


def _write_report(report, out_dir: Path):
    data = report.to_dict()
    with open(out_dir / "report.json", "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")
    rows = []
    for phase, trace in sorted(report.sigma_trace.items()):
        losses = report.loss_trace if phase == "final" else [""] * len(trace)
        for it, sig in enumerate(trace):
            rows.append({
                "phase": phase, "iter": it,
                "loss": losses[it] if it < len(losses) else "",
                "sigma_hat": sig,
            })
    write_csv(rows, ["phase", "iter", "loss", "sigma_hat"], out_dir / "traces.csv")


def _load_images(paths):
    return [(Path(p).stem, load_image(p)) for p in paths]


def _cmd_synth(args):
    cfg, _ = _resolve_cfg(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clean = load_image(args.input)
    model = NoiseModel(sigma=args.sigma, beta=args.beta, kernel_width=args.k)
    rng = seeds.stream_rng(cfg.seed, seeds.STREAM_NOISE)
    noise = sample_noise_fast(model, clean.shape[0], clean.shape[1], clean.shape[2], rng)
    noisy = clean + noise
    out = Path(args.out) if args.out else out_dir / "noisy.mshf"
    save_image(noisy, out)
    if args.save_noise:
        save_image(noise, args.save_noise, format="rawf32")
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_denoise(args):
    cfg, _ = _resolve_cfg(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    noisy = load_image(args.input)
    clean = load_image(args.clean) if args.clean else None
    denoised, report = run_mash(noisy, cfg, clean=clean, input_desc={"path": str(args.input)})
    save_image(denoised, out_dir / "denoised.mshf")
    save_image(denoised, out_dir / "denoised.png", format="png8")
    with open(out_dir / "gap_report.txt", "w") as fh:
        fh.write(report.gap.to_text())
    _write_report(report, out_dir)
    print(f"tau_optimal={report.gap.tau_optimal} shuffle={report.gap.shuffle_enabled} "
          f"epsilon={report.gap.epsilon:.3f}")
    if report.metrics:
        print(f"psnr={report.metrics['psnr']:.3f} ssim={report.metrics.get('ssim', float('nan')):.4f}")
    return EXIT_OK


def _cmd_baseline(args):
    cfg, _ = _resolve_cfg(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    noisy = load_image(args.input)
    clean = load_image(args.clean) if args.clean else None
    denoised, report = run_baseline(
        noisy, args.tau, cfg, clean=clean, lps=args.lps,
        input_desc={"path": str(args.input)},
    )
    save_image(denoised, out_dir / "denoised.mshf")
    save_image(denoised, out_dir / "denoised.png", format="png8")
    _write_report(report, out_dir)
    if report.metrics:
        print(f"psnr={report.metrics['psnr']:.3f}")
    return EXIT_OK


def _cmd_sweep(args):
    cfg, file_values = _resolve_cfg(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = SweepSpec(
        images=_load_images(args.images),
        taus=_grid_value(args, file_values, "taus", parse_float_list),
        betas=_grid_value(args, file_values, "betas", parse_float_list),
        lps_flags=_grid_value(args, file_values, "lps_flags", parse_bool_list),
        sigma=args.sigma,
        k=args.k,
        reps=args.reps,
        cfg=cfg,
        n_jobs=args.n_jobs,
    )
    rows = sweep(spec)
    path = out_dir / "sweep.csv"
    write_csv(rows, SWEEP_COLUMNS, path)
    failures = sum(1 for r in rows if r["status"] != "ok")
    print(f"wrote {path}: {len(rows)} rows, {failures} failures")
    return EXIT_OK


def _cmd_gap_curves(args):
    cfg, file_values = _resolve_cfg(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = _load_images(args.images)
    betas = _grid_value(args, file_values, "betas", parse_float_list)
    trace_rows, eps_rows = gap_curves(images, cfg, sigma=args.sigma, k=args.k, betas=betas)
    write_csv(trace_rows, GAP_TRACE_COLUMNS, out_dir / "gap_traces.csv")
    write_csv(eps_rows, GAP_EPSILON_COLUMNS, out_dir / "gap_epsilons.csv")
    for row in eps_rows:
        print(f"{row['image']} beta={row['beta']}: epsilon={row['epsilon']:.3f}")
    return EXIT_OK


def _cmd_audit(args):
    cfg, file_values = _resolve_cfg(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    betas = _grid_value(args, file_values, "betas", parse_float_list)
    cells = []
    for i_img, (name, clean) in enumerate(_load_images(args.images)):
        for beta in betas:
            noisy = synth_noisy(clean, args.sigma, beta, args.k, cfg.seed, i_img)
            cells.append((f"{name}_b{beta}", clean, noisy))
    accuracy, rows = masking_accuracy_audit(cells, cfg)
    write_csv(rows, AUDIT_COLUMNS, out_dir / "audit.csv")
    print(f"adaptive masking accuracy: {accuracy:.3f} ({len(rows)} cells)")
    return EXIT_OK


def _cmd_metrics(args):
    a = load_image(args.a)
    b = load_image(args.b)
    line = f"psnr={psnr(a, b)!r}"
    if min(a.shape[0], a.shape[1]) >= 11:
        line += f" ssim={ssim(a, b)!r}"
    print(line)
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "denoise": _cmd_denoise,
    "baseline": _cmd_baseline,
    "sweep": _cmd_sweep,
    "gap-curves": _cmd_gap_curves,
    "audit-masking": _cmd_audit,
    "metrics": _cmd_metrics,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ImageFormatError):
            print(f"I/O error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, FileNotFoundError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
