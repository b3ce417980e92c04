"""Command-line entry point: train, sample, eval, plot, repro.

Configuration is resolved in three layers (defaults, then a flat
``key = value`` config file, then command-line flags) and the resolved view is
written as ``run.cfg`` into every output directory, so any run can be
reproduced from its artefacts alone. Master seed falls back to the
``NFSAILS_SEED`` environment variable when not given explicitly.

Numbers in CSV/JSON outputs are printed with 17 significant digits so files
round-trip float64 values exactly; identical resolved configs produce
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import svg
from .flow import CheckpointError, FlowModel, load_checkpoint, save_checkpoint
from .metrics import EvalReport, kl_knn, ks_2d, mean_log_likelihood, ood_fraction
from .rng import stream
from .samplers import SamplerConfig, naive_sample, nf_sails
from .targets import (
    DensityUnavailableError,
    GaussianMixtureTarget,
    level_set_threshold,
    parse_target,
)
from .train import TrainConfig, TrainingDivergedError, train

__all__ = ["main", "run"]

SEED_ENV_VAR = "NFSAILS_SEED"

DEFAULTS: dict = {
    "target": "mixture:k=2",
    "seed": 0,
    "epochs": 1000,
    "batch_size": 500,
    "lr": 1e-4,
    "n_train": 10_000,
    "n_layers": 4,
    "hidden": 16,
    "method": "sails",
    "n": 1000,
    "eps": 0.1,
    "p": 0.9,
    "burn_in": 1000,
    "proposal": "approx",
    "adapt_eps": False,
    "save_latent": False,
    "alpha": 0.975,
    "k_nn": 4,
    "metrics": "mll,kl,ks,ood",
    "levelset": -1.0,  # plot-only; negative disables the contour overlay
    "target_samples": 0,
    "k": 2,
}

TRAIN_KEYS = ("target", "seed", "epochs", "batch_size", "lr", "n_train", "n_layers", "hidden")
SAMPLE_KEYS = ("seed", "method", "n", "eps", "p", "burn_in", "proposal", "adapt_eps", "save_latent")
EVAL_KEYS = ("target", "seed", "alpha", "k_nn", "metrics")
PLOT_KEYS = ("target", "seed", "levelset", "target_samples")
REPRO_KEYS = (
    "k", "seed", "epochs", "batch_size", "lr", "n_train", "n_layers", "hidden",
    "n", "eps", "p", "burn_in", "proposal", "alpha", "k_nn",
)

METRIC_NAMES = ("mll", "kl", "ks", "ood")


class UsageError(Exception):
    """Bad flags, specs, or unreadable inputs; exits with code 2."""


class AppError(Exception):
    """Runtime failure (divergence, unavailable density, ...); exits with 1."""


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def _format_cfg_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _coerce(key: str, raw: str):
    kind = type(DEFAULTS[key])
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as err:
        raise UsageError(f"config value for {key!r}: {err}") from err


def parse_config_file(path: Path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    values: dict = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, eq, raw = stripped.partition("=")
        key = key.strip()
        if not eq or key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown or malformed entry {line!r}")
        values[key] = _coerce(key, raw)
    return values


def resolve_config(args: argparse.Namespace, keys: tuple[str, ...]) -> dict:
    cfg = {k: DEFAULTS[k] for k in keys}
    if getattr(args, "config", None):
        file_values = parse_config_file(Path(args.config))
        cfg.update({k: v for k, v in file_values.items() if k in keys})
    seed_from_cli_or_file = getattr(args, "seed", None) is not None or (
        "seed" in cfg and cfg["seed"] != DEFAULTS["seed"]
    )
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    if "seed" in keys and not seed_from_cli_or_file and SEED_ENV_VAR in os.environ:
        try:
            cfg["seed"] = int(os.environ[SEED_ENV_VAR])
        except ValueError as err:
            raise UsageError(f"{SEED_ENV_VAR}: {err}") from err
    return cfg


def write_run_cfg(outdir: Path, cfg: dict) -> None:
    lines = [f"{k} = {_format_cfg_value(v)}" for k, v in sorted(cfg.items())]
    (outdir / "run.cfg").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Exact-precision CSV/JSON writers
# ---------------------------------------------------------------------------


def _json_format(value, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [
            f'{pad}  {json.dumps(str(k))}: {_json_format(v, indent + 1)}'
            for k, v in value.items()
        ]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_json_format(v, indent) for v in value) + "]"
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "null"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return json.dumps(value)


def write_json(path: Path, payload: dict) -> None:
    path.write_text(_json_format(payload) + "\n")


def write_points_csv(path: Path, points: np.ndarray, names=("x0", "x1")) -> None:
    lines = [",".join(names)]
    lines += [",".join(format(v, ".17g") for v in row) for row in points]
    path.write_text("\n".join(lines) + "\n")


def read_points_csv(path: Path) -> np.ndarray:
    if not path.exists():
        raise UsageError(f"samples file not found: {path}")
    lines = path.read_text().splitlines()
    if len(lines) < 2:
        raise UsageError(f"samples file {path} has no data rows")
    try:
        return np.array(
            [[float(v) for v in line.split(",")] for line in lines[1:] if line],
            dtype=np.float64,
        )
    except ValueError as err:
        raise UsageError(f"samples file {path} is not parseable: {err}") from err


def _ensure_outdir(path_str: str) -> Path:
    outdir = Path(path_str)
    outdir.mkdir(parents=True, exist_ok=True)
    return outdir


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _parse_spec(text: str):
    try:
        return parse_target(text)
    except ValueError as err:
        raise UsageError(str(err)) from err


def _train_config(cfg: dict) -> TrainConfig:
    tc = TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["lr"],
        seed=cfg["seed"],
        n_train=cfg["n_train"],
        n_layers=cfg["n_layers"],
        hidden=cfg["hidden"],
    )
    try:
        tc.validate()
    except ValueError as err:
        raise UsageError(str(err)) from err
    return tc


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, TRAIN_KEYS)
    spec = _parse_spec(cfg["target"])
    tc = _train_config(cfg)
    outdir = _ensure_outdir(args.out)
    write_run_cfg(outdir, cfg)
    try:
        model, trace = train(spec, tc)
    except TrainingDivergedError as err:
        err.trace.write_csv(outdir / "trace.csv")
        raise AppError(str(err)) from err
    save_checkpoint(model, outdir / "model.ckpt")
    trace.write_csv(outdir / "trace.csv")
    if trace.nll:
        print(f"trained {cfg['target']}: nll {trace.nll[0]:.4f} -> {trace.nll[-1]:.4f}")
    else:
        print(f"wrote identity-initialised checkpoint for {cfg['target']}")
    return 0


def _load_model(path_str: str) -> FlowModel:
    path = Path(path_str)
    if not path.exists():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except CheckpointError as err:
        raise UsageError(str(err)) from err


def cmd_sample(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, SAMPLE_KEYS)
    cfg["ckpt"] = args.ckpt
    model = _load_model(args.ckpt)
    outdir = _ensure_outdir(args.out)
    write_run_cfg(outdir, cfg)
    if cfg["method"] == "naive":
        samples = naive_sample(model, cfg["n"], cfg["seed"])
        write_points_csv(outdir / "samples.csv", samples)
    elif cfg["method"] == "sails":
        sampler_cfg = SamplerConfig(
            eps=cfg["eps"],
            p=cfg["p"],
            n_samples=cfg["n"],
            burn_in=cfg["burn_in"],
            proposal_mode=cfg["proposal"],
            seed=cfg["seed"],
            adapt_eps=cfg["adapt_eps"],
        )
        try:
            sampler_cfg.validate()
        except ValueError as err:
            raise UsageError(str(err)) from err
        latent, samples, diag = nf_sails(model, sampler_cfg)
        write_points_csv(outdir / "samples.csv", samples)
        write_json(outdir / "diagnostics.json", diag.to_dict())
        if cfg["save_latent"]:
            write_points_csv(outdir / "latent.csv", latent, names=("z0", "z1"))
    else:
        raise UsageError(f"unknown sampling method {cfg['method']!r}")
    print(f"wrote {len(samples)} samples to {outdir / 'samples.csv'}")
    return 0


def _parse_metric_list(text: str) -> list[str]:
    names = [item.strip() for item in text.split(",") if item.strip()]
    for name in names:
        if name not in METRIC_NAMES:
            raise UsageError(
                f"unknown metric {name!r}; choose from {', '.join(METRIC_NAMES)}"
            )
    return names


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, EVAL_KEYS)
    cfg["samples"] = args.samples
    samples = read_points_csv(Path(args.samples))
    spec = _parse_spec(cfg["target"])
    names = _parse_metric_list(cfg["metrics"])
    report = EvalReport(n_samples=len(samples))
    fresh = spec.sample(len(samples), stream(cfg["seed"], "eval")) if names else None
    try:
        if "mll" in names:
            report.mean_log_likelihood = mean_log_likelihood(spec, samples)
        if "kl" in names:
            report.kl_knn = kl_knn(samples, fresh, k_nn=cfg["k_nn"])
        if "ks" in names:
            report.ks_stat = ks_2d(samples, fresh)
        if "ood" in names:
            report.ood_fraction = ood_fraction(
                spec, samples, alpha=cfg["alpha"], seed=cfg["seed"]
            )
    except DensityUnavailableError as err:
        raise AppError(str(err)) from err
    if args.diagnostics:
        diag_path = Path(args.diagnostics)
        if not diag_path.exists():
            raise UsageError(f"diagnostics file not found: {diag_path}")
        report.diagnostics = json.loads(diag_path.read_text())
    outdir = _ensure_outdir(args.out)
    write_run_cfg(outdir, cfg)
    write_json(outdir / "report.json", report.to_dict())
    for key, value in report.to_dict().items():
        if key != "diagnostics":
            print(f"{key}: {value}")
    return 0


def _contour_loops(spec: GaussianMixtureTarget, alpha: float, seed: int, resolution: int = 200):
    threshold = level_set_threshold(spec, alpha, seed=seed)
    xmin, xmax, ymin, ymax = spec.bounding_box()
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    grid_x, grid_y = np.meshgrid(xs, ys, indexing="ij")
    values = spec.log_density(np.stack([grid_x, grid_y], axis=-1))
    return svg.marching_squares(xs, ys, values, threshold)


def cmd_plot(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, PLOT_KEYS)
    cfg["samples"] = args.samples
    samples = read_points_csv(Path(args.samples))
    spec = _parse_spec(cfg["target"]) if cfg["target"] else None
    contours = None
    target_pts = None
    if spec is not None:
        if cfg["levelset"] > 0 and isinstance(spec, GaussianMixtureTarget):
            contours = _contour_loops(spec, cfg["levelset"], cfg["seed"])
        if cfg["target_samples"] > 0:
            target_pts = spec.sample(cfg["target_samples"], stream(cfg["seed"], "eval"))
    document = svg.render_scatter(samples, target_samples=target_pts, contours=contours)
    out_path = Path(args.out)
    try:
        if out_path.parent and not out_path.parent.exists():
            out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(document)
        write_run_cfg(out_path.parent if str(out_path.parent) else Path("."), cfg)
    except OSError as err:
        raise AppError(f"cannot write figure: {err}") from err
    print(f"wrote {out_path}")
    return 0


def cmd_repro(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, REPRO_KEYS)
    cfg["target"] = f"mixture:k={cfg['k']}"
    spec = _parse_spec(cfg["target"])
    tc = _train_config(cfg)
    outdir = _ensure_outdir(args.out)
    write_run_cfg(outdir, cfg)
    print(f"[repro] training on {cfg['target']} ...")
    try:
        model, trace = train(spec, tc)
    except TrainingDivergedError as err:
        err.trace.write_csv(outdir / "trace.csv")
        raise AppError(str(err)) from err
    save_checkpoint(model, outdir / "model.ckpt")
    trace.write_csv(outdir / "trace.csv")

    n = cfg["n"]
    print(f"[repro] sampling {n} points per method ...")
    naive = naive_sample(model, n, cfg["seed"])
    sampler_cfg = SamplerConfig(
        eps=cfg["eps"],
        p=cfg["p"],
        n_samples=n,
        burn_in=cfg["burn_in"],
        proposal_mode=cfg["proposal"],
        seed=cfg["seed"],
    )
    _, sails, diag = nf_sails(model, sampler_cfg)
    write_points_csv(outdir / "naive.csv", naive)
    write_points_csv(outdir / "sails.csv", sails)
    write_json(outdir / "diagnostics.json", diag.to_dict())

    fresh = spec.sample(n, stream(cfg["seed"], "eval"))
    rows = []
    for label, pts in (("naive", naive), ("nf-sails", sails)):
        rows.append(
            (
                label,
                mean_log_likelihood(spec, pts),
                kl_knn(pts, fresh, k_nn=cfg["k_nn"]),
                ks_2d(pts, fresh),
                ood_fraction(spec, pts, alpha=cfg["alpha"], seed=cfg["seed"]),
            )
        )
    header = f"{'method':<10} {'mean_log_lik':>14} {'kl_knn':>10} {'ks_stat':>10} {'ood_frac':>10}"
    lines = [header]
    for label, mll, kl, ks, ood in rows:
        lines.append(f"{label:<10} {mll:>14.4f} {kl:>10.4f} {ks:>10.4f} {ood:>10.4f}")
    table = "\n".join(lines)
    (outdir / "table.txt").write_text(table + "\n")
    print(table)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nfsails",
        description="Train coupling flows on 2D synthetic targets and sample "
        "them via latent-space MCMC.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help=f"master seed (default ${SEED_ENV_VAR} or 0)")

    p_train = sub.add_parser("train", help="fit a flow and write a checkpoint")
    common(p_train)
    p_train.add_argument("--target", help="target spec, e.g. mixture:k=2,r=4,sigma=0.3")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--n-train", dest="n_train", type=int)
    p_train.add_argument("--n-layers", dest="n_layers", type=int)
    p_train.add_argument("--hidden", type=int)
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_sample = sub.add_parser("sample", help="draw samples from a checkpoint")
    common(p_sample)
    p_sample.add_argument("--ckpt", required=True, help="checkpoint file")
    p_sample.add_argument("--method", choices=("naive", "sails"))
    p_sample.add_argument("--n", type=int)
    p_sample.add_argument("--eps", type=float)
    p_sample.add_argument("--p", type=float)
    p_sample.add_argument("--burn-in", dest="burn_in", type=int)
    p_sample.add_argument("--proposal", choices=("approx", "exact"))
    p_sample.add_argument("--adapt-eps", dest="adapt_eps", action="store_const", const=True)
    p_sample.add_argument("--save-latent", dest="save_latent", action="store_const", const=True)
    p_sample.add_argument("--out", required=True, help="output directory")
    p_sample.set_defaults(func=cmd_sample)

    p_eval = sub.add_parser("eval", help="score a samples CSV against a target")
    common(p_eval)
    p_eval.add_argument("--samples", required=True, help="samples CSV file")
    p_eval.add_argument("--target")
    p_eval.add_argument("--alpha", type=float)
    p_eval.add_argument("--k-nn", dest="k_nn", type=int)
    p_eval.add_argument("--metrics", help="comma list from mll,kl,ks,ood ('' for none)")
    p_eval.add_argument("--diagnostics", help="diagnostics JSON to pass through")
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.set_defaults(func=cmd_eval)

    p_plot = sub.add_parser("plot", help="render a samples CSV as an SVG figure")
    common(p_plot)
    p_plot.add_argument("--samples", required=True, help="samples CSV file")
    p_plot.add_argument("--target")
    p_plot.add_argument("--levelset", type=float, help="overlay this alpha level set")
    p_plot.add_argument("--target-samples", dest="target_samples", type=int)
    p_plot.add_argument("--out", required=True, help="output SVG file")
    p_plot.set_defaults(func=cmd_plot)

    p_repro = sub.add_parser(
        "repro", help="full pipeline for one mixture size; emits a comparison table"
    )
    common(p_repro)
    p_repro.add_argument("--k", type=int, help="mixture component count")
    p_repro.add_argument("--epochs", type=int)
    p_repro.add_argument("--batch-size", dest="batch_size", type=int)
    p_repro.add_argument("--lr", type=float)
    p_repro.add_argument("--n-train", dest="n_train", type=int)
    p_repro.add_argument("--n-layers", dest="n_layers", type=int)
    p_repro.add_argument("--hidden", type=int)
    p_repro.add_argument("--n", type=int)
    p_repro.add_argument("--eps", type=float)
    p_repro.add_argument("--p", type=float)
    p_repro.add_argument("--burn-in", dest="burn_in", type=int)
    p_repro.add_argument("--proposal", choices=("approx", "exact"))
    p_repro.add_argument("--alpha", type=float)
    p_repro.add_argument("--k-nn", dest="k_nn", type=int)
    p_repro.add_argument("--out", required=True, help="output directory")
    p_repro.set_defaults(func=cmd_repro)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except AppError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())
