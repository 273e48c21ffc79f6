"""Command-line entry point: ``isomesh <command> ...``.

Exit codes: 0 success, 1 usage error, 2 I/O or parse error, 3 pipeline failure.
Set ISOMESH_LOG to a logging level (DEBUG, INFO, WARNING, ...) for verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import PROFILES, PipelineConfig
from .fileio import MeshFormatError, load_cloud, load_mesh, save_cloud, save_mesh
from .fixtures import SHAPES, fixture_truth, make_fixture
from .geometry import build_icosphere
from .metrics import NoiseSpec, add_noise, pm_report
from .pipeline import PipelineError, run_pipeline

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_PIPELINE = 0, 1, 2, 3

log = logging.getLogger("isomesh")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# name on the command line -> PipelineConfig field
CONSTANT_FLAGS = {
    "frequency": ("reference_frequency", int),
    "tau_a": ("tau_a", float),
    "beta1": ("beta1", float),
    "beta2": ("beta2", float),
    "beta3": ("beta3", float),
    "alpha": ("alpha", float),
    "n1": ("n1", int),
}


def _tau_e(text: str):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a number or 'auto'") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="isomesh", description="Fit a fixed-connectivity sphere mesh to a point cloud.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-ref", help="write the icosphere reference mesh")
    g.add_argument("frequency", type=int, help="subdivision frequency (1..64); 16 gives 2,562 vertices")
    g.add_argument("--radius", type=float, default=1.0)
    g.add_argument("--out", required=True)

    f = sub.add_parser("make-fixture", help="sample an analytic shape as a point cloud")
    f.add_argument("shape", choices=SHAPES)
    f.add_argument("count", type=int)
    f.add_argument("--scale", type=float, default=1.0)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.add_argument("--truth", help="also write a dense ground-truth mesh of the shape here")

    n = sub.add_parser(
        "add-noise",
        help="perturb a cloud",
        description="delta is read as the percentage of points perturbed; each chosen point gets an "
        "independent uniform offset in [-sigma, sigma] per coordinate.",
    )
    n.add_argument("cloud")
    n.add_argument("--delta", type=float, required=True, help="percentage of points perturbed")
    n.add_argument("--sigma", type=float, required=True, help="offset bound, in cloud units")
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--out", required=True)

    t = sub.add_parser("fit", help="run the three-stage fit")
    t.add_argument("cloud")
    t.add_argument("--config", help="JSON config file (defaults to the chosen profile)")
    t.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", type=int)
    t.add_argument("--threads", type=int, default=1)
    for flag, (_, typ) in CONSTANT_FLAGS.items():
        t.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ)
    t.add_argument("--tau-e", dest="tau_e", type=_tau_e, help="fit tolerance in cloud units, or 'auto'")
    t.add_argument("--global-epochs", type=int)
    t.add_argument("--local-epochs", type=int, help="epochs per phase for coarse and fine regions")
    t.add_argument("--write-config", action="store_true", help="also save the effective config as config.json")

    e = sub.add_parser("evaluate", help="PM distance between a mesh and a ground-truth mesh")
    e.add_argument("mesh")
    e.add_argument("truth")
    e.add_argument("--csv", help="per-vertex distance report (default: <mesh>.pm.csv)")
    return p


def _setup_logging() -> None:
    level = os.environ.get("ISOMESH_LOG", "WARNING").upper()
    logging.basicConfig(
        level=int(level) if level.isdigit() else getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _cmd_gen_ref(args) -> int:
    if not 1 <= args.frequency <= 64:
        raise UsageError("frequency must lie in 1..64")
    mesh = build_icosphere(args.frequency, args.radius)
    save_mesh(mesh, args.out)
    print(f"{mesh.n_vertices} vertices, {mesh.n_patches} patches -> {args.out}")
    return EXIT_OK


def _cmd_make_fixture(args) -> int:
    if args.count < 1:
        raise UsageError("count must be positive")
    pts = make_fixture(args.shape, args.count, seed=args.seed, scale=args.scale)
    save_cloud(pts, args.out)
    if args.truth:
        save_mesh(fixture_truth(args.shape, args.scale), args.truth)
    print(f"{len(pts)} points on a {args.shape} -> {args.out}")
    return EXIT_OK


def _cmd_add_noise(args) -> int:
    try:
        spec = NoiseSpec(args.delta, args.sigma, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    pts = load_cloud(args.cloud)
    noisy = add_noise(pts, spec)
    save_cloud(noisy, args.out)
    moved = int(np.any(noisy != pts, axis=1).sum())
    print(f"delta={spec.delta:g}% of points perturbed ({moved} of {len(pts)}), "
          f"per-coordinate offsets uniform in [-{spec.sigma:g}, {spec.sigma:g}] -> {args.out}")
    return EXIT_OK


def _fit_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PROFILES[args.profile]()
    over = {field: getattr(args, flag) for flag, (field, _) in CONSTANT_FLAGS.items()}
    over["tau_e"] = args.tau_e
    over["seed"] = args.seed
    try:
        cfg = cfg.with_overrides(**over)
        if args.global_epochs is not None:
            cfg = replace(cfg, global_train=replace(cfg.global_train, epochs=args.global_epochs))
        if args.local_epochs is not None:
            cfg = replace(
                cfg,
                coarse_train=replace(cfg.coarse_train, epochs=args.local_epochs),
                fine_train=replace(cfg.fine_train, epochs=args.local_epochs),
            )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _cmd_fit(args) -> int:
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    cfg = _fit_config(args)
    pts = load_cloud(args.cloud)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.write_config:
        cfg.save(out / "config.json")
    try:
        res = run_pipeline(pts, cfg, out_dir=out, threads=args.threads)
    except PipelineError as exc:
        print(f"error: {exc} (see {out / 'report.json'})", file=sys.stderr)
        return EXIT_PIPELINE
    print(f"R1/R2/R3 written to {out}; N_F={res.report['N_F']}, blocks={res.report['block_count']}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    R = load_mesh(args.mesh)
    G = load_mesh(args.truth)
    rep = pm_report(R, G)
    csv_path = args.csv or str(args.mesh) + ".pm.csv"
    rep.write_csv(csv_path)
    print(f"PM distance: {rep.pm_distance:#.4g}")
    print(f"mean mesh->truth: {rep.mean_to_truth:.4g}  mean truth->mesh: {rep.mean_to_mesh:.4g}")
    return EXIT_OK


COMMANDS = {
    "gen-ref": _cmd_gen_ref,
    "make-fixture": _cmd_make_fixture,
    "add-noise": _cmd_add_noise,
    "fit": _cmd_fit,
    "evaluate": _cmd_evaluate,
}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, MeshFormatError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        # malformed config contents
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
