"""Command-line entry point.

One subcommand per experiment kind.  Each run resolves its configuration
from defaults, an optional INI file, and flags (flags win), executes the
experiment into the output directory, renders figures from the CSV
artifacts, and writes a manifest.  Outputs are byte-reproducible for a
fixed config and seed; the manifest is not (it records wall time).
"""

from __future__ import annotations

import argparse
import os
import sys
import time

from . import __version__, experiments, figures
from .config import EXPERIMENT_KINDS, config_text, load_config
from .errors import LfmControlError

_RUNNERS = {
    "spring-open-loop": experiments.run_spring_open_loop,
    "spring-control": experiments.run_spring_control,
    "heat-control": experiments.run_heat_control,
    "kernel-check": experiments.run_kernel_check,
    "certify": experiments.run_certify,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lfmcontrol",
        description=(
            "Latent force models in state-space form: learn unknown "
            "inputs from data, control through the learned model, and "
            "certify system properties."
        ),
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="kind", required=True, metavar="KIND")
    for kind in EXPERIMENT_KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", metavar="PATH", help="INI config file")
        p.add_argument(
            "--seed", type=int, metavar="N", help="override the noise seed"
        )
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument(
            "--no-figures",
            action="store_true",
            help="skip PNG rendering, write only CSV/JSON",
        )
        if kind == "heat-control":
            p.add_argument(
                "--snapshot-times",
                metavar="LIST",
                help="comma-separated field snapshot times",
            )
    return parser


def _overrides(args):
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.out is not None:
        out["out_dir"] = args.out
    if getattr(args, "snapshot_times", None) is not None:
        out["snapshot_times"] = tuple(
            float(v) for v in args.snapshot_times.replace(",", " ").split()
        )
    return out


def _render_figures(kind, cfg, result, out_dir):
    paths = []
    if kind == "spring-open-loop":
        paths.append(
            figures.render_open_loop(
                result["trajectory_csv"],
                os.path.join(out_dir, "open_loop.png"),
                meas_end=cfg.meas_end,
            )
        )
    elif kind == "spring-control":
        paths.append(
            figures.render_control(
                result["basic_csv"],
                result["lfm_csv"],
                os.path.join(out_dir, "control.png"),
                control_on=cfg.control_on,
            )
        )
    elif kind == "heat-control":
        paths.append(
            figures.render_heat_max_temp(
                result["max_temp_csv"],
                os.path.join(out_dir, "heat_max_temp.png"),
            )
        )
        for csv_path in result["snapshot_csvs"]:
            stem = os.path.splitext(os.path.basename(csv_path))[0]
            paths.append(
                figures.render_heat_snapshot(
                    csv_path, os.path.join(out_dir, stem + ".png")
                )
            )
    elif kind == "kernel-check":
        paths.append(
            figures.render_kernel(
                result["table_csv"], os.path.join(out_dir, "kernel.png")
            )
        )
    return paths


def _write_manifest(out_dir, cfg, wall_time):
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w") as fh:
        fh.write(f"library_version = {__version__}\n")
        fh.write(f"kind = {cfg.kind}\n")
        fh.write(f"seed = {cfg.seed}\n")
        fh.write(f"wall_time_seconds = {wall_time:.3f}\n")
        fh.write("\n# resolved configuration\n")
        fh.write(config_text(cfg))
    return path


def run(kind, cfg):
    """Execute one experiment with cleanup of partial outputs on failure."""
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    before = set(os.listdir(out_dir))
    try:
        return _RUNNERS[kind](cfg, out_dir)
    except BaseException:
        for name in set(os.listdir(out_dir)) - before:
            target = os.path.join(out_dir, name)
            if os.path.isfile(target):
                os.remove(target)
        raise


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(
            path=args.config, kind=args.kind, overrides=_overrides(args)
        )
        start = time.monotonic()
        result = run(args.kind, cfg)
        if not args.no_figures:
            _render_figures(args.kind, cfg, result, cfg.out_dir)
        _write_manifest(cfg.out_dir, cfg, time.monotonic() - start)
    except (LfmControlError, ValueError, OSError) as exc:
        print(f"lfmcontrol: error: {exc}", file=sys.stderr)
        return 1
    for key in ("summary_json", "report_json"):
        if key in result:
            print(result[key])
    return 0


if __name__ == "__main__":
    sys.exit(main())
