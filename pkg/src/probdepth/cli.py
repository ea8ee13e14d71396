"""Command-line entry point: ``probdepth {synth,pipeline,plotdata,selftest}``.

Exit codes: 0 success, 1 failed self-test, 2 usage or configuration error,
3 missing inputs, 4 reserved for numeric hard failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .costvolume import sid_candidates
from .fileio import load_grid, save_grid
from .metrics import abs_rel_error_map
from .pcvm import ProbabilityVolume
from .pipeline import FEATURE_FACTOR, MissingInputError, load_scene, metrics_summary, run_pipeline, write_run, \
    write_scene

EXIT_OK = 0
EXIT_SELFTEST_FAILED = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4

log = logging.getLogger("probdepth")


class UsageError(Exception):
    pass


def _preset(args) -> str | None:
    return "full" if getattr(args, "full_scale", False) else None


def cmd_synth(args) -> int:
    cfg = load_config(args.config, _preset(args))
    try:
        manifest = write_scene(cfg, args.out_dir)
    except OSError as exc:
        raise UsageError(f"cannot write scene to {args.out_dir}: {exc.strerror or exc}") from exc
    log.info("scene written: %s", manifest)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config, _preset(args))
    if args.fusion:
        cfg = cfg.with_fusion(args.fusion)
    scene = load_scene(args.scene_dir)
    result = run_pipeline(cfg, scene)
    try:
        manifest = write_run(result, cfg, args.scene_dir, args.out_dir)
    except OSError as exc:
        raise UsageError(f"cannot write run to {args.out_dir}: {exc.strerror or exc}") from exc
    for name, regions in metrics_summary(result.metrics).items():
        parts = ", ".join(f"{region} {v:.4f}" for region, v in regions.items() if v is not None)
        log.info("abs_rel %-8s %s", name, parts)
    log.info("run written: %s", manifest)
    return EXIT_OK


def _auto_probes(U: np.ndarray, valid: np.ndarray) -> list[tuple[int, int]]:
    """Cells with the highest and lowest uncertainty (first in raster order on ties)."""
    flat = np.where(valid, U, np.nan).ravel()
    if np.all(np.isnan(flat)):
        return []
    hi = int(np.nanargmax(flat))
    lo = int(np.nanargmin(flat))
    w = U.shape[1]
    return [(hi % w, hi // w), (lo % w, lo // w)]


def cmd_plotdata(args) -> int:
    run = Path(args.run_dir)
    manifest_path = run / "manifest.json"
    if not manifest_path.is_file():
        raise MissingInputError(f"{manifest_path}: not a pipeline run directory")
    roles = json.loads(manifest_path.read_text(encoding="utf-8"))["roles"]
    for role in ("p_single", "p_cv", "p_fused", "uncertainty_cv", "depth_gt"):
        if role not in roles or not (run / roles[role]).is_file():
            raise MissingInputError(f"run directory lacks {role}")
    hyp_cfg = json.loads((run / "run.json").read_text(encoding="utf-8"))["config"]["hypotheses"]
    hyp = sid_candidates(hyp_cfg["d_min"], hyp_cfg["d_max"], hyp_cfg["k"])

    gt = load_grid(run / roles["depth_gt"])
    h, w = gt.shape
    U = load_grid(run / roles["uncertainty_cv"])
    if args.probe:
        cells = []
        for x, y in args.probe:
            if not (0 <= x < w and 0 <= y < h):
                raise UsageError(f"probe ({x}, {y}) lies outside the {w}x{h} image")
            cells.append((min(x // FEATURE_FACTOR, U.width - 1), min(y // FEATURE_FACTOR, U.height - 1)))
    else:
        cells = _auto_probes(U.scalar, U.valid)

    out = Path(args.out) if args.out else run / "plotdata"
    out.mkdir(parents=True, exist_ok=True)
    vols = {name: ProbabilityVolume.load(run / roles[name]).normalize() for name in ("p_single", "p_cv", "p_fused")}
    with open(out / "probes.csv", "w", newline="") as f:
        summary = csv.writer(f, lineterminator="\n")
        summary.writerow(["cell_x", "cell_y", "uncertainty", "argmax_single", "argmax_cv", "argmax_fused", "file"])
        for cx, cy in cells:
            name = f"probe_{cx}_{cy}.csv"
            cols = [vols[v].probs[cy, cx] for v in ("p_single", "p_cv", "p_fused")]
            with open(out / name, "w", newline="") as g:
                writer = csv.writer(g, lineterminator="\n")
                writer.writerow(["index", "depth", "p_single", "p_cv", "p_fused"])
                for i, d in enumerate(hyp.values):
                    writer.writerow([i, f"{d:.10g}", *(f"{c[i]:.10g}" for c in cols)])
            summary.writerow([cx, cy, f"{U.scalar[cy, cx]:.10g}", *(int(np.argmax(c)) for c in cols), name])

    for role in ("depth_multi", "depth_cv", "depth_single", "depth_refined"):
        if role in roles:
            save_grid(out / f"error_{role.removeprefix('depth_')}.pfm",
                      abs_rel_error_map(load_grid(run / roles[role]), gt))
    log.info("plot data written to %s", out)
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    ok = run_selftest(args.seed, report=lambda line: print(line, file=sys.stderr))
    return EXIT_OK if ok else EXIT_SELFTEST_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probdepth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic scene directory")
    p.add_argument("config")
    p.add_argument("out_dir")
    p.add_argument("--full-scale", action="store_true", help="use the k=128, C=64 preset")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="estimate depth for a scene directory")
    p.add_argument("config")
    p.add_argument("scene_dir")
    p.add_argument("out_dir")
    p.add_argument("--fusion", choices=("wgm", "wam", "none"), help="override the configured fusion method")
    p.add_argument("--full-scale", action="store_true", help="use the k=128, C=64 preset")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("plotdata", help="export probe distributions and error maps from a run")
    p.add_argument("run_dir")
    p.add_argument("--probe", nargs=2, type=int, action="append", metavar=("X", "Y"),
                   help="full-resolution pixel to probe (repeatable); default: highest and lowest uncertainty")
    p.add_argument("--out", help="output directory (default RUN_DIR/plotdata)")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("selftest", help="run the built-in property checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s: %(message)s",
                        stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except MissingInputError as exc:
        log.error("%s", exc)
        return EXIT_MISSING
