"""Command-line entry point: ``fixsearch <subcommand> ...``.

Every subcommand writes its outputs plus a ``manifest.json`` into ``--out``.
Exit codes: 0 success, 1 usage/config error, 2 data error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, parallel
from .analysis import (DEFAULT_PAIR, SAMPLINGS, candidate_agreement, feature_correlation,
                       gaze_containment, read_gaze_csv)
from .errors import ConfigError, DataError, FormatError
from .gabor import GaborBankConfig, apply_bank, default_filters
from .glcm import GlcmConfig, glcm_at_points, glcm_feature_maps
from .imagio import load_image, save_feature_map, save_image, save_mask, save_overlay
from .peaks import CHANNEL_RULES, read_candidates_csv, write_candidates_csv
from .phantom import DENSITY_PRESETS, LesionSpec, PhantomSpec, generate, suite_spec
from .pipelines import PIPELINES, PeaksConfig, RunConfig, ThresholdConfig

log = logging.getLogger("fixsearch")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------- #
# Helpers
# --------------------------------------------------------------------------- #
def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


class Run:
    """Collects outputs, timings and warnings; writes the manifest last."""

    def __init__(self, command: str, out: Path, config=None, inputs=()):
        self.command = command
        self.out = out
        self.config = config
        self.inputs = [Path(p) for p in inputs if p is not None]
        self.warnings: list[str] = []
        self.timings: dict[str, float] = {}
        self.t0 = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out / name

    def finish(self) -> Path:
        self.timings["total"] = (time.perf_counter() - self.t0) * 1e3
        outputs = {}
        for p in sorted(self.out.rglob("*")):
            if p.is_file() and p.name != "manifest.json":
                outputs[p.relative_to(self.out).as_posix()] = sha256_file(p)
        manifest = {
            "tool_version": __version__,
            "command": self.command,
            "config": self.config,
            "inputs": {str(p): sha256_file(p) for p in self.inputs},
            "outputs": outputs,
            "timings_ms": self.timings,
            "warnings": self.warnings,
            "created": datetime.now(timezone.utc).isoformat(),
        }
        path = self.path("manifest.json")
        write_json(manifest, path)
        return path


# --------------------------------------------------------------------------- #
# Config assembly
# --------------------------------------------------------------------------- #
def _add_run_config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run config (flags override --config)")
    g.add_argument("--config", type=Path, help="JSON RunConfig")
    g.add_argument("--seed", type=int)
    g.add_argument("--levels", type=int, help="GLCM gray levels (default 128)")
    g.add_argument("--window", type=int, help="GLCM window side in pixels (default 100)")
    g.add_argument("--stride", type=int, help="GLCM window stride (default = window)")
    g.add_argument("--offset", type=int, nargs=2, metavar=("DX", "DY"), help="GLCM offset (default 1 0)")
    g.add_argument("--ws", type=float, help="Gabor envelope width for the default bank (default 50)")
    g.add_argument("--support", type=int, help="Gabor kernel side for the default bank")
    g.add_argument("--k-a", type=int, dest="k_a", help="pipeline A cluster count (default 5)")
    g.add_argument("--k-b", type=int, dest="k_b", help="pipeline B cluster count (default 3)")
    g.add_argument("--covariance", choices=("full", "diagonal"))
    g.add_argument("--margin", type=int)
    g.add_argument("--min-separation", type=float, dest="min_separation")
    g.add_argument("--rectify", action="store_true", default=None, help="search |response| for maxima")
    g.add_argument("--tau", type=float, help="absolute lower threshold")
    g.add_argument("--percentile", type=float, help="threshold at this percentile of initial scores")
    g.add_argument("--channel-rule", choices=CHANNEL_RULES, dest="channel_rule")
    g.add_argument("--lesion-hint", type=int, nargs=2, metavar=("X", "Y"), dest="lesion_hint")
    g.add_argument("--dump-config", action="store_true", help="print the resolved RunConfig and exit")


def build_run_config(args) -> RunConfig:
    base = {}
    if getattr(args, "config", None) is not None:
        try:
            base = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
    cfg = RunConfig.from_dict(base)

    glcm = cfg.glcm.to_dict()
    for key in ("levels", "window", "stride"):
        if getattr(args, key, None) is not None:
            glcm[key] = getattr(args, key)
    if getattr(args, "offset", None) is not None:
        glcm["offset"] = tuple(args.offset)
    cfg = replace(cfg, glcm=GlcmConfig(**glcm))

    if getattr(args, "ws", None) is not None or getattr(args, "support", None) is not None:
        ws = args.ws if args.ws is not None else cfg.gabor.filters[0].ws
        cfg = replace(cfg, gabor=GaborBankConfig(default_filters(ws, args.support)))
    if getattr(args, "k_a", None) is not None:
        cfg = replace(cfg, gmm_a=replace(cfg.gmm_a, k=args.k_a))
    if getattr(args, "k_b", None) is not None:
        cfg = replace(cfg, gmm_b=replace(cfg.gmm_b, k=args.k_b))
    if getattr(args, "covariance", None) is not None:
        cfg = replace(cfg, gmm_a=replace(cfg.gmm_a, covariance=args.covariance),
                      gmm_b=replace(cfg.gmm_b, covariance=args.covariance))

    peaks = {k: getattr(cfg.peaks, k) for k in ("margin", "min_separation", "rectify")}
    for key in peaks:
        if getattr(args, key, None) is not None:
            peaks[key] = getattr(args, key)
    cfg = replace(cfg, peaks=PeaksConfig(**peaks))

    th = {k: getattr(cfg.threshold, k) for k in ("tau", "percentile", "channel_rule")}
    for key in th:
        if getattr(args, key, None) is not None:
            th[key] = getattr(args, key)
    if getattr(args, "tau", None) is not None and getattr(args, "percentile", None) is None:
        th["percentile"] = None
    cfg = replace(cfg, threshold=ThresholdConfig(**th))

    if getattr(args, "lesion_hint", None) is not None:
        cfg = replace(cfg, lesion_hint=tuple(args.lesion_hint))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg.resolved()


# --------------------------------------------------------------------------- #
# Subcommands
# --------------------------------------------------------------------------- #
def _phantom_spec(args) -> PhantomSpec:
    lesion = None
    if not args.no_lesion:
        center = tuple(args.lesion_center) if args.lesion_center else (args.width // 2, args.height // 2)
        lesion = LesionSpec(center, args.radius, args.contrast, args.spicules)
    return PhantomSpec(width=args.width, height=args.height, seed=args.seed, n_blobs=args.n_blobs,
                       blob_sigma=args.blob_sigma, blob_amp=args.blob_amp,
                       density_class=args.density, noise_sigma=args.noise, lesion=lesion)


def cmd_phantom(args) -> int:
    spec = _phantom_spec(args)
    run = Run("phantom", args.out, spec.to_dict())
    img, truth = generate(spec)
    save_image(img, run.path("phantom.raw"))
    write_json(spec.to_dict() | {"truth": None if truth is None else truth.to_dict()},
               run.path("truth.json"))
    run.finish()
    return EXIT_OK


def cmd_glcm(args) -> int:
    cfg = build_run_config(args)
    if args.dump_config:
        print(json.dumps(cfg.glcm.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    img = load_image(args.image)
    run = Run("glcm", args.out, {"glcm": cfg.glcm.to_dict()}, [args.image, args.points])
    mean, contrast = glcm_feature_maps(img, cfg.glcm)
    save_feature_map(mean, run.path("glcm_mean.raw"), img.pitch_mm)
    save_feature_map(contrast, run.path("glcm_contrast.raw"), img.pitch_mm)
    if args.points is not None:
        pts = read_candidates_csv(args.points).xy()
        feats = glcm_at_points(img, pts, cfg.glcm)
        with open(run.path("points.csv"), "w") as fh:
            fh.write("x,y,glcm_mean,glcm_contrast\n")
            for (x, y), (m, c) in zip(pts, feats):
                fh.write(f"{x},{y},{m!r},{c!r}\n")
    run.finish()
    return EXIT_OK


def cmd_gabor(args) -> int:
    cfg = build_run_config(args)
    if args.dump_config:
        print(json.dumps(cfg.gabor.to_list(), indent=2, sort_keys=True))
        return EXIT_OK
    img = load_image(args.image)
    run = Run("gabor", args.out, {"gabor": cfg.gabor.to_list()}, [args.image])
    stack = apply_bank(img, cfg.gabor)
    for name, ch in zip(stack.names, stack.channels):
        save_feature_map(ch, run.path(f"{name}.raw"), img.pitch_mm)
    run.finish()
    return EXIT_OK


def _write_report(report, img, run: Run, overlay_radius: int) -> None:
    write_json(report.to_dict(), run.path("report.json"))
    write_candidates_csv(report.initial, run.path("initial.csv"))
    write_candidates_csv(report.final, run.path("final.csv"))
    if report.mask is not None:
        save_mask(report.mask.bits, run.path("mask.pgm"))
    if report.labels is not None:
        report.labels.write_csv(run.path("labels.csv"))
    if report.model is not None:
        write_json(report.model.to_dict(), run.path("gmm.json"))
    save_overlay(img, report.final, run.path("overlay.png"), overlay_radius)
    run.timings.update(report.timings)
    run.warnings.extend(report.warnings)


def cmd_pipeline(args) -> int:
    cfg = build_run_config(args)
    if args.dump_config:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    img = load_image(args.image)
    run = Run(args.command, args.out, cfg.to_dict(), [args.image, args.config])
    report = PIPELINES[args.command](img, cfg)
    _write_report(report, img, run, args.marker_radius)
    run.finish()
    return EXIT_OK


def cmd_correlate(args) -> int:
    cfg = build_run_config(args)
    if args.dump_config:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    run = Run("correlate", args.out, cfg.to_dict(), [*args.image, args.config])
    reports = []
    for path in args.image:
        rep = feature_correlation(load_image(path), cfg, tuple(args.pair), args.sampling)
        reports.append({"image": str(path), **rep.to_dict()})
    write_json({"reports": reports}, run.path("correlation.json"))
    run.finish()
    return EXIT_OK


def cmd_gaze(args) -> int:
    gaze = read_gaze_csv(args.gaze)
    cands = read_candidates_csv(args.candidates)
    params = {"radius": args.radius, "early_window_ms": args.early_window}
    run = Run("gaze", args.out, params, [args.gaze, args.candidates])
    frac = gaze_containment(gaze, cands, args.radius, args.early_window)
    write_json({"containment": frac, **params}, run.path("gaze.json"))
    run.finish()
    return EXIT_OK


def cmd_agree(args) -> int:
    a, b = read_candidates_csv(args.a), read_candidates_csv(args.b)
    run = Run("agree", args.out, {"tol": args.tol}, [args.a, args.b])
    write_json({"tol": args.tol, **candidate_agreement(a, b, args.tol)}, run.path("agreement.json"))
    run.finish()
    return EXIT_OK


def cmd_overlay(args) -> int:
    img = load_image(args.image)
    cands = read_candidates_csv(args.candidates)
    run = Run("overlay", args.out, {"marker_radius": args.marker_radius}, [args.image, args.candidates])
    save_overlay(img, cands, run.path(args.name), args.marker_radius)
    run.finish()
    return EXIT_OK


def _lesion_hit(report, truth) -> tuple[bool, tuple | None]:
    """Whether a final candidate lies within one radius; key of the nearest one."""
    xy = report.final.xy()
    if len(xy) == 0:
        return False, None
    d = np.hypot(xy[:, 0] - truth.center[0], xy[:, 1] - truth.center[1])
    i = int(np.argmin(d))
    if d[i] > truth.radius:
        return False, None
    return True, report.final.candidates[i].key


def run_suite_member(seed: int, cfg: RunConfig, out: Path | None = None,
                     overlay_radius: int = 3) -> dict:
    """All three pipelines on phantom ``seed`` with the lesion hint supplied."""
    img, truth = generate(suite_spec(seed))
    member_cfg = replace(cfg, lesion_hint=truth.center)
    row = {"seed": seed, "density_class": truth.density_class, "truth": truth.to_dict()}
    keys = {}
    finals = {}
    for name, fn in PIPELINES.items():
        report = fn(img, member_cfg)
        hit, key = _lesion_hit(report, truth)
        keys[name] = key
        finals[name] = report.final.keys()
        row[name] = {"hit": hit, "initial": len(report.initial), "final": len(report.final)}
        if out is not None:
            sub = out / f"seed_{seed:02d}" / name
            sub.mkdir(parents=True, exist_ok=True)
            write_json(report.to_dict(), sub / "report.json")
            write_candidates_csv(report.final, sub / "final.csv")
    if out is not None:
        save_image(img, out / f"seed_{seed:02d}" / "phantom.raw")
    a_key = keys["pipeline-a"]
    row["a_lesion_retained_by_b_and_thresh"] = (
        None if a_key is None else bool(a_key in finals["pipeline-b"] and a_key in finals["pipeline-thresh"]))
    row["tile_correlation"] = feature_correlation(img, member_cfg).to_dict()
    return row


def cmd_suite(args) -> int:
    cfg = build_run_config(args)
    if args.dump_config:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    seeds = list(range(args.seeds))
    run = Run("suite", args.out, cfg.to_dict() | {"seeds": seeds})
    rows = parallel.map_ordered(lambda s: run_suite_member(s, cfg, args.out), seeds)
    summary = {"members": rows}
    for name in PIPELINES:
        summary[f"{name}_hits"] = sum(r[name]["hit"] for r in rows)
    agree = [r["a_lesion_retained_by_b_and_thresh"] for r in rows
             if r["a_lesion_retained_by_b_and_thresh"] is not None]
    summary["cross_pipeline_agreement"] = sum(agree) / len(agree) if agree else None
    rs = [r["tile_correlation"]["r"] for r in rows]
    summary["tile_correlation_mean_r"] = float(np.mean(rs)) if rs else None
    summary["n"] = len(rows)
    write_json(summary, run.path("summary.json"))
    run.finish()
    return EXIT_OK


# --------------------------------------------------------------------------- #
# Parser
# --------------------------------------------------------------------------- #
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="fixsearch",
        description="Predict fixation candidates from GLCM texture and Gabor features.",
        epilog="Outputs and manifest.json go to --out. Exit codes: 0 ok, 1 usage/config, 2 data.")
    parser.add_argument("--version", action="version", version=f"fixsearch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--threads", type=int, help=f"worker threads (env {parallel.ENV_THREADS})")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("phantom", help="generate a synthetic lesion phantom")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--density", choices=sorted(DENSITY_PRESETS), default="scattered")
    p.add_argument("--n-blobs", type=int, default=PhantomSpec.n_blobs, dest="n_blobs")
    p.add_argument("--blob-sigma", type=float, default=PhantomSpec.blob_sigma, dest="blob_sigma")
    p.add_argument("--blob-amp", type=float, default=PhantomSpec.blob_amp, dest="blob_amp")
    p.add_argument("--noise", type=float, default=PhantomSpec.noise_sigma)
    p.add_argument("--lesion-center", type=int, nargs=2, metavar=("X", "Y"), dest="lesion_center")
    p.add_argument("--radius", type=float, default=LesionSpec.radius)
    p.add_argument("--contrast", type=float, default=LesionSpec.contrast)
    p.add_argument("--spicules", type=int, default=LesionSpec.spicules)
    p.add_argument("--no-lesion", action="store_true", dest="no_lesion")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("glcm", help="GLCM mean/contrast maps (and optional per-point CSV)")
    common(p)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--points", type=Path, help="candidate CSV whose x,y get per-point features")
    _add_run_config_args(p)
    p.set_defaults(func=cmd_glcm)

    p = sub.add_parser("gabor", help="Gabor bank feature maps")
    common(p)
    p.add_argument("--image", type=Path, required=True)
    _add_run_config_args(p)
    p.set_defaults(func=cmd_gabor)

    for name in PIPELINES:
        p = sub.add_parser(name, help=f"run {name}")
        common(p)
        p.add_argument("--image", type=Path, required=True)
        p.add_argument("--marker-radius", type=int, default=3, dest="marker_radius")
        _add_run_config_args(p)
        p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("correlate", help="Pearson r between two features")
    common(p)
    p.add_argument("--image", type=Path, nargs="+", required=True)
    p.add_argument("--pair", nargs=2, default=list(DEFAULT_PAIR), metavar=("A", "B"))
    p.add_argument("--sampling", choices=SAMPLINGS, default="per-tile")
    _add_run_config_args(p)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("gaze", help="fraction of observers whose early gaze hits a candidate")
    common(p)
    p.add_argument("--gaze", type=Path, required=True)
    p.add_argument("--candidates", type=Path, required=True)
    p.add_argument("--radius", type=float, default=25.0)
    p.add_argument("--early-window", type=float, default=2000.0, dest="early_window")
    p.set_defaults(func=cmd_gaze)

    p = sub.add_parser("agree", help="precision/recall between two candidate sets")
    common(p)
    p.add_argument("--a", type=Path, required=True)
    p.add_argument("--b", type=Path, required=True)
    p.add_argument("--tol", type=float, default=12.5)
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("overlay", help="burn candidate markers into an 8-bit render")
    common(p)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--candidates", type=Path, required=True)
    p.add_argument("--marker-radius", type=int, default=3, dest="marker_radius")
    p.add_argument("--name", default="overlay.png")
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("suite", help="all pipelines on the seeded phantom suite")
    common(p)
    p.add_argument("--seeds", type=int, default=20, help="run seeds 0..N-1")
    _add_run_config_args(p)
    p.set_defaults(func=cmd_suite)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", None) is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        print(f"usage: see '{parser.prog} --help'", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    previous = parallel._threads
    if args.threads is not None:
        parallel.set_threads(args.threads)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        parallel.set_threads(previous)


if __name__ == "__main__":
    sys.exit(main())
