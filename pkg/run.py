"""Command-line entry point: detect, evaluate, forge and nnf.

    python run.py detect VIDEO --out DIR [--mode fast2d] [--config C.json]
    python run.py evaluate VIDEO --gt MASK_DIR [--out DIR]
    python run.py forge --spec SPEC.json --video VIDEO --out DIR
    python run.py nnf VIDEO --out nnf.bin

Exit codes: 0 success (also "not detected"), 2 config error, 3 I/O error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import forgegen
import metrics
import multires
import patchmatch3d
import zernike
from config import MODES, ConfigError, config_echo, load_config
from patchmatch3d import InvariantError
from video_io import load_mask, load_video, save_mask, save_overlays, save_video

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INVARIANT = 4


def _write_json(path: Path, data: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def _run_config(args):
    return load_config(args.config, mode=args.mode, threads=args.threads, seed=args.seed)


def _detect(args):
    cfg = _run_config(args)
    if args.dump_nnf:
        cfg.dump.nnf = True
    if args.dump_features:
        cfg.dump.features = True
    video = load_video(args.video, threads=cfg.threads)
    return cfg, video, multires.detect(video, cfg)


def detection_report(video_path, cfg, result) -> dict:
    """Report with a fixed key order; timings come last and hold all run-dependent values."""
    return {
        "video": str(video_path),
        "mode": cfg.mode,
        "detected": result.detected,
        "pixel_count": result.pixel_count,
        "stats": result.stats,
        "config": config_echo(cfg),
        "timings": result.timings,
    }


def cmd_detect(args) -> int:
    cfg, video, result = _detect(args)
    out = Path(args.out)
    save_mask(result.map, out / "masks")
    save_overlays(video, result.map, out / "overlays")
    if cfg.dump.nnf and result.nnf is not None:
        patchmatch3d.write_nnf_dump(result.nnf, out / "nnf.bin")
    if cfg.dump.features and result.features is not None:
        zernike.write_feature_dump(result.features, out / "features.bin")
    _write_json(out / "report.json", detection_report(args.video, cfg, result))
    print(f"[DETECT] {'detected' if result.detected else 'not detected'} ({result.pixel_count} pixels): {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg, video, result = _detect(args)
    gt = load_mask(args.gt)
    score = metrics.score(
        result.map, gt, detected=result.detected, cpu_s_per_mpixel=result.timings.get("cpu_s_per_mpixel")
    )
    report = {
        "video": str(args.video),
        "gt": str(args.gt),
        "mode": cfg.mode,
        "score": score.to_dict(),
        "config": config_echo(cfg),
        "timings": result.timings,
    }
    if args.out:
        out = Path(args.out)
        save_mask(result.map, out / "masks")
        save_overlays(video, result.map, out / "overlays", gt=gt)
        _write_json(out / "evaluation.json", report)
    print(json.dumps(report["score"], indent=2))
    return EXIT_OK


def cmd_forge(args) -> int:
    try:
        spec = forgegen.load_spec(args.spec)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{args.spec}: {e}") from e
    video = load_video(args.video)
    try:
        result = forgegen.apply_copy_move(video, spec)
    except ValueError as e:
        raise ConfigError(f"{args.spec}: {e}") from e
    out = Path(args.out)
    save_video(result.forged, out / "frames")
    save_mask(result.gt, out / "gt")
    forgegen.save_spec(spec, out / "spec.json")
    _write_json(out / "stats.json", result.stats)
    print(f"[FORGE] Saved forged video and ground truth: {out}")
    return EXIT_OK


def cmd_nnf(args) -> int:
    cfg = _run_config(args)
    video = load_video(args.video, threads=cfg.threads)
    features = zernike.extract_field(video, cfg.features, cfg.threads)
    field = patchmatch3d.run(features, features, cfg.matching, threads=cfg.threads)
    path = patchmatch3d.write_nnf_dump(field, args.out)
    print(f"[NNF] Saved: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description="Copy-move forgery detection in videos.")
    ap.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("video", help="Frame directory (PNG/PGM) or .y4m file.")
        p.add_argument("--config", help="JSON run configuration.")
        p.add_argument("--mode", choices=MODES, help="Algorithm variant (default basic2d).")
        p.add_argument("--threads", type=int)
        p.add_argument("--seed", type=int)

    p = sub.add_parser("detect", help="Detect and localize copy-moves.")
    common(p)
    p.add_argument("--out", required=True, help="Output directory (masks/, overlays/, report.json).")
    p.add_argument("--dump-nnf", action="store_true")
    p.add_argument("--dump-features", action="store_true")
    p.set_defaults(func=cmd_detect, dump_nnf=False, dump_features=False)

    p = sub.add_parser("evaluate", help="Detect and score against a ground-truth mask directory.")
    common(p)
    p.add_argument("--gt", required=True, help="Ground-truth mask directory.")
    p.add_argument("--out", help="Optional output directory.")
    p.set_defaults(func=cmd_evaluate, dump_nnf=False, dump_features=False)

    p = sub.add_parser("forge", help="Apply a copy-move spec to a video.")
    p.add_argument("--spec", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forge)

    p = sub.add_parser("nnf", help="Dump the full-resolution offset field.")
    common(p)
    p.add_argument("--out", required=True, help="Output .bin file.")
    p.set_defaults(func=cmd_nnf)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s"
    )
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        return EXIT_CONFIG
    except InvariantError as e:
        logger.error(f"Invariant violated: {e}")
        return EXIT_INVARIANT
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO
    except Exception as e:
        logger.error(f"Error: {e}")
        raise


if __name__ == "__main__":
    sys.exit(main())
