"""Synthetic validation CLI: scenario manifest, detection per mode, scores, NNF oracle."""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
from pathlib import Path

import metrics
import multires
from config import MODES, load_config
from forgery_validation.oracle import nnf_oracle_check
from forgery_validation.scenarios import DEFAULT_DIMS, build_case, load_manifest, validation_dir, write_manifest
from video_io import save_mask

logger = logging.getLogger(__name__)


def _git_rev() -> str | None:
    try:
        return subprocess.check_output(
            ["git", "rev-parse", "HEAD"],
            cwd=Path(__file__).resolve().parent.parent,
            text=True,
            stderr=subprocess.DEVNULL,
        ).strip()
    except (OSError, subprocess.CalledProcessError):
        return None


def run_validation(
    out_dir: Path,
    modes: list[str],
    *,
    config_path: str | None = None,
    threads: int = 1,
    dims=DEFAULT_DIMS,
    skip_manifest: bool = False,
    write_manifest_only: bool = False,
    case_filter: list[str] | None = None,
    save_masks: bool = False,
    oracle_instances: int = 0,
) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    if not skip_manifest:
        write_manifest(out_dir, dims)
    if write_manifest_only:
        return out_dir / "scenario_manifest.json"

    manifest = load_manifest(out_dir)
    entries = manifest["entries"]
    if case_filter:
        entries = [e for e in entries if any(e["case"].startswith(p) for p in case_filter)]

    reports = {}
    results: list[dict] = []
    for mode in modes:
        cfg = load_config(config_path, mode=mode, threads=threads)
        items = []
        for entry in entries:
            logger.info(f"[VALIDATION] {mode}: {entry['case']}")
            video, gt = build_case(entry, manifest["dims"])
            det = multires.detect(video, cfg)
            sc = metrics.score(det.map, gt, detected=det.detected, cpu_s_per_mpixel=det.timings.get("cpu_s_per_mpixel"))
            items.append({"name": entry["case"], "score": sc})
            if save_masks:
                save_mask(det.map, out_dir / mode / entry["case"] / "masks")
            results.append(
                {
                    "mode": mode,
                    "case": entry["case"],
                    "score": sc.to_dict(),
                    "timings": det.timings,
                    "stats": det.stats,
                }
            )
        reports[mode] = metrics.batch_report(items)
        metrics.write_report_csv(reports[mode], out_dir / f"validation_{mode}.csv")
        s = reports[mode]["summary"]
        logger.info(
            f"[VALIDATION] {mode}: {s['detected']}/{s['forged']} detected, "
            f"{s['false_alarm']} false alarms, mean F {s['f_measure']}"
        )

    summary = {
        "command_line": sys.argv,
        "git_commit": _git_rev(),
        "manifest": str(out_dir / "scenario_manifest.json"),
        "modes": reports,
        "results": results,
    }
    if oracle_instances:
        summary["nnf_oracle"] = nnf_oracle_check(oracle_instances, threads=threads)
    out_path = out_dir / "validation_summary.json"
    out_path.write_text(json.dumps(summary, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return out_path


def main() -> None:
    ap = argparse.ArgumentParser(description="Synthetic copy-move validation (outputs under data/validation/).")
    ap.add_argument("--out", default=str(validation_dir()))
    ap.add_argument("--mode", action="append", choices=MODES, help="Repeatable (default: all four).")
    ap.add_argument("--config")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--dims", type=int, nargs=3, metavar=("T", "H", "W"), default=list(DEFAULT_DIMS))
    ap.add_argument("--case", action="append", metavar="PREFIX", help="Restrict to cases by name prefix; repeatable.")
    ap.add_argument("--skip-manifest", action="store_true", help="Reuse an existing scenario_manifest.json.")
    ap.add_argument("--write-manifest-only", action="store_true")
    ap.add_argument("--save-masks", action="store_true")
    ap.add_argument("--oracle", type=int, default=0, metavar="N", help="Also run N PatchMatch-vs-exhaustive instances.")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    out = run_validation(
        Path(args.out),
        args.mode or list(MODES),
        config_path=args.config,
        threads=args.threads,
        dims=tuple(args.dims),
        skip_manifest=args.skip_manifest,
        write_manifest_only=args.write_manifest_only,
        case_filter=args.case,
        save_masks=args.save_masks,
        oracle_instances=args.oracle,
    )
    print(out)


if __name__ == "__main__":
    main()
