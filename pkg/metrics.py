"""Localization scores (F-measure) and batch summaries of detection runs."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from video_io import MaskVolume

SUMMARY_NAME = "Σ,μ"
REPORT_COLUMNS = ["name", "forged", "detected", "false_alarm", "f_measure", "cpu_s_per_mpixel"]


@dataclass
class Score:
    tp: int
    fp: int
    tn: int
    fn: int
    f_measure: float
    detected: bool
    cpu_s_per_mpixel: float | None = None

    @property
    def forged(self) -> bool:
        """Ground truth marks at least one site."""
        return self.tp + self.fn > 0

    def to_dict(self) -> dict:
        return asdict(self)


def f_measure(tp: int, fp: int, fn: int) -> float:
    """2TP / (2TP + FP + FN); an empty map against empty truth scores 1."""
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0
    return 2 * tp / denom


def score(
    mask: MaskVolume, gt: MaskVolume, detected: bool | None = None, cpu_s_per_mpixel: float | None = None
) -> Score:
    if mask.shape != gt.shape:
        raise ValueError(f"Map {mask.shape} and ground truth {gt.shape} differ in shape")
    m, g = mask.bits, gt.bits
    tp = int(np.count_nonzero(m & g))
    fp = int(np.count_nonzero(m & ~g))
    fn = int(np.count_nonzero(~m & g))
    tn = int(m.size) - tp - fp - fn
    return Score(
        tp=tp, fp=fp, tn=tn, fn=fn,
        f_measure=f_measure(tp, fp, fn),
        detected=bool(tp + fp > 0) if detected is None else bool(detected),
        cpu_s_per_mpixel=cpu_s_per_mpixel,
    )


def report_row(name: str, sc: Score, false_alarm: bool = False) -> dict:
    """Table row; a detection on a pristine item counts as a false alarm."""
    return {
        "name": name,
        "forged": sc.forged,
        "detected": sc.detected,
        "false_alarm": bool(false_alarm or (sc.detected and not sc.forged)),
        "f_measure": sc.f_measure,
        "cpu_s_per_mpixel": sc.cpu_s_per_mpixel,
    }


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def batch_report(items: list[dict]) -> dict:
    """Per-item rows plus a summary row: detections, false alarms, mean F, mean time.

    Each item is {"name", "score": Score, optional "false_alarm": bool} where
    false_alarm carries the verdict on the item's pristine companion.
    """
    rows = [report_row(it["name"], it["score"], it.get("false_alarm", False)) for it in items]
    forged = [r for r in rows if r["forged"]]
    summary = {
        "name": SUMMARY_NAME,
        "forged": len(forged),
        "detected": sum(r["detected"] for r in forged),
        "false_alarm": sum(r["false_alarm"] for r in rows),
        # pristine-only batches fall back to all rows
        "f_measure": _mean(r["f_measure"] for r in forged or rows),
        "cpu_s_per_mpixel": _mean(r["cpu_s_per_mpixel"] for r in rows),
    }
    return {"rows": rows, "summary": summary}


def write_report_json(report: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(report, f, indent=2, ensure_ascii=False)
    return path


def write_report_csv(report: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in report["rows"] + [report["summary"]]:
            writer.writerow({k: row.get(k) for k in REPORT_COLUMNS})
    return path
