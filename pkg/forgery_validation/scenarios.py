"""Scenario manifest: forged and pristine synthetic videos (manifest inputs)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from forgegen import ForgerySpec, apply_copy_move, degrade, spec_from_dict, spec_to_dict, synth_texture
from video_io import MaskVolume, Video

# (T, H, W)
DEFAULT_DIMS = (60, 240, 320)
DEFAULT_SEEDS = (0, 1, 2)
PRISTINE_SEEDS = tuple(range(100, 110))

CLONE = {
    "center": (80, 90),
    "radius": 30,
    "frame_span": (10, 34),
    "displacement": (60, 40, 0),
}


def validation_dir(root="data") -> Path:
    return Path(root) / "validation"


def clone_spec(dims, **overrides) -> ForgerySpec:
    """The reference translation clone, scaled to the video dims."""
    n_t, n_r, n_c = dims
    sr, sc = n_r / DEFAULT_DIMS[1], n_c / DEFAULT_DIMS[2]
    st = n_t / DEFAULT_DIMS[0]
    base = {
        "center": (round(CLONE["center"][0] * sr), round(CLONE["center"][1] * sc)),
        "radius": max(4, round(CLONE["radius"] * min(sr, sc))),
        "frame_span": (round(CLONE["frame_span"][0] * st), round(CLONE["frame_span"][1] * st)),
        "displacement": (
            round(CLONE["displacement"][0] * sr),
            round(CLONE["displacement"][1] * sc),
            CLONE["displacement"][2],
        ),
    }
    base.update(overrides)
    return ForgerySpec(**base)


def build_manifest_entries(dims=DEFAULT_DIMS, seeds=DEFAULT_SEEDS, pristine_seeds=PRISTINE_SEEDS) -> list[dict]:
    """One entry per case: texture, seed, optional copy-move spec and degradation."""
    forged = [
        ("plain", {}, None),
        ("rotation_5", {"rotation_deg": 5.0}, None),
        ("rotation_25", {"rotation_deg": 25.0}, None),
        ("rotation_45", {"rotation_deg": 45.0}, None),
        ("flip", {"temporal_flip": True}, None),
        ("jpeg_q50", {}, {"kind": "per_frame_jpeg", "amount": 50}),
        ("noise_0.02", {}, {"kind": "additive_gaussian_noise", "amount": 0.02}),
    ]
    entries = []
    for seed in seeds:
        for name, overrides, degradation in forged:
            entries.append(
                {
                    "case": f"{name}_s{seed}",
                    "texture": "gaussian_blur_noise",
                    "seed": seed,
                    "spec": spec_to_dict(clone_spec(dims, **overrides)),
                    "degradation": degradation,
                }
            )
    for i, seed in enumerate(pristine_seeds):
        texture = "saturated_disc" if i == 0 else "gaussian_blur_noise"
        entries.append(
            {"case": f"pristine_{texture}_s{seed}", "texture": texture, "seed": seed, "spec": None, "degradation": None}
        )
    return entries


def write_manifest(out_dir: Path, dims=DEFAULT_DIMS, seeds=DEFAULT_SEEDS, pristine_seeds=PRISTINE_SEEDS) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "scenario_manifest.json"
    payload = {"dims": list(dims), "entries": build_manifest_entries(dims, seeds, pristine_seeds)}
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path


def load_manifest(out_dir: Path) -> dict:
    path = out_dir / "scenario_manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"Missing manifest: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def build_case(entry: dict, dims) -> tuple[Video, MaskVolume]:
    """Render one manifest entry; pristine cases get an empty ground truth."""
    rng = np.random.default_rng(entry["seed"])
    video = synth_texture(tuple(dims), entry["texture"], rng)
    gt = MaskVolume.empty(video.shape)
    if entry.get("spec"):
        result = apply_copy_move(video, spec_from_dict(entry["spec"]))
        video, gt = result.forged, result.gt
    deg = entry.get("degradation")
    if deg:
        video = degrade(video, deg["kind"], deg["amount"], np.random.default_rng(entry["seed"] + 1))
    return video, gt
