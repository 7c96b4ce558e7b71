"""Single-level and three-level (coarse-to-fine) copy-move detection.

The fast path matches a subsampled source grid against the full-resolution
target, warm-starts the next finer level from it, and refines at full
resolution only inside the frames flagged at the intermediate level.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

import patchmatch3d
import postprocessing
import zernike
from patchmatch3d import MatchConfig, OffsetField
from postprocessing import DlfConfig
from video_io import MaskVolume, Video
from zernike import FeatureField

logger = logging.getLogger(__name__)

DEFAULT_STRIDE = 4
DEFAULT_REFINE_ITERATIONS = 2
DEFAULT_VOI_MARGIN = 5
DEFAULT_LEVEL1_ITERATIONS = 4
DEFAULT_LEVEL1_WINDOW_HALF = 2


@dataclass
class PyramidConfig:
    stride: int = DEFAULT_STRIDE
    refine_iterations: int = DEFAULT_REFINE_ITERATIONS
    voi_margin: int = DEFAULT_VOI_MARGIN
    level1_iterations: int = DEFAULT_LEVEL1_ITERATIONS
    level1_window_half: int = DEFAULT_LEVEL1_WINDOW_HALF

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.refine_iterations < 1 or self.level1_iterations < 1:
            raise ValueError("refine_iterations and level1_iterations must be >= 1")
        if self.voi_margin < 0:
            raise ValueError(f"voi_margin must be >= 0, got {self.voi_margin}")
        if self.level1_window_half < 1:
            raise ValueError(f"level1_window_half must be >= 1, got {self.level1_window_half}")


@dataclass
class VolumeOfInterest:
    """Frames selected for full-resolution refinement."""

    frames: tuple[int, ...]
    n_frames: int

    def mask(self, grid_shape) -> np.ndarray:
        active = np.zeros(grid_shape, dtype=bool)
        active[list(self.frames)] = True
        return active

    @property
    def empty(self) -> bool:
        return not self.frames


@dataclass
class DetectionResult:
    map: MaskVolume
    detected: bool
    pixel_count: int
    nnf: OffsetField | None = None
    features: FeatureField | None = None
    coarse_map: MaskVolume | None = None
    timings: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)


class _Stopwatch:
    def __init__(self):
        self.timings = {}
        self._wall = time.perf_counter()
        self._cpu = time.process_time()

    def lap(self, name: str) -> None:
        now = time.perf_counter()
        self.timings[name] = round(now - self._wall, 4)
        self._wall = now

    def cpu(self) -> float:
        return time.process_time() - self._cpu


def downsample(field: FeatureField, stride: int) -> FeatureField:
    """Keep every stride-th site along rows and columns; all frames kept."""
    return FeatureField(
        level=field.level + 1,
        stride=field.stride * stride,
        vectors=np.ascontiguousarray(field.vectors[:, ::stride, ::stride]),
        valid=np.ascontiguousarray(field.valid[:, ::stride, ::stride]),
    )


def _coarse_index(n_fine: int, n_coarse: int, stride: int) -> np.ndarray:
    return np.minimum(np.arange(n_fine) // stride, n_coarse - 1)


def upsample_field(coarse: OffsetField, stride: int, fine_shape) -> OffsetField:
    """Each fine site takes the offset of the coarse site whose cell contains it.

    Offsets are full-resolution already, so values copy unchanged; distances
    are left undefined (NaN) until the next matching run recomputes them.
    """
    n_t, n_r, n_c = fine_shape
    if n_t != coarse.shape[0]:
        raise ValueError(f"Frame counts differ: {n_t} vs {coarse.shape[0]}")
    ri = _coarse_index(n_r, coarse.shape[1], stride)
    ci = _coarse_index(n_c, coarse.shape[2], stride)
    offsets = coarse.offsets[:, ri][:, :, ci]
    return OffsetField(
        level=max(coarse.level - 1, 0),
        stride=max(coarse.stride // stride, 1),
        offsets=np.ascontiguousarray(offsets),
        distance=np.full(fine_shape, np.nan),
    )


def upsample_mask(mask: MaskVolume, stride: int, fine_shape) -> MaskVolume:
    ri = _coarse_index(fine_shape[1], mask.shape[1], stride)
    ci = _coarse_index(fine_shape[2], mask.shape[2], stride)
    return MaskVolume(mask.bits[:, ri][:, :, ci])


def volume_of_interest(mask: MaskVolume, margin: int) -> VolumeOfInterest:
    """Frames holding any detection, each widened by margin frames on both sides."""
    n_t = mask.shape[0]
    hit = np.flatnonzero(mask.bits.any(axis=(1, 2)))
    keep = np.zeros(n_t, dtype=bool)
    for t in hit:
        keep[max(0, t - margin) : min(n_t, t + margin + 1)] = True
    return VolumeOfInterest(frames=tuple(int(t) for t in np.flatnonzero(keep)), n_frames=n_t)


def level1_dlf(cfg: DlfConfig, pyr: PyramidConfig) -> DlfConfig:
    """Region and detection thresholds divided by S^2 for the level-1 grid."""
    area = pyr.stride**2
    return replace(
        cfg,
        window_half=pyr.level1_window_half,
        min_region_size=max(1, round(cfg.min_region_size / area)),
        detection_threshold=max(1, round(cfg.detection_threshold / area)),
    )


def _finish(video: Video, mask: MaskVolume, cfg: DlfConfig, watch: _Stopwatch, stats: dict, **kw) -> DetectionResult:
    verdict = postprocessing.decide(mask, cfg)
    watch.lap("decide")
    watch.timings["total"] = round(sum(watch.timings.values()), 4)
    cpu = watch.cpu()
    watch.timings["cpu_s"] = round(cpu, 4)
    watch.timings["cpu_s_per_mpixel"] = round(cpu / (video.samples.size / 1e6), 4)
    logger.info(
        f"[DETECT] {'detected' if verdict['detected'] else 'not detected'}: "
        f"{verdict['pixel_count']} pixels in {watch.timings['total']:.2f}s"
    )
    return DetectionResult(
        map=mask, detected=verdict["detected"], pixel_count=verdict["pixel_count"],
        timings=watch.timings, stats=stats, **kw,
    )


def detect_basic(video: Video, features_cfg, match_cfg: MatchConfig, dlf_cfg: DlfConfig, threads: int = 1) -> DetectionResult:
    """Full-resolution features, PatchMatch, post-processing and decision."""
    watch = _Stopwatch()
    f0 = zernike.extract_field(video, features_cfg, threads)
    watch.lap("features")
    nnf = patchmatch3d.run(f0, f0, match_cfg, threads=threads)
    watch.lap("match")
    post = postprocessing.postprocess(nnf, dlf_cfg, threads)
    watch.lap("postprocess")
    stats = {
        "sites": {"level0": int(f0.valid.sum())},
        "preliminary_sites": post.preliminary.count(),
        "removed_by_consistency": post.removed_by_consistency,
    }
    return _finish(video, post.map, dlf_cfg, watch, stats, nnf=nnf, features=f0)


def detect_multires(
    video: Video, features_cfg, match_cfg: MatchConfig, dlf_cfg: DlfConfig, pyr: PyramidConfig, threads: int = 1
) -> DetectionResult:
    """Three-level detection; an empty level-1 map ends the run as not detected."""
    watch = _Stopwatch()
    s = pyr.stride
    f0 = zernike.extract_field(video, features_cfg, threads)
    f1 = downsample(f0, s)
    f2 = downsample(f1, s)
    watch.lap("features")
    stats = {"sites": {"level2": int(f2.valid.sum()), "level1": int(f1.valid.sum())}}

    nnf2 = patchmatch3d.run(f2, f0, match_cfg, threads=threads)
    watch.lap("match_level2")
    warm1 = upsample_field(nnf2, s, f1.shape)
    nnf1 = patchmatch3d.run(
        f1, f0, replace(match_cfg, iterations=pyr.level1_iterations), initial=warm1, threads=threads
    )
    watch.lap("match_level1")
    post1 = postprocessing.postprocess(nnf1, level1_dlf(dlf_cfg, pyr), threads)
    m1_up = upsample_mask(post1.map, s, f0.shape)
    watch.lap("postprocess_level1")

    voi = volume_of_interest(post1.map, pyr.voi_margin)
    stats["voi_frames"] = list(voi.frames)
    if voi.empty:
        logger.info("[MULTIRES] Empty level-1 map, skipping level 0")
        stats["sites"]["level0"] = 0
        return _finish(video, MaskVolume.empty(f0.shape), dlf_cfg, watch, stats, nnf=nnf1, features=f0, coarse_map=m1_up)

    active = voi.mask(f0.shape)
    stats["sites"]["level0"] = int((f0.valid & active).sum())
    logger.info(f"[MULTIRES] Refining {len(voi.frames)}/{voi.n_frames} frames at full resolution")
    warm0 = upsample_field(nnf1, s, f0.shape)
    nnf0 = patchmatch3d.run(
        f0, f0, replace(match_cfg, iterations=pyr.refine_iterations, random_search=False),
        initial=warm0, active=active, threads=threads,
    )
    watch.lap("match_level0")
    post0 = postprocessing.postprocess(nnf0, dlf_cfg, threads)
    watch.lap("postprocess_level0")
    stats["preliminary_sites"] = post0.preliminary.count()
    stats["removed_by_consistency"] = post0.removed_by_consistency
    return _finish(video, post0.map, dlf_cfg, watch, stats, nnf=nnf0, features=f0, coarse_map=m1_up)


def detect(video: Video, run_cfg) -> DetectionResult:
    """Dispatch on run_cfg.mode: basic* runs one level, fast* the pyramid."""
    if run_cfg.mode.startswith("basic"):
        return detect_basic(video, run_cfg.features, run_cfg.matching, run_cfg.postprocessing, run_cfg.threads)
    return detect_multires(
        video, run_cfg.features, run_cfg.matching, run_cfg.postprocessing, run_cfg.pyramid, run_cfg.threads
    )
