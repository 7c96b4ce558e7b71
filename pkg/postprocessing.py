"""Post-processing: offset field -> detection map.

Dense linear fitting (DLF) flags sites whose offsets are locally affine,
small 6-connected regions are dropped, and regions whose matches do not land
back inside the map are removed until nothing changes.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from patchmatch3d import OffsetField
from video_io import MaskVolume

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_HALF = 5
DEFAULT_ERROR_THRESHOLD = 1.5
DEFAULT_MIN_REGION_SIZE = 1000
DEFAULT_DETECTION_THRESHOLD = 20000
DEFAULT_KEEP_FRACTION = 0.5

# 6-connectivity in (t, r, c)
CONNECTIVITY = ndimage.generate_binary_structure(3, 1)
SINGULAR_DET = 1e-9


@dataclass
class DlfConfig:
    window_half: int = DEFAULT_WINDOW_HALF
    error_threshold: float = DEFAULT_ERROR_THRESHOLD
    min_region_size: int = DEFAULT_MIN_REGION_SIZE
    detection_threshold: int = DEFAULT_DETECTION_THRESHOLD
    keep_fraction: float = DEFAULT_KEEP_FRACTION
    recover_window: bool = True

    def __post_init__(self):
        if self.window_half < 1:
            raise ValueError(f"window_half must be >= 1 (3x3 window), got {self.window_half}")
        if self.error_threshold <= 0:
            raise ValueError(f"error_threshold must be positive, got {self.error_threshold}")
        if self.min_region_size < 1 or self.detection_threshold < 1:
            raise ValueError("min_region_size and detection_threshold must be positive")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError(f"keep_fraction must be in (0, 1], got {self.keep_fraction}")


@dataclass
class Region:
    label: int
    size: int
    bbox: tuple[slice, slice, slice]
    mean_offset: tuple[float, float, float]


@dataclass
class RegionLabeling:
    labels: np.ndarray  # (T, H, W) int32, 0 = background
    regions: list[Region] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.regions)


@dataclass
class PostprocessResult:
    error: np.ndarray
    preliminary: MaskVolume
    map: MaskVolume
    removed_by_consistency: int


def _frame_error(offsets: np.ndarray, ok: np.ndarray, size: int) -> np.ndarray:
    """Mean squared affine-fit residual per site of one frame, summed over (dr, dc, dt)."""
    n_r, n_c = ok.shape
    w = ok.astype(np.float64)

    def box(x):
        return ndimage.uniform_filter(x, size=size, mode="constant", cval=0.0)

    rr, cc = np.meshgrid(
        np.arange(n_r, dtype=np.float64) - n_r / 2, np.arange(n_c, dtype=np.float64) - n_c / 2, indexing="ij"
    )
    m0 = box(w)
    with np.errstate(divide="ignore", invalid="ignore"):
        mr = box(w * rr) / m0
        mc = box(w * cc) / m0
        crr = box(w * rr * rr) / m0 - mr * mr
        ccc = box(w * cc * cc) / m0 - mc * mc
        crc = box(w * rr * cc) / m0 - mr * mc
        det = crr * ccc - crc * crc
        err = np.zeros((n_r, n_c))
        for a in range(3):
            y = offsets[..., a].astype(np.float64)
            if ok.any():
                y = y - y[ok].mean()
            y = np.where(ok, y, 0.0)
            my = box(w * y) / m0
            cyy = box(w * y * y) / m0 - my * my
            cry = box(w * rr * y) / m0 - mr * my
            ccy = box(w * cc * y) / m0 - mc * my
            explained = (ccc * cry * cry - 2.0 * crc * cry * ccy + crr * ccy * ccy) / det
            err += np.maximum(cyy - explained, 0.0)
    # fewer than 3 supporting sites or collinear support
    n_sites = m0 * size * size
    bad = ~ok | (n_sites < 3 - 1e-6) | ~(det > SINGULAR_DET)
    err[bad] = np.inf
    return err


def dlf_error(field: OffsetField, cfg: DlfConfig, threads: int = 1) -> np.ndarray:
    """Per-site residual of a local affine fit of the offsets over a (2w+1)^2 window.

    Unmatchable sites neither contribute nor get a finite error. The window is
    truncated at the frame border.
    """
    size = 2 * cfg.window_half + 1
    ok = field.matchable
    out = np.empty(field.shape)

    def _frame(t):
        out[t] = _frame_error(field.offsets[t], ok[t], size)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        list(pool.map(_frame, range(field.shape[0])))
    return out


def remove_small_regions(bits: np.ndarray, min_size: int) -> np.ndarray:
    labels, n = ndimage.label(bits, structure=CONNECTIVITY)
    if n == 0:
        return bits.copy()
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_size
    keep[0] = False
    return keep[labels]


def preliminary_map(error: np.ndarray, cfg: DlfConfig) -> MaskVolume:
    """Low-error sites minus small components; survivors grow over their fitting window."""
    core = remove_small_regions(error <= cfg.error_threshold, cfg.min_region_size)
    if cfg.recover_window and core.any():
        size = 2 * cfg.window_half + 1
        grown = ndimage.maximum_filter(core, size=(1, size, size), mode="constant", cval=False)
        core = grown & np.isfinite(error)
    return MaskVolume(core)


def label_regions(mask: MaskVolume, field: OffsetField | None = None) -> RegionLabeling:
    labels, n = ndimage.label(mask.bits, structure=CONNECTIVITY)
    labels = labels.astype(np.int32)
    if n == 0:
        return RegionLabeling(labels)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    means = np.zeros((n + 1, 3))
    if field is not None:
        for a in range(3):
            means[:, a] = np.bincount(labels.ravel(), weights=field.offsets[..., a].ravel(), minlength=n + 1)
        means[1:] /= sizes[1:, None]
    regions = [
        Region(label=k, size=int(sizes[k]), bbox=bbox, mean_offset=tuple(float(v) for v in means[k]))
        for k, bbox in enumerate(ndimage.find_objects(labels), start=1)
    ]
    return RegionLabeling(labels, regions)


def _target_sites(field: OffsetField) -> np.ndarray:
    """Match targets mapped to the nearest site of the field's own grid."""
    tg = field.targets()
    n_t, n_r, n_c = field.shape
    out = np.empty_like(tg)
    out[..., 0] = np.clip(tg[..., 0], 0, n_t - 1)
    out[..., 1] = np.clip(np.floor(tg[..., 1] / field.stride + 0.5), 0, n_r - 1)
    out[..., 2] = np.clip(np.floor(tg[..., 2] / field.stride + 0.5), 0, n_c - 1)
    return out


def consistency_filter(mask: MaskVolume, field: OffsetField, cfg: DlfConfig) -> MaskVolume:
    """Keep a region while at least keep_fraction of its matches land inside the map.

    Repeats until no region is removed, since a removal can orphan another region.
    """
    labels, n = ndimage.label(mask.bits, structure=CONNECTIVITY)
    if n == 0:
        return MaskVolume(mask.bits.copy())
    tg = _target_sites(field)
    matchable = field.matchable
    flat = labels.ravel()
    sizes = np.bincount(flat, minlength=n + 1)
    alive = np.ones(n + 1, dtype=bool)
    alive[0] = False
    rounds = 0
    while True:
        rounds += 1
        bits = alive[labels]
        hit = bits[tg[..., 0], tg[..., 1], tg[..., 2]] & matchable
        inside = np.bincount(flat, weights=hit.ravel(), minlength=n + 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = inside / sizes
        drop = alive & (frac < cfg.keep_fraction)
        if not drop.any():
            break
        alive &= ~drop
    logger.debug(f"[DLF] consistency fixpoint after {rounds} rounds: {int(alive.sum())}/{n} regions kept")
    return MaskVolume(alive[labels])


def decide(mask: MaskVolume, cfg: DlfConfig, threshold: int | None = None) -> dict:
    """Detected iff the map holds strictly more than the detection threshold."""
    count = mask.count()
    limit = cfg.detection_threshold if threshold is None else threshold
    return {"detected": count > limit, "pixel_count": count}


def postprocess(field: OffsetField, cfg: DlfConfig, threads: int = 1) -> PostprocessResult:
    error = dlf_error(field, cfg, threads)
    prelim = preliminary_map(error, cfg)
    final = consistency_filter(prelim, field, cfg)
    removed = prelim.count() - final.count()
    logger.info(
        f"[DLF] level {field.level}: {prelim.count()} sites in preliminary map, "
        f"{final.count()} after consistency filter"
    )
    return PostprocessResult(error=error, preliminary=prelim, map=final, removed_by_consistency=removed)
