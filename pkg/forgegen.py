"""Synthetic copy-move forgeries with exact ground truth, plus test textures and degradations."""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from video_io import MaskVolume, Video

logger = logging.getLogger(__name__)

SHAPES = ("cylinder", "box")
KINDS = ("additive", "occlusive")
GT_MODES = ("both", "destination")
TEXTURES = ("gaussian_blur_noise", "tiles", "gradient", "saturated_disc")
DEGRADATIONS = ("additive_gaussian_noise", "per_frame_jpeg")

DEFAULT_FEATHER = 2.0
DEFAULT_BLUR_SIGMA = 2.0
DEFAULT_TEMPORAL_SIGMA = 2.0
DEFAULT_TILE = 16


@dataclass
class ForgerySpec:
    """Copy of a cylinder/box region to center + displacement.

    frame_span is inclusive. The region is rotated by rotation_deg about its
    own centre and optionally played backwards in time.
    """

    center: tuple[int, int]
    radius: int
    frame_span: tuple[int, int]
    displacement: tuple[int, int, int]  # (dr, dc, dt)
    shape: str = "cylinder"
    rotation_deg: float = 0.0
    temporal_flip: bool = False
    kind: str = "additive"
    feather: float = DEFAULT_FEATHER
    gt_mode: str = "both"

    def __post_init__(self):
        self.center = tuple(int(v) for v in self.center)
        self.frame_span = tuple(int(v) for v in self.frame_span)
        self.displacement = tuple(int(v) for v in self.displacement)
        if len(self.center) != 2 or len(self.frame_span) != 2 or len(self.displacement) != 3:
            raise ValueError("center needs 2, frame_span 2 and displacement 3 values")
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")
        if self.frame_span[1] < self.frame_span[0]:
            raise ValueError(f"frame_span {self.frame_span} is empty")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}, got {self.shape!r}")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.gt_mode not in GT_MODES:
            raise ValueError(f"gt_mode must be one of {GT_MODES}, got {self.gt_mode!r}")
        if self.feather < 0 or self.feather >= self.radius:
            raise ValueError(f"feather must be in [0, radius), got {self.feather}")

    @property
    def depth(self) -> int:
        return self.frame_span[1] - self.frame_span[0] + 1

    @property
    def dest_center(self) -> tuple[int, int]:
        return self.center[0] + self.displacement[0], self.center[1] + self.displacement[1]

    @property
    def dest_span(self) -> tuple[int, int]:
        dt = self.displacement[2]
        return self.frame_span[0] + dt, self.frame_span[1] + dt


@dataclass
class ForgeryResult:
    forged: Video
    gt: MaskVolume
    stats: dict


def spec_to_dict(spec: ForgerySpec) -> dict:
    d = asdict(spec)
    for k in ("center", "frame_span", "displacement"):
        d[k] = list(d[k])
    return d


def spec_from_dict(d: dict) -> ForgerySpec:
    known = {f.name for f in fields(ForgerySpec)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"Unknown forgery spec keys: {sorted(unknown)}")
    try:
        return ForgerySpec(**d)
    except TypeError as e:
        raise ValueError(f"Invalid forgery spec: {e}") from e


def save_spec(spec: ForgerySpec, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(spec_to_dict(spec), indent=2))
    return path


def load_spec(path) -> ForgerySpec:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Forgery spec not found: {path}")
    return spec_from_dict(json.loads(path.read_text()))


def _region_distance(shape: str, rows, cols, center) -> np.ndarray:
    dr = rows - center[0]
    dc = cols - center[1]
    if shape == "cylinder":
        return np.hypot(dr, dc)
    return np.maximum(np.abs(dr), np.abs(dc))


def _check_inside(spec: ForgerySpec, dims) -> None:
    n_t, n_r, n_c = dims
    rad = spec.radius
    for name, (r, c), (t0, t1) in (
        ("source", spec.center, spec.frame_span),
        ("destination", spec.dest_center, spec.dest_span),
    ):
        if r - rad < 0 or c - rad < 0 or r + rad >= n_r or c + rad >= n_c or t0 < 0 or t1 >= n_t:
            raise ValueError(f"{name} region (center {(r, c)}, radius {rad}, frames {t0}-{t1}) leaves the video {dims}")


def _overlaps(spec: ForgerySpec) -> bool:
    dr, dc, dt = spec.displacement
    if abs(dt) > spec.frame_span[1] - spec.frame_span[0]:
        return False
    limit = 2 * spec.radius
    if spec.shape == "cylinder":
        return math.hypot(dr, dc) <= limit
    return max(abs(dr), abs(dc)) <= limit


def region_mask(spec: ForgerySpec, dims, destination: bool = False) -> np.ndarray:
    n_t, n_r, n_c = dims
    center = spec.dest_center if destination else spec.center
    t0, t1 = spec.dest_span if destination else spec.frame_span
    rows, cols = np.mgrid[0:n_r, 0:n_c]
    disc = _region_distance(spec.shape, rows, cols, center) <= spec.radius
    out = np.zeros(dims, dtype=bool)
    out[t0 : t1 + 1] = disc
    return out


def forgery_stats(dest: np.ndarray) -> dict:
    """Max equivalent radius over frames and max per-pixel temporal depth of a region."""
    area = dest.sum(axis=(1, 2))
    depth = dest.sum(axis=0)
    return {
        "rho_max": float(math.sqrt(area.max() / math.pi)) if area.size else 0.0,
        "d_max": int(depth.max()) if depth.size else 0,
    }


def apply_copy_move(video: Video, spec: ForgerySpec, rng: np.random.Generator | None = None) -> ForgeryResult:
    """Paste the (rotated, possibly reversed) source region at the destination.

    A linear alpha ramp over the last `feather` pixels of the radius blends the
    copy into the host; inside the ramp the copy replaces the host exactly.
    """
    dims = video.shape
    _check_inside(spec, dims)
    if _overlaps(spec):
        raise ValueError(f"Source and destination regions overlap (displacement {spec.displacement})")

    forged = video.samples.copy()
    n_t, n_r, n_c = dims
    dr, dc, dt = spec.displacement
    (t0, t1), (d0, _) = spec.frame_span, spec.dest_span
    rc, cc = spec.dest_center
    rad = spec.radius
    pad = rad + 1
    r_lo, r_hi = max(0, rc - pad), min(n_r, rc + pad + 1)
    c_lo, c_hi = max(0, cc - pad), min(n_c, cc + pad + 1)
    rows, cols = np.mgrid[r_lo:r_hi, c_lo:c_hi]
    dist = _region_distance(spec.shape, rows, cols, (rc, cc))
    if spec.feather > 0:
        alpha = np.clip((rad - dist) / spec.feather, 0.0, 1.0)
    else:
        alpha = (dist <= rad).astype(np.float64)

    theta = math.radians(spec.rotation_deg)
    # destination offset rotated back into the source frame of reference
    yr, xr = rows - rc, cols - cc
    src_r = spec.center[0] + math.cos(theta) * yr + math.sin(theta) * xr
    src_c = spec.center[1] - math.sin(theta) * yr + math.cos(theta) * xr

    for k in range(spec.depth):
        src_t = t1 - k if spec.temporal_flip else t0 + k
        dst_t = d0 + k
        if spec.rotation_deg == 0:
            patch = video.samples[src_t, r_lo - dr : r_hi - dr, c_lo - dc : c_hi - dc]
        else:
            patch = ndimage.map_coordinates(video.samples[src_t], [src_r, src_c], order=1, mode="nearest")
        host = forged[dst_t, r_lo:r_hi, c_lo:c_hi]
        forged[dst_t, r_lo:r_hi, c_lo:c_hi] = np.where(alpha > 0, (1.0 - alpha) * host + alpha * patch, host)

    dest = region_mask(spec, dims, destination=True)
    gt = dest | region_mask(spec, dims) if spec.gt_mode == "both" else dest
    stats = forgery_stats(dest)
    logger.info(
        f"[FORGE] {spec.kind} copy-move: displacement {spec.displacement}, rotation {spec.rotation_deg}, "
        f"flip {spec.temporal_flip}, rho_max {stats['rho_max']:.1f}, d_max {stats['d_max']}"
    )
    return ForgeryResult(forged=Video(np.clip(forged, 0.0, 1.0)), gt=MaskVolume(gt), stats=stats)


def _normalize(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.full_like(x, 0.5)
    return (x - lo) / (hi - lo)


def synth_texture(
    dims, kind: str = "gaussian_blur_noise", rng: np.random.Generator | None = None,
    sigma: float = DEFAULT_BLUR_SIGMA, temporal_sigma: float = DEFAULT_TEMPORAL_SIGMA, tile: int = DEFAULT_TILE,
) -> Video:
    """Deterministic test substrate of shape (T, H, W)."""
    n_t, n_r, n_c = dims
    rng = rng if rng is not None else np.random.default_rng(0)
    if kind in ("gaussian_blur_noise", "saturated_disc"):
        noise = rng.standard_normal((n_t, n_r, n_c))
        samples = _normalize(ndimage.gaussian_filter(noise, sigma=(temporal_sigma, sigma, sigma), mode="reflect"))
        if kind == "saturated_disc":
            rows, cols = np.mgrid[0:n_r, 0:n_c]
            disc = np.hypot(rows - (n_r - 1) / 2, cols - (n_c - 1) / 2) <= min(n_r, n_c) / 4
            samples[:, disc] = 1.0
    elif kind == "tiles":
        levels = rng.random((-(-n_r // tile), -(-n_c // tile)))
        frame = np.kron(levels, np.ones((tile, tile)))[:n_r, :n_c]
        samples = np.repeat(frame[None], n_t, axis=0)
    elif kind == "gradient":
        t, r, c = np.meshgrid(np.arange(n_t), np.arange(n_r), np.arange(n_c), indexing="ij")
        denom = (n_r - 1) + (n_c - 1) + (n_t - 1)
        samples = (r + c + t) / denom if denom else np.zeros(dims)
    else:
        raise ValueError(f"texture kind must be one of {TEXTURES}, got {kind!r}")
    return Video(np.ascontiguousarray(samples, dtype=np.float64))


def _jpeg_frame(frame: np.ndarray, quality: int) -> np.ndarray:
    buf = io.BytesIO()
    Image.fromarray(np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)).save(buf, format="JPEG", quality=quality)
    buf.seek(0)
    with Image.open(buf) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


def degrade(video: Video, kind: str, amount: float, rng: np.random.Generator | None = None) -> Video:
    """additive_gaussian_noise (amount = sigma) or per_frame_jpeg (amount = quality), clamped to [0, 1]."""
    if kind == "additive_gaussian_noise":
        if amount < 0:
            raise ValueError(f"noise sigma must be >= 0, got {amount}")
        if amount == 0:
            return Video(video.samples.copy())
        rng = rng if rng is not None else np.random.default_rng(0)
        noisy = video.samples + rng.normal(0.0, amount, size=video.shape)
        return Video(np.clip(noisy, 0.0, 1.0))
    if kind == "per_frame_jpeg":
        quality = int(amount)
        if not 1 <= quality <= 100:
            raise ValueError(f"JPEG quality must be in 1..100, got {amount}")
        return Video(np.stack([_jpeg_frame(f, quality) for f in video.samples]))
    raise ValueError(f"degradation must be one of {DEGRADATIONS}, got {kind!r}")
