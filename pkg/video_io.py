"""Video and mask volumes: loading, saving and overlay rendering.

Videos are grayscale intensity volumes (frames x rows x cols) in [0, 1].
Inputs are a directory of PNG/PGM frames or an uncompressed Y4M stream.
Masks are written as one 8-bit gray PNG per frame (0 pristine, 255 detected).
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

logger = logging.getLogger(__name__)

# Rec.601 luma weights (R, G, B).
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
FRAME_SUFFIXES = (".png", ".pgm")
FRAME_NAME = "frame_{:05d}.png"
MASK_NAME = "mask_{:05d}.png"
OVERLAY_NAME = "overlay_{:05d}.png"
Y4M_MAGIC = b"YUV4MPEG2"


class VideoIOError(OSError):
    """Undecodable frame, inconsistent frame dimensions or malformed stream."""


@dataclass(frozen=True)
class Video:
    """Grayscale volume, samples[t, r, c] in [0, 1]."""

    samples: np.ndarray

    def __post_init__(self):
        s = self.samples
        if s.ndim != 3 or min(s.shape) < 1:
            raise ValueError(f"Video samples must be a non-empty T x H x W volume, got {s.shape}")
        if not np.all(np.isfinite(s)) or s.min() < 0.0 or s.max() > 1.0:
            raise ValueError("Video samples must lie in [0, 1]")

    @property
    def frames(self) -> int:
        return self.samples.shape[0]

    @property
    def rows(self) -> int:
        return self.samples.shape[1]

    @property
    def cols(self) -> int:
        return self.samples.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.samples.shape

    def reversed(self) -> Video:
        """Temporally reversed copy."""
        return Video(np.ascontiguousarray(self.samples[::-1]))


@dataclass(frozen=True)
class MaskVolume:
    """Binary volume aligned with a Video (or with a subsampled site grid)."""

    bits: np.ndarray

    def __post_init__(self):
        if self.bits.ndim != 3:
            raise ValueError(f"Mask must be a T x H x W volume, got {self.bits.shape}")
        if self.bits.dtype != bool:
            object.__setattr__(self, "bits", self.bits.astype(bool))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.bits.shape

    @classmethod
    def empty(cls, shape) -> MaskVolume:
        return cls(np.zeros(shape, dtype=bool))

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))


def to_luminance(img: Image.Image) -> np.ndarray:
    """Luminance in [0, 1] from a decoded frame; RGB uses Rec.601 weights."""
    mode = img.mode
    if mode == "L":
        return np.asarray(img, dtype=np.float64) / 255.0
    if mode == "LA":
        return np.asarray(img.getchannel("L"), dtype=np.float64) / 255.0
    if mode.startswith("I;16") or mode == "I":
        return np.clip(np.asarray(img, dtype=np.float64) / 65535.0, 0.0, 1.0)
    if mode == "1":
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return np.clip(rgb @ LUMA_WEIGHTS, 0.0, 1.0)


def _decode_frame(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            return to_luminance(img)
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise VideoIOError(f"Cannot decode frame {path.name}: {e}") from e


def list_frames(frame_dir: Path) -> list[Path]:
    return sorted(
        p for p in frame_dir.iterdir() if p.is_file() and p.suffix.lower() in FRAME_SUFFIXES
    )


def _stack_frames(paths: list[Path], frames: list[np.ndarray]) -> np.ndarray:
    ref_shape = frames[0].shape
    for p, f in zip(paths, frames):
        if f.shape != ref_shape:
            raise VideoIOError(
                f"Frame {p.name} has dimensions {f.shape}, expected {ref_shape} (from {paths[0].name})"
            )
    return np.stack(frames, axis=0)


def _load_frame_dir(frame_dir: Path, threads: int) -> np.ndarray:
    paths = list_frames(frame_dir)
    if not paths:
        raise VideoIOError(f"No PNG/PGM frames found in {frame_dir}")
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        frames = list(pool.map(_decode_frame, paths))
    return _stack_frames(paths, frames)


def _parse_y4m_header(line: bytes, path: Path) -> dict:
    parts = line.split()
    if not parts or parts[0] != Y4M_MAGIC:
        raise VideoIOError(f"{path.name} is not a YUV4MPEG2 stream")
    header = {"C": "420jpeg"}
    for tok in parts[1:]:
        header[chr(tok[0])] = tok[1:].decode("ascii")
    if "W" not in header or "H" not in header:
        raise VideoIOError(f"{path.name}: Y4M header lacks W/H")
    return header


def _y4m_chroma_size(colorspace: str, width: int, height: int, path: Path) -> int:
    depth = re.search(r"(?:p|mono)(\d+)$", colorspace)
    if depth and int(depth.group(1)) > 8:
        raise VideoIOError(f"{path.name}: only 8-bit Y4M is supported (C{colorspace})")
    cw, ch = (width + 1) // 2, (height + 1) // 2
    if colorspace.startswith("mono"):
        return 0
    if colorspace.startswith("420"):
        return 2 * cw * ch
    if colorspace.startswith("422"):
        return 2 * cw * height
    if colorspace.startswith("444"):
        return 2 * width * height
    raise VideoIOError(f"{path.name}: unsupported Y4M colorspace C{colorspace}")


def _load_y4m(path: Path) -> np.ndarray:
    data = path.read_bytes()
    eol = data.find(b"\n")
    if eol < 0:
        raise VideoIOError(f"{path.name}: truncated Y4M header")
    header = _parse_y4m_header(data[:eol], path)
    width, height = int(header["W"]), int(header["H"])
    luma = width * height
    frame_bytes = luma + _y4m_chroma_size(header["C"], width, height, path)
    frames = []
    pos = eol + 1
    while pos < len(data):
        line_end = data.find(b"\n", pos)
        if line_end < 0 or not data[pos:line_end].startswith(b"FRAME"):
            raise VideoIOError(f"{path.name}: bad FRAME marker at frame {len(frames)}")
        start = line_end + 1
        if start + frame_bytes > len(data):
            raise VideoIOError(f"{path.name}: frame {len(frames)} is truncated")
        y = np.frombuffer(data, dtype=np.uint8, count=luma, offset=start)
        frames.append(y.reshape(height, width).astype(np.float64) / 255.0)
        pos = start + frame_bytes
    if not frames:
        raise VideoIOError(f"{path.name}: stream holds no frames")
    return np.stack(frames, axis=0)


def load_video(path, kind: str | None = None, threads: int = 1) -> Video:
    """Load a frame directory or Y4M file as a grayscale Video."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Video not found: {path}")
    if kind is None:
        kind = "frame_dir" if path.is_dir() else "y4m"
    if kind == "frame_dir":
        samples = _load_frame_dir(path, threads)
    elif kind == "y4m":
        samples = _load_y4m(path)
    else:
        raise ValueError(f"kind must be frame_dir or y4m, got {kind!r}")
    logger.info(f"[VIDEO] Loaded {path.name}: {samples.shape[0]} frames, {samples.shape[1]}x{samples.shape[2]}")
    return Video(samples)


def _to_uint8(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(samples * 255.0), 0, 255).astype(np.uint8)


def save_video(video: Video, out_dir) -> Path:
    """Write one 8-bit gray PNG per frame."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(_to_uint8(video.samples)):
        Image.fromarray(frame).save(out_dir / FRAME_NAME.format(t))
    return out_dir


def save_mask(mask: MaskVolume, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(mask.bits):
        Image.fromarray(np.where(frame, 255, 0).astype(np.uint8)).save(
            out_dir / MASK_NAME.format(t)
        )
    return out_dir


def load_mask(mask_dir) -> MaskVolume:
    mask_dir = Path(mask_dir)
    if not mask_dir.is_dir():
        raise FileNotFoundError(f"Mask directory not found: {mask_dir}")
    paths = list_frames(mask_dir)
    if not paths:
        raise VideoIOError(f"No mask frames found in {mask_dir}")
    frames = []
    for p in paths:
        try:
            with Image.open(p) as img:
                frames.append(np.asarray(img.convert("L")) > 127)
        except (UnidentifiedImageError, OSError) as e:
            raise VideoIOError(f"Cannot decode mask frame {p.name}: {e}") from e
    return MaskVolume(_stack_frames(paths, frames))


def save_overlays(
    video: Video, mask: MaskVolume, out_dir, gt: MaskVolume | None = None, alpha: float = 0.5
) -> Path:
    """Frames with detections blended in green (ground truth, if given, in red)."""
    if mask.shape != video.shape:
        raise ValueError(f"Mask {mask.shape} does not match video {video.shape}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for t in range(video.frames):
        rgb = np.repeat(video.samples[t][..., None], 3, axis=2)
        color = np.zeros_like(rgb)
        weight = np.zeros(rgb.shape[:2])
        color[..., 1] = mask.bits[t]
        weight = np.maximum(weight, mask.bits[t])
        if gt is not None:
            color[..., 0] = gt.bits[t]
            weight = np.maximum(weight, gt.bits[t])
        w = alpha * weight[..., None]
        blended = (1.0 - w) * rgb + w * color
        Image.fromarray(_to_uint8(blended)).save(out_dir / OVERLAY_NAME.format(t))
    return out_dir
