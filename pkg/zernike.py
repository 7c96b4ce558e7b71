"""Zernike-moment features on circular patches: 2D and flip-invariant 3D fields.

Each site gets the magnitudes of a few low-order Zernike moments of the disc
of radius ``patch_radius`` centred on it (2D), or the even-odd recombination
of the complex moments of 2T+1 consecutive frames (3D, flip invariant).
"""

from __future__ import annotations

import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.signal import fftconvolve

from video_io import Video

logger = logging.getLogger(__name__)

MODE_2D = "2d"
MODE_3D_FI = "3d_fi"
FEATURE_MODES = (MODE_2D, MODE_3D_FI)

DEFAULT_PATCH_RADIUS = 8
DEFAULT_TEMPORAL_HALF_EXTENT = 1

FEATURE_DUMP_MAGIC = b"ZRNK"
# magic, level, T, H, W, F
FEATURE_DUMP_HEADER = struct.Struct("<4s5i")


class MomentIndex(NamedTuple):
    n: int
    m: int


def check_moment_index(n: int, m: int) -> None:
    if n < 0 or m < 0 or m > n or (n - m) % 2:
        raise ValueError(f"Invalid Zernike index (n={n}, m={m}): need 0 <= m <= n, n-m even")


def moments_up_to(order: int) -> list[MomentIndex]:
    """All (n, m) with n <= order, m >= 0, n-m even, by radial order then m."""
    return [MomentIndex(n, m) for n in range(order + 1) for m in range(n % 2, n + 1, 2)]


MOMENT_SET_2D = moments_up_to(5)
MOMENT_SET_3D = moments_up_to(3)


@dataclass
class FeatureConfig:
    patch_radius: int = DEFAULT_PATCH_RADIUS
    mode: str = MODE_2D
    moment_set_2d: tuple[MomentIndex, ...] = tuple(MOMENT_SET_2D)
    moment_set_3d: tuple[MomentIndex, ...] = tuple(MOMENT_SET_3D)
    temporal_half_extent: int = DEFAULT_TEMPORAL_HALF_EXTENT

    def __post_init__(self):
        if self.mode not in FEATURE_MODES:
            raise ValueError(f"mode must be one of {FEATURE_MODES}, got {self.mode!r}")
        if self.patch_radius < 1:
            raise ValueError(f"patch_radius must be >= 1, got {self.patch_radius}")
        if self.temporal_half_extent < 0:
            raise ValueError("temporal_half_extent must be >= 0")
        self.moment_set_2d = tuple(MomentIndex(*i) for i in self.moment_set_2d)
        self.moment_set_3d = tuple(MomentIndex(*i) for i in self.moment_set_3d)
        for idx in self.moment_set_2d + self.moment_set_3d:
            check_moment_index(*idx)

    @property
    def moment_set(self) -> tuple[MomentIndex, ...]:
        return self.moment_set_2d if self.mode == MODE_2D else self.moment_set_3d

    @property
    def feature_length(self) -> int:
        if self.mode == MODE_2D:
            return len(self.moment_set_2d)
        return len(self.moment_set_3d) * (2 * self.temporal_half_extent + 1)


@dataclass
class FeatureField:
    """Per-site feature vectors on a (possibly subsampled) site grid.

    Site (t, i, j) sits at full-resolution pixel (t, i * stride, j * stride).
    """

    level: int
    stride: int
    vectors: np.ndarray  # (T, H, W, F) float64
    valid: np.ndarray  # (T, H, W) bool

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.valid.shape

    @property
    def length(self) -> int:
        return self.vectors.shape[-1]


def radial_polynomial(n: int, m: int, rho):
    """Zernike radial polynomial R_{n,m}(rho) (unnormalized)."""
    check_moment_index(n, abs(m))
    m = abs(m)
    rho = np.asarray(rho, dtype=np.float64)
    out = np.zeros_like(rho)
    for k in range((n - m) // 2 + 1):
        coef = (-1) ** k * math.factorial(n - k)
        coef /= (
            math.factorial(k)
            * math.factorial((n + m) // 2 - k)
            * math.factorial((n - m) // 2 - k)
        )
        out = out + coef * rho ** (n - 2 * k)
    return out if out.ndim else float(out)


def disc_grid(radius: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(rho, theta, inside) on the (2R+1)^2 window, pixel-centre sampling."""
    offs = np.arange(-radius, radius + 1, dtype=np.float64)
    yy, xx = np.meshgrid(offs, offs, indexing="ij")
    rho = np.hypot(yy, xx) / radius
    theta = np.arctan2(yy, xx)
    return rho, theta, rho <= 1.0


def moment_kernels(indices, radius: int) -> np.ndarray:
    """Projection kernels, shape (K, 2R+1, 2R+1); moment = sum(kernel * patch).

    Scaled by (n+1)/N_disc so a unit disc gives moment (0,0) = 1. Kernels with
    m % 4 == 0 (other than (0,0)) are mean-free on the disc: a constant patch
    has no higher moments on the pixel grid.
    """
    rho, theta, inside = disc_grid(radius)
    n_disc = int(inside.sum())
    kernels = np.zeros((len(indices),) + rho.shape, dtype=np.complex128)
    for k, (n, m) in enumerate(indices):
        check_moment_index(n, m)
        kern = (n + 1) / n_disc * radial_polynomial(n, m, rho) * np.exp(-1j * m * theta)
        kern[~inside] = 0.0
        if m % 4 == 0 and n > 0:
            kern[inside] -= kern[inside].mean()
        kernels[k] = kern
    return kernels


def compute_moments(video: Video, site, cfg: FeatureConfig, indices=None) -> np.ndarray | None:
    """Complex moments of the disc centred on site (t, r, c); None when the disc leaves the frame."""
    t, r, c = site
    rad = cfg.patch_radius
    indices = cfg.moment_set if indices is None else indices
    if not (0 <= t < video.frames):
        return None
    if r - rad < 0 or c - rad < 0 or r + rad >= video.rows or c + rad >= video.cols:
        return None
    patch = video.samples[t, r - rad : r + rad + 1, c - rad : c + rad + 1]
    kernels = moment_kernels(indices, rad)
    return np.tensordot(kernels, patch, axes=([1, 2], [0, 1]))


def feature_2d(moments) -> np.ndarray:
    return np.abs(np.asarray(moments))


def even_odd(stack: np.ndarray) -> np.ndarray:
    """Even-odd transform along axis -2 (length 2T+1, tau = -T..T); magnitudes."""
    half = (stack.shape[-2] - 1) // 2
    out = np.empty(stack.shape, dtype=np.float64)
    scale = 1.0 / math.sqrt(2.0)
    out[..., half, :] = np.abs(stack[..., half, :])
    for tau in range(1, half + 1):
        fwd, bwd = stack[..., half + tau, :], stack[..., half - tau, :]
        out[..., half + tau, :] = scale * np.abs(fwd + bwd)
        out[..., half - tau, :] = scale * np.abs(bwd - fwd)
    return out


def feature_3d_flip_invariant(moment_stack) -> np.ndarray:
    """Flip-invariant 3D feature from the moments of frames t-T..t+T.

    Output is tau-major (tau ascending), moment index inner.
    """
    stack = np.asarray(moment_stack, dtype=np.complex128)
    if stack.ndim != 2 or stack.shape[0] % 2 == 0:
        raise ValueError(f"Expected a (2T+1, K) moment stack, got {stack.shape}")
    return even_odd(stack).reshape(-1)


def moment_volume(samples: np.ndarray, kernels: np.ndarray, threads: int = 1) -> np.ndarray:
    """Dense complex moments, (T, H-2R, W-2R, K), for every fully supported site.

    Frames are correlated one at a time so identical frames give bit-identical moments.
    """
    n_t = samples.shape[0]
    size = kernels.shape[-1]
    out = np.empty(
        (n_t, samples.shape[1] - size + 1, samples.shape[2] - size + 1, len(kernels)),
        dtype=np.complex128,
    )
    flipped = kernels[:, ::-1, ::-1]

    def _frame(t):
        for k in range(len(kernels)):
            out[t, :, :, k] = fftconvolve(samples[t], flipped[k], mode="valid")

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        list(pool.map(_frame, range(n_t)))
    return out


def extract_field(video: Video, cfg: FeatureConfig, threads: int = 1) -> FeatureField:
    """Level-0 feature field; sites whose patch leaves the video are invalid."""
    rad = cfg.patch_radius
    size = 2 * rad + 1
    n_t, n_r, n_c = video.shape
    if n_r < size or n_c < size:
        raise ValueError(f"Video {n_r}x{n_c} is smaller than one {size}x{size} patch")
    half = cfg.temporal_half_extent if cfg.mode == MODE_3D_FI else 0
    if n_t < 2 * half + 1:
        raise ValueError(f"3D features need at least {2 * half + 1} frames, video has {n_t}")

    kernels = moment_kernels(cfg.moment_set, rad)
    moments = moment_volume(video.samples, kernels, threads)
    vectors = np.zeros((n_t, n_r, n_c, cfg.feature_length), dtype=np.float64)
    valid = np.zeros((n_t, n_r, n_c), dtype=bool)
    inner = (slice(rad, n_r - rad), slice(rad, n_c - rad))

    if cfg.mode == MODE_2D:
        vectors[(slice(None),) + inner] = feature_2d(moments)
        valid[(slice(None),) + inner] = True
    else:
        frames = slice(half, n_t - half)
        stack = np.stack([moments[half + tau : n_t - half + tau] for tau in range(-half, half + 1)], axis=-2)
        feats = even_odd(stack)
        vectors[(frames,) + inner] = feats.reshape(feats.shape[:3] + (-1,))
        valid[(frames,) + inner] = True

    logger.info(
        f"[FEATURES] {cfg.mode} field: {n_t}x{n_r}x{n_c} sites, F={cfg.feature_length}, "
        f"{int(valid.sum())} valid"
    )
    return FeatureField(level=0, stride=1, vectors=vectors, valid=valid)


def write_feature_dump(field: FeatureField, path) -> Path:
    """Binary dump: 24-byte header then little-endian float32, site-major (NaN = invalid)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_t, n_r, n_c = field.shape
    data = field.vectors.astype("<f4")
    data[~field.valid] = np.nan
    with open(path, "wb") as f:
        f.write(FEATURE_DUMP_HEADER.pack(FEATURE_DUMP_MAGIC, field.level, n_t, n_r, n_c, field.length))
        f.write(data.tobytes())
    return path


def read_feature_dump(path, stride: int = 1) -> FeatureField:
    raw = Path(path).read_bytes()
    if len(raw) < FEATURE_DUMP_HEADER.size:
        raise ValueError(f"{path}: truncated feature dump")
    magic, level, n_t, n_r, n_c, n_f = FEATURE_DUMP_HEADER.unpack_from(raw)
    if magic != FEATURE_DUMP_MAGIC:
        raise ValueError(f"{path}: not a feature dump")
    data = np.frombuffer(raw, dtype="<f4", offset=FEATURE_DUMP_HEADER.size)
    data = data.reshape(n_t, n_r, n_c, n_f).astype(np.float64)
    valid = ~np.isnan(data).any(axis=-1)
    data[~valid] = 0.0
    return FeatureField(level=level, stride=stride, vectors=data, valid=valid)
