"""Randomized nearest-neighbour offset fields over feature volumes (video PatchMatch).

Offsets are stored in full-resolution target coordinates: source site (t, i, j)
of a grid with stride S sits at pixel (t, i*S, j*S) and points at target pixel
(t+dt, i*S+dr, j*S+dc). The target field is always the level-0 field.

Inner loops are numba kernels working one frame of one slab at a time; the
slabs of a pass run concurrently on a thread pool.
"""

from __future__ import annotations

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from zernike import FeatureField

logger = logging.getLogger(__name__)

DEFAULT_ITERATIONS = 8
DEFAULT_RANDOM_CANDIDATES = 10
DEFAULT_MIN_OFFSET = 16.0
INIT_TRIES = 8

PHASE_INIT = 0
PHASE_RANDOM = 1

# Slab partition axis per iteration pair: columns, rows, frames.
PARTITION_AXES = (2, 1, 0)

# (dt, di, dj) back to the already-visited neighbour in a forward scan:
# row, column, diagonal, antidiagonal, frame.
PREDICTOR_STEPS = np.array(
    [[0, 0, 1], [0, 1, 0], [0, 1, 1], [0, 1, -1], [1, 0, 0]], dtype=np.int64
)
MAX_CANDIDATES = 1 + 2 * len(PREDICTOR_STEPS)

NNF_DUMP_MAGIC = b"NNFD"
# magic, level, T, H, W
NNF_DUMP_HEADER = struct.Struct("<4s4i")
NNF_RECORD = np.dtype([("dr", "<i4"), ("dc", "<i4"), ("dt", "<i4"), ("dist", "<f4")])


class InvariantError(RuntimeError):
    """A stored offset breaks bounds, target validity or the minimum offset."""


@dataclass
class MatchConfig:
    iterations: int = DEFAULT_ITERATIONS
    random_candidates: int = DEFAULT_RANDOM_CANDIDATES
    min_offset: float = DEFAULT_MIN_OFFSET
    seed: int = 0
    random_search: bool = True
    reverse_matches: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.random_candidates < 1:
            raise ValueError(f"random_candidates must be >= 1, got {self.random_candidates}")
        if not self.min_offset > 0:
            raise ValueError(f"min_offset must be > 0, got {self.min_offset}")


@dataclass
class OffsetField:
    """Per-site (dr, dc, dt) plus cached squared feature distance (inf = unmatchable)."""

    level: int
    stride: int
    offsets: np.ndarray  # (T, H, W, 3) int32
    distance: np.ndarray  # (T, H, W) float64

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.distance.shape

    @property
    def matchable(self) -> np.ndarray:
        return np.isfinite(self.distance)

    @classmethod
    def unmatched(cls, shape, level: int = 0, stride: int = 1) -> OffsetField:
        return cls(
            level=level,
            stride=stride,
            offsets=np.zeros(tuple(shape) + (3,), dtype=np.int32),
            distance=np.full(shape, np.inf),
        )

    def copy(self) -> OffsetField:
        return OffsetField(self.level, self.stride, self.offsets.copy(), self.distance.copy())

    def targets(self) -> np.ndarray:
        """Full-resolution (t, r, c) of every site's match, (T, H, W, 3) int64."""
        n_t, n_r, n_c = self.shape
        t, i, j = np.meshgrid(np.arange(n_t), np.arange(n_r), np.arange(n_c), indexing="ij")
        off = self.offsets.astype(np.int64)
        return np.stack(
            [t + off[..., 2], i * self.stride + off[..., 0], j * self.stride + off[..., 1]], axis=-1
        )


# ---------------------------------------------------------------- kernels


@njit(cache=True, nogil=True)
def _sq_dist(src_vec, t, i, j, tgt_vec, tt, tr, tc):
    acc = 0.0
    for f in range(src_vec.shape[3]):
        d = src_vec[t, i, j, f] - tgt_vec[tt, tr, tc, f]
        acc += d * d
    return acc


@njit(cache=True, nogil=True)
def _admissible(tgt_valid, stride, min_off2, t, i, j, dr, dc, dt):
    if dr * dr + dc * dc + dt * dt < min_off2:
        return False
    tt = t + dt
    tr = i * stride + dr
    tc = j * stride + dc
    if tt < 0 or tr < 0 or tc < 0:
        return False
    if tt >= tgt_valid.shape[0] or tr >= tgt_valid.shape[1] or tc >= tgt_valid.shape[2]:
        return False
    return tgt_valid[tt, tr, tc]


@njit(cache=True, nogil=True)
def _in_box(box, t, i, j):
    return box[0] <= t < box[1] and box[2] <= i < box[3] and box[4] <= j < box[5]


@njit(cache=True, nogil=True)
def _predictors(offsets, dist, t, i, j, direction, box, steps, out):
    """Fill out[:n] with incumbent, zero-order then first-order predictors; return n."""
    for a in range(3):
        out[0, a] = offsets[t, i, j, a]
    n = 1
    for k in range(steps.shape[0]):
        xt = t - direction * steps[k, 0]
        xi = i - direction * steps[k, 1]
        xj = j - direction * steps[k, 2]
        if _in_box(box, xt, xi, xj) and np.isfinite(dist[xt, xi, xj]):
            for a in range(3):
                out[n, a] = offsets[xt, xi, xj, a]
            n += 1
    for k in range(steps.shape[0]):
        xt = t - direction * steps[k, 0]
        xi = i - direction * steps[k, 1]
        xj = j - direction * steps[k, 2]
        yt = t - 2 * direction * steps[k, 0]
        yi = i - 2 * direction * steps[k, 1]
        yj = j - 2 * direction * steps[k, 2]
        if (
            _in_box(box, xt, xi, xj)
            and _in_box(box, yt, yi, yj)
            and np.isfinite(dist[xt, xi, xj])
            and np.isfinite(dist[yt, yi, yj])
        ):
            for a in range(3):
                out[n, a] = 2 * offsets[xt, xi, xj, a] - offsets[yt, yi, yj, a]
            n += 1
    return n


@njit(cache=True, nogil=True)
def _init_frame(
    src_vec, src_ok, tgt_vec, tgt_valid, targets, warm, use_warm,
    offsets, dist, stride, min_off2, t, box, draws,
):
    n_targets = targets.shape[0]
    n_tries = draws.shape[2] - 1
    for ii in range(box[3] - box[2]):
        i = box[2] + ii
        for jj in range(box[5] - box[4]):
            j = box[4] + jj
            r = i * stride
            c = j * stride
            offsets[t, i, j, 0] = 0
            offsets[t, i, j, 1] = 0
            offsets[t, i, j, 2] = 0
            dist[t, i, j] = np.inf
            if not src_ok[t, i, j]:
                continue
            if use_warm:
                dr = warm[t, i, j, 0]
                dc = warm[t, i, j, 1]
                dt = warm[t, i, j, 2]
                if _admissible(tgt_valid, stride, min_off2, t, i, j, dr, dc, dt):
                    offsets[t, i, j, 0] = dr
                    offsets[t, i, j, 1] = dc
                    offsets[t, i, j, 2] = dt
                    dist[t, i, j] = _sq_dist(src_vec, t, i, j, tgt_vec, t + dt, r + dr, c + dc)
                    continue
            if n_targets == 0:
                continue
            pick = -1
            for k in range(n_tries):
                idx = min(int(draws[ii, jj, k] * n_targets), n_targets - 1)
                dr = targets[idx, 1] - r
                dc = targets[idx, 2] - c
                dt = targets[idx, 0] - t
                if dr * dr + dc * dc + dt * dt >= min_off2:
                    pick = idx
                    break
            if pick < 0:
                count = 0
                for idx in range(n_targets):
                    dr = targets[idx, 1] - r
                    dc = targets[idx, 2] - c
                    dt = targets[idx, 0] - t
                    if dr * dr + dc * dc + dt * dt >= min_off2:
                        count += 1
                if count == 0:
                    continue
                want = min(int(draws[ii, jj, n_tries] * count), count - 1)
                for idx in range(n_targets):
                    dr = targets[idx, 1] - r
                    dc = targets[idx, 2] - c
                    dt = targets[idx, 0] - t
                    if dr * dr + dc * dc + dt * dt >= min_off2:
                        if want == 0:
                            pick = idx
                            break
                        want -= 1
            tt = targets[pick, 0]
            tr = targets[pick, 1]
            tc = targets[pick, 2]
            offsets[t, i, j, 0] = tr - r
            offsets[t, i, j, 1] = tc - c
            offsets[t, i, j, 2] = tt - t
            dist[t, i, j] = _sq_dist(src_vec, t, i, j, tgt_vec, tt, tr, tc)


@njit(cache=True, nogil=True)
def _propagate_frame(
    src_vec, src_ok, tgt_vec, tgt_valid, offsets, dist, stride, min_off2, t, box, direction, steps
):
    cand = np.empty((steps.shape[0] * 2 + 1, 3), dtype=np.int64)
    n_r = box[3] - box[2]
    n_c = box[5] - box[4]
    for ii in range(n_r):
        i = box[2] + ii if direction > 0 else box[3] - 1 - ii
        for jj in range(n_c):
            j = box[4] + jj if direction > 0 else box[5] - 1 - jj
            if not src_ok[t, i, j]:
                continue
            n = _predictors(offsets, dist, t, i, j, direction, box, steps, cand)
            best = dist[t, i, j]
            b_dr = cand[0, 0]
            b_dc = cand[0, 1]
            b_dt = cand[0, 2]
            for k in range(1, n):
                dr = cand[k, 0]
                dc = cand[k, 1]
                dt = cand[k, 2]
                if dr == b_dr and dc == b_dc and dt == b_dt:
                    continue
                if not _admissible(tgt_valid, stride, min_off2, t, i, j, dr, dc, dt):
                    continue
                d = _sq_dist(src_vec, t, i, j, tgt_vec, t + dt, i * stride + dr, j * stride + dc)
                if d < best:
                    best = d
                    b_dr = dr
                    b_dc = dc
                    b_dt = dt
            offsets[t, i, j, 0] = b_dr
            offsets[t, i, j, 1] = b_dc
            offsets[t, i, j, 2] = b_dt
            dist[t, i, j] = best


@njit(cache=True, nogil=True)
def _random_frame(
    src_vec, src_ok, tgt_vec, tgt_valid, offsets, dist, stride, min_off2, t, box, direction, draws, vbox
):
    n_cand = draws.shape[2]
    n_r = box[3] - box[2]
    n_c = box[5] - box[4]
    for ii in range(n_r):
        i = box[2] + ii if direction > 0 else box[3] - 1 - ii
        for jj in range(n_c):
            j = box[4] + jj if direction > 0 else box[5] - 1 - jj
            if not src_ok[t, i, j]:
                continue
            r = i * stride
            c = j * stride
            best = dist[t, i, j]
            b_dr = np.int64(offsets[t, i, j, 0])
            b_dc = np.int64(offsets[t, i, j, 1])
            b_dt = np.int64(offsets[t, i, j, 2])
            for k in range(n_cand):
                rad = np.int64(1) << min(n_cand - 1 - k, 30)
                # cube around the best target so far, clipped to the valid-target box
                ct = min(max(t + b_dt, vbox[0]), vbox[1])
                cr = min(max(r + b_dr, vbox[2]), vbox[3])
                cc = min(max(c + b_dc, vbox[4]), vbox[5])
                lt = max(ct - rad, vbox[0])
                lr = max(cr - rad, vbox[2])
                lc = max(cc - rad, vbox[4])
                nt = min(ct + rad, vbox[1]) - lt + 1
                nr = min(cr + rad, vbox[3]) - lr + 1
                nc = min(cc + rad, vbox[5]) - lc + 1
                n_cells = nt * nr * nc
                if n_cells < 2:
                    continue
                centre = ((ct - lt) * nr + (cr - lr)) * nc + (cc - lc)
                cell = np.int64(draws[ii, jj, k] * (n_cells - 1))
                if cell >= centre:
                    cell += 1
                tt = lt + cell // (nr * nc)
                tr = lr + (cell // nc) % nr
                tc = lc + cell % nc
                dr = tr - r
                dc = tc - c
                dt = tt - t
                if not _admissible(tgt_valid, stride, min_off2, t, i, j, dr, dc, dt):
                    continue
                d = _sq_dist(src_vec, t, i, j, tgt_vec, tt, tr, tc)
                if d < best:
                    best = d
                    b_dr = dr
                    b_dc = dc
                    b_dt = dt
            offsets[t, i, j, 0] = b_dr
            offsets[t, i, j, 1] = b_dc
            offsets[t, i, j, 2] = b_dt
            dist[t, i, j] = best


@njit(cache=True, nogil=True)
def _reverse_sweep(src_vec, src_ok, tgt_vec, tgt_valid, offsets, dist, stride, min_off2):
    """Offer the site nearest to each match target the way back to its source."""
    n_t, n_r, n_c = src_ok.shape
    half = stride // 2
    for t in range(n_t):
        for i in range(n_r):
            for j in range(n_c):
                if not np.isfinite(dist[t, i, j]):
                    continue
                dr = np.int64(offsets[t, i, j, 0])
                dc = np.int64(offsets[t, i, j, 1])
                dt = np.int64(offsets[t, i, j, 2])
                ut = t + dt
                ui = min((i * stride + dr + half) // stride, n_r - 1)
                uj = min((j * stride + dc + half) // stride, n_c - 1)
                if ut < 0 or ut >= n_t or ui < 0 or uj < 0 or not src_ok[ut, ui, uj]:
                    continue
                for k in range(2):
                    if k == 0:
                        # negated offset, exact for translations
                        cr = -dr
                        cc = -dc
                        ct = -dt
                    else:
                        # straight back to this site's pixel
                        cr = (i - ui) * stride
                        cc = (j - uj) * stride
                        ct = t - ut
                        if cr == -dr and cc == -dc:
                            continue
                    if not _admissible(tgt_valid, stride, min_off2, ut, ui, uj, cr, cc, ct):
                        continue
                    d = _sq_dist(src_vec, ut, ui, uj, tgt_vec, ut + ct, ui * stride + cr, uj * stride + cc)
                    if d < dist[ut, ui, uj]:
                        offsets[ut, ui, uj, 0] = cr
                        offsets[ut, ui, uj, 1] = cc
                        offsets[ut, ui, uj, 2] = ct
                        dist[ut, ui, uj] = d


@njit(cache=True, nogil=True)
def _exhaustive_frame(src_vec, src_ok, tgt_vec, targets, offsets, dist, stride, min_off2, t):
    for i in range(src_ok.shape[1]):
        for j in range(src_ok.shape[2]):
            if not src_ok[t, i, j]:
                continue
            r = i * stride
            c = j * stride
            best = np.inf
            for idx in range(targets.shape[0]):
                tt = targets[idx, 0]
                tr = targets[idx, 1]
                tc = targets[idx, 2]
                dr = tr - r
                dc = tc - c
                dt = tt - t
                if dr * dr + dc * dc + dt * dt < min_off2:
                    continue
                d = _sq_dist(src_vec, t, i, j, tgt_vec, tt, tr, tc)
                if d < best:
                    best = d
                    offsets[t, i, j, 0] = dr
                    offsets[t, i, j, 1] = dc
                    offsets[t, i, j, 2] = dt
            dist[t, i, j] = best


# ---------------------------------------------------------------- slabs


def check_compatible(src: FeatureField, tgt: FeatureField) -> None:
    if tgt.stride != 1:
        raise ValueError(f"Target field must be full resolution, got stride {tgt.stride}")
    if src.level < tgt.level:
        raise ValueError(f"Source level {src.level} is finer than target level {tgt.level}")
    if src.length != tgt.length:
        raise ValueError(f"Feature lengths differ: source {src.length}, target {tgt.length}")
    s_t, s_r, s_c = src.shape
    t_t, t_r, t_c = tgt.shape
    if s_t != t_t or (s_r - 1) * src.stride >= t_r or (s_c - 1) * src.stride >= t_c:
        raise ValueError(
            f"Incompatible dims: source {src.shape} with stride {src.stride} vs target {tgt.shape}"
        )


def slab_boxes(shape, n_slabs: int, axis: int) -> list[np.ndarray]:
    """Split the grid into up to n_slabs contiguous boxes (t0, t1, r0, r1, c0, c1) along axis."""
    bounds = np.linspace(0, shape[axis], min(n_slabs, shape[axis]) + 1).astype(np.int64)
    boxes = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        box = np.array([0, shape[0], 0, shape[1], 0, shape[2]], dtype=np.int64)
        box[2 * axis], box[2 * axis + 1] = lo, hi
        boxes.append(box)
    return boxes


def _valid_box(valid: np.ndarray) -> np.ndarray:
    """Inclusive (t0, t1, r0, r1, c0, c1) bounds of the valid targets; empty bounds if there are none."""
    idx = np.argwhere(valid)
    if not len(idx):
        return np.array([0, -1, 0, -1, 0, -1], dtype=np.int64)
    lo, hi = idx.min(axis=0), idx.max(axis=0)
    return np.array([lo[0], hi[0], lo[1], hi[1], lo[2], hi[2]], dtype=np.int64)


def _frame_order(box, direction: int):
    frames = range(int(box[0]), int(box[1]))
    return frames if direction > 0 else reversed(frames)


class _Matcher:
    """Shared state of one matching run; slab methods only touch their own box."""

    def __init__(self, src: FeatureField, tgt: FeatureField, cfg: MatchConfig, field: OffsetField, active=None):
        check_compatible(src, tgt)
        self.src_vec = np.ascontiguousarray(src.vectors, dtype=np.float64)
        self.tgt_vec = np.ascontiguousarray(tgt.vectors, dtype=np.float64)
        self.tgt_valid = np.ascontiguousarray(tgt.valid)
        ok = src.valid if active is None else src.valid & active
        self.src_ok = np.ascontiguousarray(ok)
        self.stride = src.stride
        self.min_off2 = float(cfg.min_offset) ** 2
        self.n_random = cfg.random_candidates
        self.field = field
        self._targets = None
        self.vbox = _valid_box(self.tgt_valid)

    @property
    def targets(self) -> np.ndarray:
        if self._targets is None:
            self._targets = np.argwhere(self.tgt_valid).astype(np.int64)
        return self._targets

    def init_slab(self, box, rng, warm: OffsetField | None = None):
        warm_offsets = self.field.offsets if warm is None else np.ascontiguousarray(warm.offsets)
        for t in _frame_order(box, 1):
            draws = rng.random((int(box[3] - box[2]), int(box[5] - box[4]), INIT_TRIES + 1))
            _init_frame(
                self.src_vec, self.src_ok, self.tgt_vec, self.tgt_valid, self.targets,
                warm_offsets, warm is not None, self.field.offsets, self.field.distance,
                self.stride, self.min_off2, t, box, draws,
            )

    def propagate_slab(self, box, direction: int):
        for t in _frame_order(box, direction):
            _propagate_frame(
                self.src_vec, self.src_ok, self.tgt_vec, self.tgt_valid,
                self.field.offsets, self.field.distance, self.stride, self.min_off2,
                t, box, direction, PREDICTOR_STEPS,
            )

    def random_slab(self, box, rng, direction: int):
        for t in _frame_order(box, direction):
            draws = rng.random((int(box[3] - box[2]), int(box[5] - box[4]), self.n_random))
            _random_frame(
                self.src_vec, self.src_ok, self.tgt_vec, self.tgt_valid,
                self.field.offsets, self.field.distance, self.stride, self.min_off2,
                t, box, direction, draws, self.vbox,
            )

    def reverse_sweep(self):
        _reverse_sweep(
            self.src_vec, self.src_ok, self.tgt_vec, self.tgt_valid,
            self.field.offsets, self.field.distance, self.stride, self.min_off2,
        )

    def full_box(self) -> np.ndarray:
        return slab_boxes(self.field.shape, 1, 0)[0]


def slab_rng(seed: int, slab: int, iteration: int, phase: int) -> np.random.Generator:
    return np.random.default_rng([seed, slab, iteration, phase])


# ---------------------------------------------------------------- public passes


def init_offsets(
    src: FeatureField, tgt: FeatureField, cfg: MatchConfig, rng: np.random.Generator | None = None,
    active: np.ndarray | None = None,
) -> OffsetField:
    """Random admissible offsets, uniform over valid targets beyond min_offset.

    Sites with no admissible target keep the sentinel (zero offset, inf distance).
    """
    field = OffsetField.unmatched(src.shape, src.level, src.stride)
    m = _Matcher(src, tgt, cfg, field, active)
    m.init_slab(m.full_box(), rng if rng is not None else slab_rng(cfg.seed, 0, 0, PHASE_INIT))
    return field


def predictor_set(field: OffsetField, site, direction: int, tgt: FeatureField, cfg: MatchConfig) -> list[tuple[int, int, int]]:
    """Admissible candidates for site (t, i, j) in enumeration order.

    Incumbent, zero-order row/column/diagonal/antidiagonal/frame predictors,
    then first-order 2*d(x) - d(xx) along the same directions. Only neighbours
    already visited in the scan direction and matchable take part.
    """
    t, i, j = site
    box = np.array([0, field.shape[0], 0, field.shape[1], 0, field.shape[2]], dtype=np.int64)
    if not _in_box(box, t, i, j):
        raise ValueError(f"Site {site} outside grid {field.shape}")
    cand = np.empty((MAX_CANDIDATES, 3), dtype=np.int64)
    n = _predictors(field.offsets, field.distance, t, i, j, direction, box, PREDICTOR_STEPS, cand)
    min_off2 = float(cfg.min_offset) ** 2
    return [
        (int(dr), int(dc), int(dt))
        for dr, dc, dt in cand[:n]
        if _admissible(tgt.valid, field.stride, min_off2, t, i, j, dr, dc, dt)
    ]


def propagate_pass(src: FeatureField, tgt: FeatureField, field: OffsetField, cfg: MatchConfig, direction: int = 1) -> OffsetField:
    """One raster (direction=1) or reverse-raster (-1) propagation pass, in place."""
    m = _Matcher(src, tgt, cfg, field)
    m.propagate_slab(m.full_box(), direction)
    return field


def random_search_pass(
    src: FeatureField, tgt: FeatureField, field: OffsetField, cfg: MatchConfig,
    rng: np.random.Generator, direction: int = 1,
) -> OffsetField:
    """Random search over cubes of radius 2^(L-1), ..., 2, 1, each centred on the best offset so far, in place.

    Cubes are clipped to the bounding box of the valid targets and exclude their centre.
    """
    m = _Matcher(src, tgt, cfg, field)
    m.random_slab(m.full_box(), rng, direction)
    return field


def reverse_pass(src: FeatureField, tgt: FeatureField, field: OffsetField, cfg: MatchConfig) -> OffsetField:
    """Give the site nearest each match target the reverse offset when it beats the incumbent, in place.

    Two candidates per match: the negated offset and the offset back to the
    source pixel (identical at stride 1). Sites are swept in raster order.
    """
    m = _Matcher(src, tgt, cfg, field)
    m.reverse_sweep()
    return field


def check_field(field: OffsetField, src: FeatureField, tgt: FeatureField, cfg: MatchConfig) -> None:
    """Raise InvariantError if any matchable offset is out of bounds, invalid or too short."""
    ok = field.matchable
    if not ok.any():
        return
    tg = field.targets()[ok]
    off = field.offsets[ok].astype(np.int64)
    shape = np.array(tgt.shape)
    inside = np.all((tg >= 0) & (tg < shape), axis=1)
    norm2 = (off**2).sum(axis=1)
    bad = ~inside | (norm2 < cfg.min_offset**2)
    if not bad.any():
        tg_ok = tgt.valid[tg[:, 0], tg[:, 1], tg[:, 2]]
        bad = ~tg_ok
    if bad.any():
        site = tuple(int(x) for x in np.argwhere(ok)[np.argmax(bad)])
        raise InvariantError(
            f"Offset {tuple(field.offsets[site])} at site {site} breaks bounds, validity or min_offset"
        )
    if not (src.valid | ~ok).all():
        raise InvariantError("An invalid source site carries a finite distance")


def _mean_distance(field: OffsetField) -> float:
    d = field.distance[field.matchable]
    return float(d.mean()) if d.size else float("nan")


def run(
    src: FeatureField, tgt: FeatureField, cfg: MatchConfig, initial: OffsetField | None = None,
    active: np.ndarray | None = None, threads: int = 1,
) -> OffsetField:
    """Full PatchMatch: init (or warm start), then iterations of propagation, random search
    and the reverse-match sweep.

    Scan direction alternates per iteration. With threads > 1 each pass is split
    into slabs whose partition axis rotates after every forward/backward pair;
    results are reproducible for a fixed thread count.
    """
    field = OffsetField.unmatched(src.shape, src.level, src.stride)
    m = _Matcher(src, tgt, cfg, field, active)
    n_slabs = max(1, threads)

    def _parallel(fn, boxes):
        if len(boxes) == 1:
            fn(0, boxes[0])
            return
        with ThreadPoolExecutor(max_workers=len(boxes)) as pool:
            list(pool.map(lambda a: fn(*a), enumerate(boxes)))

    if initial is not None and initial.shape != field.shape:
        raise ValueError(f"Warm start {initial.shape} does not match source grid {field.shape}")
    boxes = slab_boxes(field.shape, n_slabs, PARTITION_AXES[0])
    _parallel(lambda k, box: m.init_slab(box, slab_rng(cfg.seed, k, 0, PHASE_INIT), initial), boxes)
    logger.debug(f"[PATCHMATCH] level {src.level} init: mean distance {_mean_distance(field):.4g}")

    for it in range(cfg.iterations):
        direction = 1 if it % 2 == 0 else -1
        boxes = slab_boxes(field.shape, n_slabs, PARTITION_AXES[(it // 2) % len(PARTITION_AXES)])
        _parallel(lambda k, box: m.propagate_slab(box, direction), boxes)
        if cfg.random_search:
            _parallel(
                lambda k, box: m.random_slab(box, slab_rng(cfg.seed, k, it, PHASE_RANDOM), direction),
                boxes,
            )
        if cfg.reverse_matches:
            m.reverse_sweep()
        logger.debug(f"[PATCHMATCH] level {src.level} iteration {it + 1}: mean distance {_mean_distance(field):.4g}")

    check_field(field, src, tgt, cfg)
    n_ok = int(field.matchable.sum())
    logger.info(
        f"[PATCHMATCH] level {src.level}: {cfg.iterations} iterations over {int(m.src_ok.sum())} sites, "
        f"{n_ok} matched, mean distance {_mean_distance(field):.4g}"
    )
    return field


def exhaustive_search(
    src: FeatureField, tgt: FeatureField, cfg: MatchConfig, active: np.ndarray | None = None, threads: int = 1
) -> OffsetField:
    """Exact nearest neighbour under the same admissibility rules (first in raster order wins ties)."""
    field = OffsetField.unmatched(src.shape, src.level, src.stride)
    m = _Matcher(src, tgt, cfg, field, active)

    def _frame(t):
        _exhaustive_frame(
            m.src_vec, m.src_ok, m.tgt_vec, m.targets, field.offsets, field.distance,
            m.stride, m.min_off2, t,
        )

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        list(pool.map(_frame, range(field.shape[0])))
    return field


def write_nnf_dump(field: OffsetField, path) -> Path:
    """Binary dump: 20-byte header then per-site (dr, dc, dt) int32 + distance float32."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_t, n_r, n_c = field.shape
    rec = np.empty(field.shape, dtype=NNF_RECORD)
    rec["dr"] = field.offsets[..., 0]
    rec["dc"] = field.offsets[..., 1]
    rec["dt"] = field.offsets[..., 2]
    rec["dist"] = field.distance
    with open(path, "wb") as f:
        f.write(NNF_DUMP_HEADER.pack(NNF_DUMP_MAGIC, field.level, n_t, n_r, n_c))
        f.write(rec.tobytes())
    return path


def read_nnf_dump(path, stride: int = 1) -> OffsetField:
    raw = Path(path).read_bytes()
    if len(raw) < NNF_DUMP_HEADER.size:
        raise ValueError(f"{path}: truncated NNF dump")
    magic, level, n_t, n_r, n_c = NNF_DUMP_HEADER.unpack_from(raw)
    if magic != NNF_DUMP_MAGIC:
        raise ValueError(f"{path}: not an NNF dump")
    rec = np.frombuffer(raw, dtype=NNF_RECORD, offset=NNF_DUMP_HEADER.size).reshape(n_t, n_r, n_c)
    offsets = np.stack([rec["dr"], rec["dc"], rec["dt"]], axis=-1).astype(np.int32)
    return OffsetField(level, stride, offsets, rec["dist"].astype(np.float64))
