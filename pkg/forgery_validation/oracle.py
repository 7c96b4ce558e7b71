"""PatchMatch vs exhaustive nearest-neighbour search on small blur-noise videos."""

from __future__ import annotations

import time

import numpy as np

import patchmatch3d
from forgegen import synth_texture
from patchmatch3d import MatchConfig
from zernike import FeatureConfig, extract_field

ORACLE_DIMS = (4, 48, 48)


def nnf_oracle_check(n_instances: int = 10, seed: int = 0, threads: int = 1, dims=ORACLE_DIMS) -> dict:
    """Total-distance ratio PatchMatch / exhaustive per instance (1.0 = optimal)."""
    cfg = MatchConfig(seed=seed)
    rows = []
    t0 = time.perf_counter()
    for k in range(n_instances):
        video = synth_texture(dims, "gaussian_blur_noise", np.random.default_rng(seed + k))
        feats = extract_field(video, FeatureConfig())
        approx = patchmatch3d.run(feats, feats, cfg, threads=threads)
        exact = patchmatch3d.exhaustive_search(feats, feats, cfg, threads=threads)
        ok = exact.matchable
        total_exact = float(exact.distance[ok].sum())
        total_approx = float(approx.distance[ok].sum())
        rows.append(
            {
                "instance": k,
                "total_patchmatch": total_approx,
                "total_exhaustive": total_exact,
                "ratio": total_approx / total_exact if total_exact > 0 else 1.0,
            }
        )
    ratios = [r["ratio"] for r in rows]
    return {
        "instances": rows,
        "max_ratio": max(ratios) if ratios else None,
        "aggregate_ratio": (
            sum(r["total_patchmatch"] for r in rows) / max(sum(r["total_exhaustive"] for r in rows), 1e-300)
        ),
        "seconds": round(time.perf_counter() - t0, 3),
    }
