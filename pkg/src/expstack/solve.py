"""Tikhonov-regularised weighted least squares for log exposure constants."""
import logging
import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import AllTilesRejectedWarning, UnsolvableSystemError
from .stack import ExposureEstimate
from .system import ReducedSystem, SystemConfig, build_system

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 10.0
DEFAULT_OUTLIER_THRESHOLD = math.log(1.5)


@dataclass
class SolveConfig:
    lam: float = DEFAULT_LAMBDA
    outlier_threshold_log: float = DEFAULT_OUTLIER_THRESHOLD
    gauge: int = -1

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if not self.outlier_threshold_log > 0:
            raise ValueError("outlier threshold must be > 0")

    def to_dict(self):
        thr = self.outlier_threshold_log
        return {"lambda": self.lam, "outlier_threshold_log": None if math.isinf(thr) else thr,
                "gauge": self.gauge}


def normal_equations(system: ReducedSystem, n):
    """``O^T W O`` and ``O^T W m`` for rows ``e_i - e_j = m``."""
    i, j, w = system.i, system.j, system.w
    wm = w * system.m
    diag = np.bincount(i, w, n) + np.bincount(j, w, n)
    off = np.bincount(i * n + j, w, n * n).reshape(n, n)
    A = np.diag(diag) - off - off.T
    b = np.bincount(i, wm, n) - np.bincount(j, wm, n)
    return A, b


def _gauge_index(gauge, n):
    return gauge % n


def weighted_residual_norm(system, e):
    r = e[system.i] - e[system.j] - system.m
    return float(np.sqrt(np.sum(system.w * r * r)))


def solve_wls(system: ReducedSystem, e0, lam=DEFAULT_LAMBDA, gauge=-1) -> ExposureEstimate:
    """Minimise ``||sqrt(W)(O e - m)||^2 + lam * ||e - e0||^2``.

    The N x N normal equations are solved directly. The minimiser is then
    shifted by a constant so that exposure ``gauge`` equals its prior, which
    leaves every ratio unchanged.
    """
    e0 = np.asarray(e0, dtype=np.float64)
    n = len(e0)
    g = _gauge_index(gauge, n)
    A, b = normal_equations(system, n)
    if lam > 0:
        e_raw = np.linalg.solve(A + lam * np.eye(n), b + lam * e0)
    else:
        comps = system.pair_graph_components()
        if len(comps) > 1:
            main = next(c for c in comps if g in c)
            unreachable = sorted(set(range(n)) - main)
            raise UnsolvableSystemError(
                f"lambda=0 and exposures {unreachable} are not connected to exposure {g}", unreachable)
        free = np.array([k for k in range(n) if k != g])
        e_raw = e0.copy()
        rhs = b[free] - A[np.ix_(free, [g])][:, 0] * e0[g]
        e_raw[free] = np.linalg.solve(A[np.ix_(free, free)], rhs)
    e_hat = e_raw + (e0[g] - e_raw[g])
    e_hat[g] = e0[g]
    return ExposureEstimate(e_hat=e_hat, e0=e0, lam=float(lam),
                            residual_norm=weighted_residual_norm(system, e_hat),
                            e_hat_raw=e_raw, gauge=g)


def solve_tiles(system: ReducedSystem, e0, lam=DEFAULT_LAMBDA, gauge=-1):
    """Solve every tile's sub-system independently (batched).

    Returns ``(tile_ids, estimates)`` with ``estimates`` of shape ``(T, N)``,
    each row gauge-aligned like :func:`solve_wls`.
    """
    e0 = np.asarray(e0, dtype=np.float64)
    n = len(e0)
    g = _gauge_index(gauge, n)
    tile_ids, inv = np.unique(system.tile, return_inverse=True)
    T = len(tile_ids)
    if T == 0:
        return tile_ids, np.zeros((0, n))
    w, wm = system.w, system.w * system.m
    i, j = system.i, system.j
    base = inv * (n * n)
    A = (np.bincount(base + i * (n + 1), w, T * n * n)
         + np.bincount(base + j * (n + 1), w, T * n * n)
         - np.bincount(base + i * n + j, w, T * n * n)
         - np.bincount(base + j * n + i, w, T * n * n)).reshape(T, n, n)
    b = (np.bincount(inv * n + i, wm, T * n) - np.bincount(inv * n + j, wm, T * n)).reshape(T, n)
    if lam > 0:
        A += lam * np.eye(n)
        b += lam * e0
        est = np.linalg.solve(A, b[..., None])[..., 0]
    else:
        est = (np.linalg.pinv(A) @ b[..., None])[..., 0]
    est += (e0[g] - est[:, g])[:, None]
    est[:, g] = e0[g]
    return tile_ids, est


@dataclass
class OutlierResult:
    kept: set
    rejected: set
    system: ReducedSystem
    all_rejected: bool = False
    deviations: Optional[dict] = None


def reject_outlier_tiles(system: ReducedSystem, e0, lam=DEFAULT_LAMBDA,
                         threshold=DEFAULT_OUTLIER_THRESHOLD, gauge=-1) -> OutlierResult:
    """Drop tiles whose own solution strays from the prior by more than
    ``threshold`` (natural-log units) in any exposure."""
    tiles = system.tiles_used
    if math.isinf(threshold):
        return OutlierResult(set(tiles), set(), system)
    tile_ids, est = solve_tiles(system, e0, lam, gauge)
    dev = np.max(np.abs(est - np.asarray(e0)[None, :]), axis=1)
    bad = dev > threshold
    rejected = set(tile_ids[bad].tolist())
    kept = set(tile_ids[~bad].tolist())
    merged = system.subset(np.isin(system.tile, tile_ids[~bad]))
    all_rejected = bool(tile_ids.size) and not kept
    if all_rejected:
        warnings.warn(
            f"all {len(rejected)} tiles deviate from the metadata prior by more than "
            f"{threshold:.3g} (log units); falling back to the prior", AllTilesRejectedWarning)
    logger.debug("outlier test kept %d / %d tiles", len(kept), len(tile_ids))
    return OutlierResult(kept, rejected, merged, all_rejected,
                         dict(zip(tile_ids.tolist(), dev.tolist())))


def pair_ratio_system(system: ReducedSystem) -> ReducedSystem:
    """Collapse rows into one equation per exposure pair using the mean
    linear ratio ``E[y_i / y_j]``, weighted by the number of samples."""
    n = system.n_exposures
    if not len(system):
        return ReducedSystem.empty(n)
    key = system.i * n + system.j
    keys, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
    mean_ratio = np.bincount(inv, system.y_i / system.y_j) / counts
    z = np.zeros(len(keys), dtype=np.int64)
    return ReducedSystem(
        (keys // n).astype(np.int64), (keys % n).astype(np.int64), z, z.copy(),
        np.log(mean_ratio), counts.astype(np.float64), z.copy() - 1, n,
    )


def baseline_ratio(stack, config: Optional[SystemConfig] = None, lam=DEFAULT_LAMBDA,
                   gauge=-1, e0=None) -> ExposureEstimate:
    """Noise-model-free estimate from mean linear ratios of selected pixels.

    Tiling and spanning-tree selection are kept, but every candidate edge has
    unit weight, so the anchors are the lowest-index valid samples rather
    than the most reliable ones.
    """
    cfg = replace(config or SystemConfig(), weight_mode="uniform", noise_params=None)
    system = build_system(stack, cfg)
    e0 = stack.log_priors() if e0 is None else np.asarray(e0, dtype=np.float64)
    est = solve_wls(pair_ratio_system(system), e0, lam, gauge)
    est.extra["n_equations"] = len(system)
    return est
