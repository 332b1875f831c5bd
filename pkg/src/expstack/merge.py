"""Merge an exposure-compensated stack into one radiance map."""
import logging

import numpy as np

from .errors import ShapeMismatchError
from .noise import NoiseParameters
from .stack import ExposureEstimate, ExposureStack, compensate
from .system import validity_mask

logger = logging.getLogger(__name__)

MERGE_MODES = ("mean", "inverse-variance")


def _sample_weights(stack, est, params, mode):
    n, h, w, c = stack.images.shape
    if mode == "mean":
        return np.ones((n, 1, 1, 1))
    if params is None:
        # shot noise only; any positive scale gives the same weighted mean
        logger.info("inverse-variance merge without noise parameters; assuming shot noise")
        params = NoiseParameters((1.0,) * c, (0.0,) * c)
    alpha, beta = params.for_channel_count(c).arrays()
    white = stack.white_levels.reshape(n, 1, 1, 1)
    y = stack.images / white
    var = np.maximum(alpha * y + beta, 1e-12) * white ** 2
    d = np.exp(est.e_hat).reshape(n, 1, 1, 1)
    return d ** 2 / var


def merge(stack: ExposureStack, est: ExposureEstimate, params=None, mode="mean",
          lower=0.01, upper=0.95):
    """Average the compensated valid samples of every pixel.

    Returns ``(hdr, saturated)`` where ``hdr`` is ``(H, W, C)`` float64 and
    ``saturated`` is an ``(H, W)`` mask of pixels whose value came from the
    clipped shortest exposure because every image was over-exposed.

    Pixels with no valid sample but at least one unsaturated one take the
    longest unsaturated exposure.
    """
    if mode not in MERGE_MODES:
        raise ValueError(f"merge mode must be one of {MERGE_MODES}, got {mode!r}")
    if len(est) != len(stack):
        raise ShapeMismatchError(f"estimate has {len(est)} entries for a stack of {len(stack)}")
    x = compensate(stack, est)
    white = stack.white_levels.reshape(-1, 1, 1, 1)
    y = stack.images
    valid = validity_mask(y, white, lower, upper)
    wts = np.where(valid, _sample_weights(stack, est, params, mode), 0.0)
    wsum = wts.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        hdr = (wts * x).sum(axis=0) / wsum

    missing = wsum <= 0
    if np.any(missing):
        unsat = y < upper * white
        n = len(stack)
        # longest unsaturated exposure index, or -1 when all are saturated
        idx = np.where(unsat, np.arange(n).reshape(-1, 1, 1, 1), -1).max(axis=0)
        pick = np.where(idx >= 0, idx, 0)
        fallback = np.take_along_axis(x, pick[None], axis=0)[0]
        hdr = np.where(missing, fallback, hdr)
        saturated = np.any(missing & (idx < 0), axis=-1)
    else:
        saturated = np.zeros(stack.shape[:2], dtype=bool)
    return hdr, saturated


def banding_score(row):
    """Largest absolute second difference of a scanline over its mean slope.

    A straight line scores 0; a step of height ``h`` on slope ``s`` scores
    ``h / s``.
    """
    row = np.asarray(row, dtype=np.float64).ravel()
    if row.size < 3:
        raise ValueError("banding_score needs a scanline of at least 3 samples")
    slope = abs(row[-1] - row[0]) / (row.size - 1)
    second = np.abs(np.diff(row, 2)).max()
    if slope == 0:
        return 0.0 if second == 0 else float("inf")
    return float(second / slope)


def is_monotone(row, smooth=3):
    """True when the scanline is non-decreasing after a ``smooth``-tap box filter."""
    row = np.asarray(row, dtype=np.float64).ravel()
    if smooth > 1:
        row = np.convolve(row, np.ones(smooth) / smooth, mode="valid")
    return bool(np.all(np.diff(row) >= 0))
