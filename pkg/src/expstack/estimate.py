"""End-to-end exposure estimation: build, reject outlier tiles, solve."""
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import UnsolvableSystemError
from .stack import ExposureEstimate, ExposureStack
from .solve import SolveConfig, reject_outlier_tiles, solve_wls
from .system import ReducedSystem, SystemConfig, build_system

logger = logging.getLogger(__name__)


@dataclass
class EstimateResult:
    estimate: ExposureEstimate
    system: ReducedSystem
    kept_tiles: set
    rejected_tiles: set
    fallback: bool = False
    timings: dict = field(default_factory=dict)

    def report(self, stack: Optional[ExposureStack] = None, config=None):
        """JSON-ready summary of the estimate."""
        est = self.estimate
        out = {
            "e_hat": est.e_hat.tolist(),
            "e_hat_raw": est.e_hat_raw.tolist(),
            "e0": est.e0.tolist(),
            "lambda": est.lam,
            "gauge": est.gauge,
            "kept_tiles": sorted(self.kept_tiles),
            "rejected_tiles": sorted(self.rejected_tiles),
            "residual_norm": est.residual_norm,
            "per_exposure_ratio_vs_exif": est.ratio_vs_prior().tolist(),
            "n_equations": len(self.system),
            "fallback_to_prior": self.fallback,
            "timings_s": self.timings,
        }
        if stack is not None:
            out["exposure_times_exif"] = [m.exposure_time for m in stack.metadata]
        if config is not None:
            out["config"] = config
        return out


def estimate_exposures(stack: ExposureStack, system_config: Optional[SystemConfig] = None,
                       solve_config: Optional[SolveConfig] = None, e0=None) -> EstimateResult:
    """Estimate log scaling constants for ``stack`` from its own pixels.

    Falls back to the metadata prior (with ``fallback=True``) when every tile
    is rejected as an outlier.
    """
    scfg = system_config or SystemConfig()
    vcfg = solve_config or SolveConfig()
    e0 = stack.log_priors() if e0 is None else np.asarray(e0, dtype=np.float64)
    t0 = time.perf_counter()
    system = build_system(stack, scfg)
    t1 = time.perf_counter()
    outl = reject_outlier_tiles(system, e0, vcfg.lam, vcfg.outlier_threshold_log, vcfg.gauge)
    t2 = time.perf_counter()
    if outl.all_rejected:
        est = ExposureEstimate.from_prior(e0, vcfg.lam)
        est.gauge = vcfg.gauge % len(e0)
        return EstimateResult(est, outl.system, outl.kept, outl.rejected, True,
                              {"build": t1 - t0, "outliers": t2 - t1, "solve": 0.0})
    kept = outl.system
    if scfg.require_connected and vcfg.lam == 0 and not kept.is_connected():
        unreachable = kept.unreachable_from(len(e0) - 1)
        raise UnsolvableSystemError(f"exposures {unreachable} lost all equations", unreachable)
    est = solve_wls(kept, e0, vcfg.lam, vcfg.gauge)
    t3 = time.perf_counter()
    logger.info("estimated %d exposures from %d equations", len(e0), len(kept))
    return EstimateResult(est, kept, outl.kept, outl.rejected, False,
                          {"build": t1 - t0, "outliers": t2 - t1, "solve": t3 - t2})
