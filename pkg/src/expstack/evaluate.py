"""Synthetic evaluation: exposure-ratio accuracy across scenes, seeds and ISOs."""
import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import ExpStackError
from .estimate import estimate_exposures
from .merge import banding_score, is_monotone, merge
from .noise import CANON_S100, NoiseProfile
from .scenes import gradient_scene
from .simulate import SimConfig, simulate_stack
from .solve import SolveConfig, baseline_ratio
from .stack import ExposureEstimate
from .system import SystemConfig

logger = logging.getLogger(__name__)

METHODS = ("exif-corrupted", "baseline", "btf-external", "pairwise-wls", "greedy-mst-wls")
NOT_IMPLEMENTED = {"btf-external": "not implemented (external histogram-based method)"}
DEFAULT_ISOS = (100, 200, 400, 800)


def relative_rmse(e_hat, e_true):
    """RMSE in percent of ``d_hat_i / d_i - 1`` after aligning the longest exposure.

    The longest exposure is the gauge and is left out of the average.
    """
    e_hat = np.asarray(e_hat, dtype=np.float64)
    e_true = np.asarray(e_true, dtype=np.float64)
    if e_hat.shape != e_true.shape or e_hat.ndim != 1:
        raise ValueError(f"length mismatch: {e_hat.shape} vs {e_true.shape}")
    if e_hat.size < 2:
        return 0.0
    g = int(np.argmax(e_true))
    diff = (e_hat - e_hat[g]) - (e_true - e_true[g])
    ratio_err = np.expm1(np.delete(diff, g))
    return float(100.0 * np.sqrt(np.mean(ratio_err ** 2)))


def mean_ci95(values):
    """Mean and half-width of a Student-t 95% interval (nan half-width for n < 2)."""
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    if v.size < 2:
        return float(v.mean()), float("nan")
    half = stats.t.ppf(0.975, v.size - 1) * v.std(ddof=1) / math.sqrt(v.size)
    return float(v.mean()), float(half)


@dataclass
class EvalConfig:
    """Everything that defines an experiment besides the scenes."""

    isos: Sequence[int] = DEFAULT_ISOS
    seeds: int = 20
    base_seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    profile: NoiseProfile = CANON_S100
    weight_mode: str = "calibrated"
    lam: float = 10.0
    tile_size: int = 16
    k: int = 50
    lower_frac: float = 0.01
    upper_frac: float = 0.95
    # corrupted priors would make the tile filter reject good tiles
    outlier_threshold_log: float = math.inf
    threads: int = 1

    def to_dict(self):
        return {
            "isos": list(self.isos), "seeds": self.seeds, "base_seed": self.base_seed,
            "sim": self.sim.to_dict(), "profile": self.profile.name,
            "weight_mode": self.weight_mode, "lambda": self.lam,
            "tile_size": self.tile_size, "k": self.k,
            "valid_range": [self.lower_frac, self.upper_frac],
            "outlier_threshold_log": None if math.isinf(self.outlier_threshold_log)
            else self.outlier_threshold_log,
            "threads": self.threads,
        }

    def cell_seed(self, scene_index, rep):
        return int(np.random.SeedSequence([self.base_seed, scene_index, rep]).generate_state(1)[0])


@dataclass
class EvalReport:
    records: list
    config: dict
    methods: list
    seed: int
    banding: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def failures(self):
        return [r for r in self.records if r["status"] not in ("ok", "skipped")]

    def values(self, method, iso=None):
        return [r["rmse"] for r in self.records
                if r["method"] == method and r["status"] == "ok" and (iso is None or r["iso"] == iso)]

    def summary(self):
        """``{method: {iso: {mean, ci95, n}}}`` plus an ``all`` entry per method."""
        out = {}
        isos = sorted({r["iso"] for r in self.records})
        for m in self.methods:
            if m in NOT_IMPLEMENTED:
                out[m] = {"note": NOT_IMPLEMENTED[m]}
                continue
            entry = {}
            for iso in isos + [None]:
                vals = self.values(m, iso)
                mean, half = mean_ci95(vals)
                entry["all" if iso is None else str(iso)] = {"mean": mean, "ci95": half, "n": len(vals)}
            out[m] = entry
        return out

    def mean(self, method, iso=None):
        return mean_ci95(self.values(method, iso))[0]

    def to_dict(self):
        return {
            "config": self.config, "seed": self.seed, "methods": self.methods,
            "summary": self.summary(), "banding": self.banding, "timings_s": self.timings,
            "failures": self.failures, "records": self.records,
        }

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, default=_json_default))

    def write_csv(self, path):
        """One row per ISO, mean and 95% half-width per method."""
        summ = self.summary()
        isos = sorted({r["iso"] for r in self.records})
        cols = [m for m in self.methods if m not in NOT_IMPLEMENTED]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iso"] + [f"{m}_{s}" for m in cols for s in ("mean", "ci95")])
            for iso in isos:
                row = [iso]
                for m in cols:
                    cell = summ[m][str(iso)]
                    row += [f"{cell['mean']:.6g}", f"{cell['ci95']:.6g}"]
                w.writerow(row)

    def write_gnuplot(self, path):
        summ = self.summary()
        isos = sorted({r["iso"] for r in self.records})
        cols = [m for m in self.methods if m not in NOT_IMPLEMENTED]
        lines = ["# iso " + " ".join(f"{m}_mean {m}_ci95" for m in cols)]
        for iso in isos:
            vals = []
            for m in cols:
                cell = summ[m][str(iso)]
                vals += [f"{cell['mean']:.6g}", f"{cell['ci95']:.6g}"]
            lines.append(f"{iso} " + " ".join(vals))
        Path(path).write_text("\n".join(lines) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _run_method(method, sim, params, cfg: EvalConfig):
    stack = sim.stack
    if method == "exif-corrupted":
        return stack.log_priors()
    sys_cfg = SystemConfig(
        tile_size=cfg.tile_size, k=cfg.k, weight_mode=cfg.weight_mode,
        lower_frac=cfg.lower_frac, upper_frac=cfg.upper_frac, noise_params=params,
    )
    if method == "baseline":
        return baseline_ratio(stack, sys_cfg, cfg.lam).e_hat
    topology = {"pairwise-wls": "pairwise", "greedy-mst-wls": "greedy"}[method]
    res = estimate_exposures(stack, replace(sys_cfg, topology=topology),
                             SolveConfig(lam=cfg.lam, outlier_threshold_log=cfg.outlier_threshold_log))
    return res.estimate.e_hat


def run_cell(scene_name, scene_index, radiance, iso, rep, cfg: EvalConfig, methods):
    """Simulate one corrupted stack and score every method on it."""
    seed = cfg.cell_seed(scene_index, rep)
    params = cfg.profile.params(iso)
    base = {"scene": scene_name, "iso": iso, "rep": rep, "seed": seed}
    try:
        sim = simulate_stack(radiance, replace(cfg.sim, iso=iso, seed=seed), params)
    except (ExpStackError, ValueError) as exc:
        return [dict(base, method=m, rmse=float("nan"), time_s=0.0, status=f"failed: {exc}")
                for m in methods]
    out = []
    for m in methods:
        if m in NOT_IMPLEMENTED:
            out.append(dict(base, method=m, rmse=float("nan"), time_s=0.0, status="skipped"))
            continue
        t0 = time.perf_counter()
        try:
            e_hat = _run_method(m, sim, params, cfg)
            rmse, status = relative_rmse(e_hat, sim.e_true), "ok"
        except (ExpStackError, np.linalg.LinAlgError, ValueError) as exc:
            logger.warning("%s failed on %s iso %d rep %d: %s", m, scene_name, iso, rep, exc)
            rmse, status = float("nan"), f"failed: {exc}"
        out.append(dict(base, method=m, rmse=rmse, time_s=time.perf_counter() - t0, status=status))
    return out


def run_experiment(scenes, config: Optional[EvalConfig] = None, methods=None) -> EvalReport:
    """Score ``methods`` on every ``(scene, ISO, repetition)`` cell.

    ``scenes`` is a list of ``(name, radiance)`` pairs or bare radiance maps.
    """
    cfg = config or EvalConfig()
    methods = list(methods or METHODS)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
    scenes = [s if isinstance(s, tuple) else (f"scene-{k}", s) for k, s in enumerate(scenes)]
    if not scenes:
        raise ValueError("need at least one scene")
    for iso in cfg.isos:
        cfg.profile.params(iso)

    cells = [(name, k, rad, iso, rep)
             for k, (name, rad) in enumerate(scenes)
             for iso in cfg.isos for rep in range(cfg.seeds)]
    t0 = time.perf_counter()
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            chunks = list(pool.map(lambda c: run_cell(*c, cfg, methods), cells))
    else:
        chunks = [run_cell(*c, cfg, methods) for c in cells]
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (r["scene"], r["iso"], r["rep"], methods.index(r["method"])))
    elapsed = time.perf_counter() - t0
    per_method = {m: float(sum(r["time_s"] for r in records if r["method"] == m)) for m in methods}
    return EvalReport(records, cfg.to_dict(), methods, cfg.base_seed,
                      timings={"total": elapsed, "per_method": per_method})


def banding_experiment(seeds=range(10), iso=800, profile=CANON_S100, stops=13, width=128,
                       rows=8192, exposure_times=(0.5, 2.0, 4.0), rel_std=0.15,
                       weight_mode="calibrated"):
    """Merge a linear ramp with corrupted and with estimated exposures.

    The scanline is the merge averaged over ``rows`` identical rows, which
    keeps per-pixel noise from masking the steps at saturation transitions.
    """
    params = profile.params(iso)
    ramp = gradient_scene(stops, width, rows)[:, :, None]
    ramp = ramp / ramp.max()
    runs = []
    for seed in seeds:
        sim = simulate_stack(ramp, SimConfig(exposure_times=exposure_times, iso=iso, seed=seed,
                                             corruption_rel_std=rel_std), params)
        est = estimate_exposures(sim.stack, SystemConfig(weight_mode=weight_mode,
                                                         noise_params=params)).estimate
        exif = ExposureEstimate.from_prior(sim.stack.log_priors())
        line_exif = merge(sim.stack, exif, params, "inverse-variance")[0][..., 0].mean(axis=0)
        line_est = merge(sim.stack, est, params, "inverse-variance")[0][..., 0].mean(axis=0)
        s_exif, s_est = banding_score(line_exif), banding_score(line_est)
        runs.append({
            "seed": seed, "exif_score": s_exif, "estimate_score": s_est,
            "ratio": s_exif / s_est if s_est > 0 else float("inf"),
            "estimate_monotone": is_monotone(line_est),
            "exif_error": np.expm1(sim.e_exif - sim.e_true).tolist(),
        })
    ratios = [r["ratio"] for r in runs]
    return {
        "iso": iso, "width": width, "rows": rows, "stops": stops,
        "exposure_times": list(exposure_times), "rel_std": rel_std,
        "median_ratio": float(np.median(ratios)),
        "all_monotone": all(r["estimate_monotone"] for r in runs),
        "runs": runs,
    }
