"""Command-line front end: ``expstack {estimate,merge,simulate,evaluate}``."""
import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import DataContractError, ExpStackError, UnsolvableSystemError
from .estimate import estimate_exposures
from .merge import MERGE_MODES, merge
from .noise import BUILTIN_PROFILES, get_profile
from .pfm import read_pfm, write_pfm, write_pgm
from .scenes import SCENE_KINDS, desk_scenes, gradient_scene, make_scene
from .simulate import CORRUPTION_MODES, EVAL_EXPOSURE_TIMES, SimConfig, simulate_stack
from .solve import SolveConfig
from .stack import ExposureEstimate, load_stack, save_stack
from .system import ANCHOR_ESTIMATES, TOPOLOGIES, WEIGHT_MODES, SystemConfig

logger = logging.getLogger("expstack")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_UNSOLVABLE = 4
EXIT_ALL_REJECTED = 5


class UsageError(Exception):
    pass


def _valid_range(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}")
    if not 0.0 <= lo < hi <= 1.0:
        raise argparse.ArgumentTypeError("valid range needs 0 <= lo < hi <= 1")
    return lo, hi


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v]


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v]


def _add_estimation_flags(p):
    p.add_argument("--weights", choices=WEIGHT_MODES, default="calibration-free")
    p.add_argument("--noise-profile", help=f"built-in name {sorted(BUILTIN_PROFILES)} or JSON file")
    p.add_argument("--iso", type=int, help="ISO row of the noise profile (default: from metadata)")
    p.add_argument("--lambda", dest="lam", type=float, default=10.0, help="Tikhonov weight")
    p.add_argument("--tile", type=int, default=16, help="tile edge length in pixels")
    p.add_argument("--k", type=int, default=50, help="spanning trees per tile")
    p.add_argument("--valid-range", type=_valid_range, default=(0.01, 0.95), metavar="LO:HI",
                   help="validity band as fractions of the white level")
    p.add_argument("--outlier-threshold", type=float, default=1.5,
                   help="reject tiles whose solution strays from the prior by more than this "
                        "ratio; 0 disables")
    p.add_argument("--topology", choices=TOPOLOGIES, default="greedy")
    p.add_argument("--anchor-estimate", choices=ANCHOR_ESTIMATES, default="neighborhood")


def build_parser():
    parser = argparse.ArgumentParser(prog="expstack", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults; explicit flags win")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("estimate", parents=[common], help="estimate exposure ratios of a stack")
    p.add_argument("--stack", nargs="+", required=True, help="PFM images")
    p.add_argument("--meta", required=True, help="JSON metadata, one entry per image")
    _add_estimation_flags(p)
    p.add_argument("--out", default="estimate.json")
    p.add_argument("--system-out", help="also write the reduced system as JSON")

    p = sub.add_parser("merge", parents=[common], help="merge a stack into an HDR image")
    p.add_argument("--stack", nargs="+", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--estimate", help="report written by 'estimate'")
    p.add_argument("--use-exif", action="store_true", help="merge with the metadata exposures")
    p.add_argument("--mode", choices=MERGE_MODES, default="mean")
    p.add_argument("--noise-profile")
    p.add_argument("--iso", type=int)
    p.add_argument("--valid-range", type=_valid_range, default=(0.01, 0.95), metavar="LO:HI")
    p.add_argument("--out", default="merged.pfm")
    p.add_argument("--mask-out", help="saturation mask (PGM); default next to --out")

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic stack")
    p.add_argument("--scene", default="gradient13",
                   help=f"gradient<stops>, one of {list(SCENE_KINDS)}, or a PFM radiance map")
    p.add_argument("--size", type=int, nargs=2, default=(512, 512), metavar=("H", "W"))
    p.add_argument("--times", type=_float_list, default=list(EVAL_EXPOSURE_TIMES))
    p.add_argument("--iso", type=int, default=100)
    p.add_argument("--noise-profile", default="canon-s100")
    p.add_argument("--bit-depth", type=int, default=14)
    p.add_argument("--corruption", type=float, default=0.15, help="relative std of metadata error")
    p.add_argument("--corruption-mode", choices=CORRUPTION_MODES, default="relative")
    p.add_argument("--out", default="sim")

    p = sub.add_parser("evaluate", parents=[common], help="run the synthetic accuracy experiment")
    p.add_argument("--scenes", default="10", help="number of procedural scenes, or PFM paths")
    p.add_argument("--size", type=int, nargs=2, default=(512, 512), metavar=("H", "W"))
    p.add_argument("--isos", type=_int_list, default=[100, 200, 400, 800])
    p.add_argument("--seeds", type=int, default=20, help="repetitions per scene and ISO")
    p.add_argument("--methods", default=None, help="comma-separated subset of methods")
    p.add_argument("--weights", choices=WEIGHT_MODES, default="calibrated")
    p.add_argument("--noise-profile", default="canon-s100")
    p.add_argument("--lambda", dest="lam", type=float, default=10.0)
    p.add_argument("--tile", type=int, default=16)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--banding-seeds", type=int, default=0,
                   help="also run the gradient banding experiment with this many seeds")
    p.add_argument("--out", default="eval")
    return parser


def parse_args(argv=None):
    """Parse ``argv``; values from ``--config`` act as defaults."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        if not isinstance(cfg, dict):
            parser.error("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        if "lambda" in cfg:
            cfg["lam"] = cfg.pop("lambda")
        if isinstance(cfg.get("valid_range"), str):
            cfg["valid_range"] = _valid_range(cfg["valid_range"])
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            parser.error(f"unknown keys in config: {unknown}")
        subparser.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return parser, args


def _noise_params(profile_name, iso, stack=None, channels=3):
    profile = get_profile(profile_name)
    if iso is None and stack is not None:
        isos = {m.iso for m in stack.metadata}
        if len(isos) != 1 or None in isos:
            raise UsageError("cannot infer the ISO from metadata; pass --iso")
        iso = isos.pop()
    return profile.params(int(iso)).for_channel_count(channels)


def cmd_estimate(args):
    if args.weights == "calibrated" and not args.noise_profile:
        raise UsageError("--weights calibrated requires --noise-profile")
    stack = load_stack(args.stack, args.meta)
    params = None
    if args.weights == "calibrated":
        params = _noise_params(args.noise_profile, args.iso, stack, stack.channel_count)
    lo, hi = args.valid_range
    sys_cfg = SystemConfig(tile_size=args.tile, k=args.k, weight_mode=args.weights, lower_frac=lo,
                           upper_frac=hi, noise_params=params, topology=args.topology,
                           threads=args.threads, anchor_estimate=args.anchor_estimate)
    thr = math.log(args.outlier_threshold) if args.outlier_threshold > 1 else math.inf
    solve_cfg = SolveConfig(lam=args.lam, outlier_threshold_log=thr)
    result = estimate_exposures(stack, sys_cfg, solve_cfg)
    config = dict(sys_cfg.to_dict(), **solve_cfg.to_dict(), noise_profile=args.noise_profile,
                  iso=None if params is None else params.iso)
    report = result.report(stack, config)
    Path(args.out).write_text(json.dumps(report, indent=2))
    if args.system_out:
        result.system.to_json(args.system_out)

    print(f"{'image':>5}  {'exif t':>12}  {'estimated t':>12}  {'correction':>10}")
    for k, (meta, ratio) in enumerate(zip(stack.metadata, result.estimate.ratio_vs_prior())):
        print(f"{k:5d}  {meta.exposure_time:12.6g}  {meta.exposure_time * ratio:12.6g}  {ratio:10.4f}")
    print(f"report written to {args.out}")
    if result.fallback:
        print("warning: every tile was rejected as an outlier; kept the metadata exposures",
              file=sys.stderr)
        return EXIT_ALL_REJECTED
    return EXIT_OK


def cmd_merge(args):
    if not args.use_exif and not args.estimate:
        raise UsageError("merge needs --estimate REPORT or --use-exif")
    if args.use_exif and args.estimate:
        raise UsageError("--estimate and --use-exif are mutually exclusive")
    stack = load_stack(args.stack, args.meta)
    e0 = stack.log_priors()
    if args.use_exif:
        est = ExposureEstimate.from_prior(e0)
    else:
        try:
            report = json.loads(Path(args.estimate).read_text())
            e_hat = np.asarray(report["e_hat"], dtype=np.float64)
        except (OSError, ValueError, KeyError) as exc:
            raise DataContractError(f"cannot read estimate report {args.estimate}: {exc}") from exc
        if e_hat.shape != e0.shape:
            raise DataContractError(f"report has {e_hat.size} exposures, stack has {e0.size}")
        est = ExposureEstimate(e_hat=e_hat, e0=e0, lam=report.get("lambda", 0.0))
    params = None
    if args.mode == "inverse-variance" and args.noise_profile:
        params = _noise_params(args.noise_profile, args.iso, stack, stack.channel_count)
    lo, hi = args.valid_range
    hdr, saturated = merge(stack, est, params, args.mode, lo, hi)
    write_pfm(args.out, hdr.astype(np.float32))
    mask_out = args.mask_out or str(Path(args.out).with_suffix("")) + "_saturated.pgm"
    write_pgm(mask_out, saturated)
    print(f"merged image written to {args.out} ({int(saturated.sum())} saturated pixels)")
    return EXIT_OK


def _scene_from_arg(name, size, seed):
    if name.startswith("gradient"):
        stops = int(name[len("gradient"):] or 13)
        ramp = gradient_scene(stops, size[1], size[0])
        return ramp / ramp.max()
    if name in SCENE_KINDS:
        return make_scene(name, tuple(size), seed)
    path = Path(name)
    if path.exists():
        return read_pfm(path).astype(np.float64)
    raise UsageError(f"unknown scene {name!r}; use gradient<stops>, {list(SCENE_KINDS)} or a PFM path")


def cmd_simulate(args):
    profile = get_profile(args.noise_profile)
    radiance = _scene_from_arg(args.scene, args.size, args.seed)
    channels = 1 if radiance.ndim == 2 else radiance.shape[2]
    params = profile.params(args.iso).for_channel_count(channels)
    cfg = SimConfig(exposure_times=args.times, iso=args.iso, bit_depth=args.bit_depth,
                    seed=args.seed, corruption_rel_std=args.corruption,
                    corruption_mode=args.corruption_mode)
    sim = simulate_stack(radiance, cfg, params)
    out = Path(args.out)
    save_stack(sim.stack, out)
    truth = {
        "scene": args.scene, "noise_profile": profile.name, "config": cfg.to_dict(),
        "e_true": sim.e_true.tolist(), "e_exif": sim.e_exif.tolist(),
        "exposure_times_true": np.exp(sim.e_true).tolist(),
        "exposure_times_exif": np.exp(sim.e_exif).tolist(),
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=2))
    print(f"wrote {len(sim.stack)} images, meta.json and truth.json to {out}")
    return EXIT_OK


def cmd_evaluate(args):
    from .evaluate import METHODS, EvalConfig, banding_experiment, run_experiment

    profile = get_profile(args.noise_profile)
    for iso in args.isos:
        profile.params(iso)
    if args.scenes.isdigit():
        scenes = desk_scenes(int(args.scenes), tuple(args.size), seed=args.seed)
    else:
        scenes = [(Path(p).stem, read_pfm(p).astype(np.float64)) for p in args.scenes.split(",")]
    methods = args.methods.split(",") if args.methods else list(METHODS)
    bad = sorted(set(methods) - set(METHODS))
    if bad:
        raise UsageError(f"unknown methods {bad}; choose from {list(METHODS)}")
    cfg = EvalConfig(isos=args.isos, seeds=args.seeds, base_seed=args.seed, profile=profile,
                     weight_mode=args.weights, lam=args.lam, tile_size=args.tile, k=args.k,
                     threads=args.threads)
    report = run_experiment(scenes, cfg, methods)
    if args.banding_seeds:
        report.banding = banding_experiment(range(args.banding_seeds), profile=profile)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "report.json")
    report.write_csv(out / "rmse.csv")
    report.write_gnuplot(out / "rmse.dat")
    for m, entry in report.summary().items():
        if "note" in entry:
            print(f"{m:16s} {entry['note']}")
        else:
            cells = "  ".join(f"{iso}: {c['mean']:.3f}%" for iso, c in entry.items() if iso != "all")
            print(f"{m:16s} {cells}")
    print(f"report written to {out}")
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "merge": cmd_merge, "simulate": cmd_simulate,
            "evaluate": cmd_evaluate}


def main(argv=None):
    parser, args = parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"expstack: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnsolvableSystemError as exc:
        print(f"expstack: unsolvable system: {exc}", file=sys.stderr)
        return EXIT_UNSOLVABLE
    except (DataContractError, ExpStackError) as exc:
        print(f"expstack: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
