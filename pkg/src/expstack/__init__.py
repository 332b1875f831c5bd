"""Exposure-ratio estimation for multi-exposure HDR stacks.

The estimator reads the exposure ratios off the images themselves: it picks
pixel pairs that are reliable under a camera noise model, writes one
log-domain equation per pair and solves a small regularised least-squares
problem anchored to the metadata exposures.
"""
from .errors import (AllTilesRejectedWarning, DataContractError, ExpStackError,
                     UnknownISOError, UnsolvableSystemError)
from .estimate import EstimateResult, estimate_exposures
from .merge import banding_score, merge
from .noise import CANON_S100, NoiseParameters, NoiseProfile, get_profile
from .simulate import SimConfig, simulate_stack
from .solve import SolveConfig, baseline_ratio, solve_wls
from .stack import CaptureMetadata, ExposureEstimate, ExposureStack, load_stack, save_stack
from .system import ReducedSystem, SystemConfig, build_system

__version__ = "0.1.0"
