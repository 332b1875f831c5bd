"""Synthetic captures under the signal-dependent noise model.

Random numbers come from numpy's Philox4x64 counter-based generator keyed by
``SeedSequence([seed, stream])``; normals are drawn by the inverse CDF
(``scipy.special.ndtri``) applied to 53-bit uniforms on the open interval
(0, 1). Each image of a stack uses its own stream, so results do not depend
on the order or parallelism of simulation.
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .noise import NoiseParameters
from .stack import CaptureMetadata, ExposureStack

CORRUPTION_STREAM = 0x5EED
EVAL_EXPOSURE_TIMES = (1 / 64, 1 / 8, 1.0, 8.0)


@dataclass
class SimConfig:
    exposure_times: Sequence[float] = EVAL_EXPOSURE_TIMES
    iso: int = 100
    bit_depth: int = 14
    seed: int = 0
    corruption_rel_std: float = 0.15
    corruption_mode: str = "relative"
    headroom: float = 0.9
    gain: float = 1.0

    def __post_init__(self):
        if not 8 <= int(self.bit_depth) <= 16:
            raise ValueError(f"bit_depth must lie in [8, 16], got {self.bit_depth}")
        if self.corruption_rel_std < 0:
            raise ValueError("corruption_rel_std must be >= 0")
        if self.corruption_mode not in CORRUPTION_MODES:
            raise ValueError(f"corruption_mode must be one of {CORRUPTION_MODES}")
        self.exposure_times = tuple(float(t) for t in self.exposure_times)

    @property
    def white_level(self):
        return float(2 ** int(self.bit_depth) - 1)

    def to_dict(self):
        return {
            "exposure_times": list(self.exposure_times),
            "iso": self.iso,
            "bit_depth": self.bit_depth,
            "seed": self.seed,
            "corruption_rel_std": self.corruption_rel_std,
            "corruption_mode": self.corruption_mode,
            "headroom": self.headroom,
        }


def _bitgen(seed, stream):
    return np.random.Philox(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream)]))


def uniform_open(seed, stream, size):
    """Uniforms on (0, 1) built from the top 53 bits of raw Philox output."""
    n = int(np.prod(size)) if np.ndim(size) else int(size)
    raw = _bitgen(seed, stream).random_raw(n)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return u.reshape(size)


def standard_normal(seed, stream, size):
    return ndtri(uniform_open(seed, stream, size))


def simulate_capture(radiance, d, params: NoiseParameters, bit_depth=14, seed=0,
                     white=None, stream=0):
    """Simulate one raw capture of ``radiance`` at scaling constant ``d``.

    ``radiance`` is in raw units per unit ``d``. Gaussian noise of variance
    ``alpha*mu + beta`` (normalised units, ``mu`` the signal clipped to the
    white level) is added to the signal, the result is clipped to
    ``[0, white]`` and quantised mid-tread to ``2**bit_depth`` levels.
    """
    x = np.asarray(radiance, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("radiance must be non-negative")
    levels = 2 ** int(bit_depth) - 1
    white = float(levels) if white is None else float(white)
    signal = d * x
    mu = np.clip(signal, 0.0, white)

    channels = 1 if x.ndim < 3 else x.shape[-1]
    alpha, beta = params.for_channel_count(channels).arrays()
    if x.ndim < 3:
        alpha, beta = alpha[0], beta[0]
    sigma = np.sqrt(alpha * (mu / white) + beta) * white
    # noise rides on the unclipped signal so over-exposed pixels stay at white
    y = signal + sigma * standard_normal(seed, stream, mu.shape)

    step = white / levels
    y = np.rint(np.clip(y, 0.0, white) / step) * step
    return np.clip(y, 0.0, white)


CORRUPTION_MODES = ("relative", "log-scaled")


def corrupt_exposures(e, rel_std, seed=0, mode="log-scaled", reference=None):
    """Perturb log scaling constants to mimic inaccurate camera metadata.

    ``log-scaled``: ``e_i + N(0, rel_std * |e_i|)``, the literal form.
    ``relative``: every exposure except ``reference`` (default: the largest)
    gets a multiplicative error ``exp(N(0, rel_std))``, so each exposure ratio
    against the reference is off by about ``rel_std`` in relative terms.
    """
    e = np.asarray(e, dtype=np.float64)
    if rel_std < 0:
        raise ValueError("rel_std must be >= 0")
    z = standard_normal(seed, CORRUPTION_STREAM, e.shape)
    if mode == "log-scaled":
        eta = z * (rel_std * np.abs(e))
    elif mode == "relative":
        eta = z * rel_std
        ref = int(np.argmax(e)) if reference is None else int(reference)
        eta[ref] = 0.0
    else:
        raise ValueError(f"unknown corruption mode {mode!r}; choose from {CORRUPTION_MODES}")
    return e + eta


def synth_gradient(stops, width):
    """A one-row radiance ramp rising linearly from 1 to ``2**stops``."""
    if stops < 1:
        raise ValueError("stops must be >= 1")
    return np.linspace(1.0, 2.0 ** stops, int(width))[None, :]


@dataclass
class SimulatedStack:
    stack: ExposureStack
    e_true: np.ndarray
    e_exif: np.ndarray
    config: SimConfig
    extra: dict = field(default_factory=dict)


def simulate_stack(radiance, config: SimConfig, params: NoiseParameters,
                   radiance_scale: Optional[float] = None) -> SimulatedStack:
    """Simulate a full stack and attach corrupted metadata.

    When ``radiance_scale`` is None the radiance is scaled so that a value of
    1.0 reaches ``headroom * white`` in the shortest exposure.
    """
    times = np.asarray(config.exposure_times)
    white = config.white_level
    d_true = times * config.gain
    if radiance_scale is None:
        radiance_scale = config.headroom * white / d_true.min()
    x = np.asarray(radiance, dtype=np.float64) * radiance_scale
    if x.ndim == 2:
        x = x[:, :, None]

    images = [
        simulate_capture(x, d, params, config.bit_depth, config.seed, white, stream=i).astype(np.float32)
        for i, d in enumerate(d_true)
    ]
    e_true = np.log(d_true)
    e_exif = corrupt_exposures(e_true, config.corruption_rel_std, config.seed, config.corruption_mode)
    metadata = [
        CaptureMetadata(exposure_time=float(np.exp(e) / config.gain), gain=config.gain,
                        white_level=white, black_level=0.0, iso=config.iso)
        for e in e_exif
    ]
    stack = ExposureStack(images, metadata, sort=True)
    order = stack.order
    return SimulatedStack(stack, e_true[order], e_exif[order], config,
                          {"radiance_scale": radiance_scale})
