"""Procedural HDR radiance maps used by the evaluation harness.

Values are relative radiance with the scene's brightest diffuse level near
1.0; light sources may exceed 1 and saturate every exposure.
"""
import numpy as np
from scipy.ndimage import gaussian_filter

SCENE_KINDS = (
    "log-gradient", "sky", "blobs", "falloff", "texture",
    "mondrian", "steps", "vignette", "horizon", "waves",
)


def _grid(size):
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w]
    return yy / max(h - 1, 1), xx / max(w - 1, 1)


def _colorize(lum, rng, spread=0.15):
    tint = 1.0 + spread * (rng.random(3) - 0.5)
    return lum[:, :, None] * tint[None, None, :]


def make_scene(kind, size=(512, 512), seed=0):
    """Return an ``(H, W, 3)`` radiance map of the named kind."""
    rng = np.random.default_rng(seed)
    v, u = _grid(size)
    h, w = size
    if kind == "log-gradient":
        lum = 2.0 ** (-12.0 * u)
    elif kind == "sky":
        lum = 0.5 * 2.0 ** (-9.0 * v)
        cy, cx = 0.15 + 0.2 * rng.random(), 0.2 + 0.6 * rng.random()
        r2 = (v - cy) ** 2 + (u - cx) ** 2
        lum = lum + 4.0 * np.exp(-r2 / 0.0008) + 0.3 * np.exp(-r2 / 0.02)
    elif kind == "blobs":
        lum = np.full(size, 2.0 ** -11)
        for _ in range(12):
            cy, cx = rng.random(2)
            s = 0.02 + 0.1 * rng.random()
            peak = 2.0 ** (-10 * rng.random())
            lum += peak * np.exp(-((v - cy) ** 2 + (u - cx) ** 2) / (2 * s * s))
    elif kind == "falloff":
        cy, cx = -0.05, 0.3 + 0.4 * rng.random()
        lum = 1.0 / (1.0 + ((v - cy) ** 2 + (u - cx) ** 2) / 0.001)
    elif kind == "texture":
        field = gaussian_filter(rng.standard_normal(size), sigma=6)
        field = (field - field.min()) / (np.ptp(field) + 1e-12)
        lum = 2.0 ** (-11.0 * (1 - field))
    elif kind == "mondrian":
        lum = np.full(size, 2.0 ** -8)
        for _ in range(40):
            y0, x0 = rng.integers(0, h), rng.integers(0, w)
            hh, ww = rng.integers(h // 16, h // 3), rng.integers(w // 16, w // 3)
            lum[y0:y0 + hh, x0:x0 + ww] = 2.0 ** (-12 * rng.random())
        lum = gaussian_filter(lum, sigma=1.0)
    elif kind == "steps":
        levels = 2.0 ** -np.arange(0, 13)
        band = np.minimum((u * len(levels)).astype(int), len(levels) - 1)
        lum = levels[band] * (0.8 + 0.2 * v)
    elif kind == "vignette":
        r2 = (v - 0.5) ** 2 + (u - 0.5) ** 2
        lum = 2.0 ** (-24.0 * r2)
    elif kind == "horizon":
        sky = 0.6 * 2.0 ** (-12.0 * v)
        field = gaussian_filter(rng.standard_normal(size), sigma=4)
        field = (field - field.min()) / (np.ptp(field) + 1e-12)
        ground = 2.0 ** (-6.0 - 6.0 * field)
        lum = np.where(v < 0.45, sky, ground)
    elif kind == "waves":
        lum = 2.0 ** (-6.0 * (1 + np.sin(9 * u + 3 * np.sin(5 * v))) * (0.6 + 0.4 * v))
    else:
        raise ValueError(f"unknown scene kind {kind!r}; choose from {SCENE_KINDS}")
    return _colorize(lum, rng)


def desk_scenes(n=10, size=(512, 512), seed=0):
    """The fixed evaluation set: ``n`` scenes cycling through the kinds."""
    return [
        (f"{SCENE_KINDS[k % len(SCENE_KINDS)]}-{k}", make_scene(SCENE_KINDS[k % len(SCENE_KINDS)], size, seed + k))
        for k in range(n)
    ]


def gradient_scene(stops=13, width=1024, rows=1):
    """The banding test chart: identical linear ramps stacked ``rows`` high."""
    from .simulate import synth_gradient
    ramp = synth_gradient(stops, width)
    return np.repeat(ramp, rows, axis=0)
