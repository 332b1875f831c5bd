"""Exposure-stack data model, scaling constants and file I/O."""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    InvalidMetadataError,
    MissingMetadataError,
    ShapeMismatchError,
    UnreadableFileError,
)
from .pfm import read_pfm, write_pfm

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CaptureMetadata:
    """Per-image capture settings as reported by the camera."""

    exposure_time: float
    gain: float = 1.0
    aperture_fnumber: float = 8.0
    focal_length: Optional[float] = None
    white_level: float = 1.0
    black_level: float = 0.0
    iso: Optional[int] = None

    def __post_init__(self):
        for name in ("exposure_time", "gain", "aperture_fnumber"):
            value = getattr(self, name)
            try:
                ok = math.isfinite(float(value)) and float(value) > 0
            except (TypeError, ValueError):
                ok = False
            if not ok:
                raise InvalidMetadataError(f"{name} must be a positive finite number, got {value!r}")
        if self.focal_length is not None and not self.focal_length > 0:
            raise InvalidMetadataError(f"focal_length must be positive, got {self.focal_length!r}")
        if not self.black_level >= 0:
            raise InvalidMetadataError(f"black_level must be >= 0, got {self.black_level!r}")
        if not self.white_level > self.black_level:
            raise InvalidMetadataError(
                f"white_level ({self.white_level}) must exceed black_level ({self.black_level})"
            )

    @classmethod
    def from_dict(cls, entry):
        try:
            return cls(
                exposure_time=float(entry["exposure_time"]),
                gain=float(entry.get("gain", 1.0)),
                aperture_fnumber=float(entry.get("aperture", entry.get("aperture_fnumber", 8.0))),
                focal_length=(None if entry.get("focal_length") is None
                              else float(entry["focal_length"])),
                white_level=float(entry["white_level"]),
                black_level=float(entry.get("black_level", 0.0)),
                iso=None if entry.get("iso") is None else int(entry["iso"]),
            )
        except KeyError as exc:
            raise InvalidMetadataError(f"metadata entry lacks required field {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise InvalidMetadataError(f"bad metadata entry {entry!r}: {exc}") from exc

    def to_dict(self):
        out = {
            "exposure_time": self.exposure_time,
            "gain": self.gain,
            "aperture": self.aperture_fnumber,
            "white_level": self.white_level,
            "black_level": self.black_level,
        }
        if self.focal_length is not None:
            out["focal_length"] = self.focal_length
        if self.iso is not None:
            out["iso"] = self.iso
        return out


def scaling_constant(meta: CaptureMetadata) -> float:
    """Return the factor ``d`` that maps relative radiance to raw values.

    ``d = t * g * pi * (f / 2a)**2``. Without a focal length the aperture
    term is taken to be constant across the stack and ``d = t * g``.
    """
    if not isinstance(meta, CaptureMetadata):
        raise InvalidMetadataError("scaling_constant expects CaptureMetadata")
    d = meta.exposure_time * meta.gain
    if meta.focal_length is not None:
        d *= math.pi * (meta.focal_length / (2.0 * meta.aperture_fnumber)) ** 2
    return d


def log_scaling_constants(metadata: Sequence[CaptureMetadata]) -> np.ndarray:
    return np.log([scaling_constant(m) for m in metadata])


class ExposureStack:
    """N black-level-subtracted linear images of one scene, sorted by ``d``.

    Images are held as one read-only ``(N, H, W, C)`` float32 array.
    ``white_levels`` are expressed in post-subtraction units.
    """

    def __init__(self, images, metadata: Sequence[CaptureMetadata], *, sort=True):
        metadata = list(metadata)
        if isinstance(images, np.ndarray) and images.ndim == 4:
            arrays = images
        else:
            arrays = [np.asarray(im) for im in images]
            shapes = {a.shape for a in arrays}
            if len(shapes) > 1:
                raise ShapeMismatchError(f"images have differing shapes: {sorted(shapes)}")
            arrays = np.stack([a if a.ndim == 3 else a[:, :, None] for a in arrays])
        arrays = np.asarray(arrays, dtype=np.float32)
        if len(metadata) != arrays.shape[0]:
            raise MissingMetadataError(
                f"{arrays.shape[0]} images but {len(metadata)} metadata entries"
            )
        if arrays.shape[0] < 2:
            raise ShapeMismatchError("an exposure stack needs at least two images")
        if arrays.shape[3] not in (1, 3):
            raise ShapeMismatchError(f"channel count must be 1 or 3, got {arrays.shape[3]}")
        if sort:
            d = np.array([scaling_constant(m) for m in metadata])
            order = np.argsort(d, kind="stable")
            if np.any(order != np.arange(len(order))):
                arrays = arrays[order]
                metadata = [metadata[k] for k in order]
            self.order = order
        else:
            self.order = np.arange(len(metadata))
        arrays.setflags(write=False)
        self._images = arrays
        self.metadata = tuple(metadata)
        self._derived = {}

    def derived(self, key, compute):
        """Memoise a quantity computed from the (immutable) images."""
        if key not in self._derived:
            value = compute()
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            self._derived[key] = value
        return self._derived[key]

    @classmethod
    def from_raw(cls, images, metadata, **kwargs):
        """Build a stack from raw images, subtracting each image's black level."""
        metadata = list(metadata)
        if len(metadata) != len(images):
            raise MissingMetadataError(f"{len(images)} images but {len(metadata)} metadata entries")
        shapes = {np.shape(im) for im in images}
        if len(shapes) > 1:
            raise ShapeMismatchError(f"images have differing shapes: {sorted(shapes)}")
        out = []
        for im, meta in zip(images, metadata):
            im = np.asarray(im, dtype=np.float32)
            out.append(im - np.float32(meta.black_level) if meta.black_level else im)
        return cls(out, metadata, **kwargs)

    @property
    def images(self):
        return self._images

    def __len__(self):
        return self._images.shape[0]

    @property
    def n_images(self):
        return self._images.shape[0]

    @property
    def shape(self):
        """``(H, W, C)`` of every image."""
        return self._images.shape[1:]

    @property
    def channel_count(self):
        return self._images.shape[3]

    @property
    def white_levels(self):
        return np.array([m.white_level - m.black_level for m in self.metadata])

    @property
    def scaling_constants(self):
        return np.array([scaling_constant(m) for m in self.metadata])

    def log_priors(self):
        """EXIF-derived log scaling constants ``e0``."""
        return np.log(self.scaling_constants)


@dataclass
class ExposureEstimate:
    """Per-image natural-log scaling constants with their metadata prior.

    ``e_hat`` is gauge-aligned (one exposure pinned to its prior);
    ``e_hat_raw`` keeps the minimiser before that shift.
    """

    e_hat: np.ndarray
    e0: np.ndarray
    lam: float
    residual_norm: float = 0.0
    e_hat_raw: Optional[np.ndarray] = None
    gauge: int = -1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.e_hat = np.asarray(self.e_hat, dtype=np.float64)
        self.e0 = np.asarray(self.e0, dtype=np.float64)
        if self.e_hat.shape != self.e0.shape or self.e_hat.ndim != 1:
            raise ShapeMismatchError("e_hat and e0 must be 1-D and of equal length")
        if not (np.all(np.isfinite(self.e_hat)) and np.all(np.isfinite(self.e0))):
            raise ValueError("exposure estimate contains non-finite entries")
        if self.e_hat_raw is None:
            self.e_hat_raw = self.e_hat.copy()

    def __len__(self):
        return len(self.e_hat)

    @property
    def scaling_constants(self):
        return np.exp(self.e_hat)

    def ratio_vs_prior(self):
        """Multiplicative correction ``d_hat / d_exif`` per exposure."""
        return np.exp(self.e_hat - self.e0)

    @classmethod
    def from_prior(cls, e0, lam=0.0):
        e0 = np.asarray(e0, dtype=np.float64)
        return cls(e_hat=e0.copy(), e0=e0.copy(), lam=lam)


def compensate(stack: ExposureStack, est: ExposureEstimate) -> np.ndarray:
    """Divide every image by its estimated scaling constant ``exp(e_hat)``."""
    if len(est) != len(stack):
        raise ShapeMismatchError(f"estimate has {len(est)} entries for a stack of {len(stack)}")
    d = np.exp(est.e_hat)
    return stack.images.astype(np.float64) / d[:, None, None, None]


def read_metadata(path):
    path = Path(path)
    try:
        entries = json.loads(path.read_text())
    except OSError as exc:
        raise UnreadableFileError(f"cannot read metadata {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidMetadataError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(entries, dict) and "images" in entries:
        entries = entries["images"]
    if not isinstance(entries, list):
        raise InvalidMetadataError(f"{path}: expected a JSON array of capture entries")
    return [CaptureMetadata.from_dict(e) for e in entries]


def write_metadata(path, metadata, extra_fields=None):
    entries = [m.to_dict() for m in metadata]
    if extra_fields:
        for entry, extra in zip(entries, extra_fields):
            entry.update(extra)
    Path(path).write_text(json.dumps(entries, indent=2))


def load_stack(image_paths, metadata_path) -> ExposureStack:
    """Load PFM images plus a JSON metadata sidecar (entries in file order)."""
    image_paths = [Path(p) for p in image_paths]
    metadata = read_metadata(metadata_path)
    if len(metadata) != len(image_paths):
        raise MissingMetadataError(
            f"{len(image_paths)} images but {len(metadata)} metadata entries in {metadata_path}"
        )
    images = []
    for p in image_paths:
        if not p.exists():
            raise UnreadableFileError(f"image not found: {p}")
        images.append(read_pfm(p))
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise ShapeMismatchError(f"images have differing shapes: {sorted(shapes)}")
    logger.debug("loaded %d images of shape %s", len(images), images[0].shape)
    return ExposureStack.from_raw(images, metadata)


def save_stack(stack: ExposureStack, directory, prefix="img", extra_fields=None):
    """Write a stack as ``<prefix>_<i>.pfm`` files plus ``meta.json``.

    Images are written in stack order with black level zero, so a reload
    reproduces the stored values bit-exactly.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    metadata = []
    for i, (img, meta) in enumerate(zip(stack.images, stack.metadata)):
        p = directory / f"{prefix}_{i}.pfm"
        write_pfm(p, img)
        paths.append(p)
        metadata.append(CaptureMetadata(
            exposure_time=meta.exposure_time, gain=meta.gain,
            aperture_fnumber=meta.aperture_fnumber, focal_length=meta.focal_length,
            white_level=meta.white_level - meta.black_level, black_level=0.0, iso=meta.iso,
        ))
    meta_path = directory / "meta.json"
    write_metadata(meta_path, metadata, extra_fields)
    return paths, meta_path
