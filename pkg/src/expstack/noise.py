"""Signal-dependent camera noise model and the row weights derived from it.

Variance of a raw value with mean ``mu`` is ``alpha * mu + beta``. Parameters
are expressed for sensor values normalised to ``[0, 1]``; callers divide raw
values by the white level before using them here.
"""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataContractError, NoiseDomainError, UnknownISOError

GREEN = 1


@dataclass(frozen=True)
class NoiseParameters:
    """Per-channel noise coefficients at one gain setting."""

    alpha: tuple
    beta: tuple
    iso: int = 0

    def __post_init__(self):
        alpha = tuple(float(a) for a in np.atleast_1d(self.alpha))
        beta = tuple(float(b) for b in np.atleast_1d(self.beta))
        if len(alpha) != len(beta):
            raise DataContractError("alpha and beta need the same number of channels")
        if any(not a > 0 for a in alpha):
            raise DataContractError(f"alpha must be > 0 per channel, got {alpha}")
        if any(not b >= 0 for b in beta):
            raise DataContractError(f"beta must be >= 0 per channel, got {beta}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def n_channels(self):
        return len(self.alpha)

    def for_channel_count(self, channels):
        """Parameters matching an image with ``channels`` channels.

        Monochrome images take the green-channel coefficients.
        """
        if channels == self.n_channels:
            return self
        if channels == 1 and self.n_channels == 3:
            return NoiseParameters((self.alpha[GREEN],), (self.beta[GREEN],), self.iso)
        raise DataContractError(
            f"cannot map {self.n_channels}-channel noise parameters onto {channels} channels"
        )

    def arrays(self):
        return np.asarray(self.alpha), np.asarray(self.beta)


class NoiseProfile:
    """Named collection of :class:`NoiseParameters` keyed by exact ISO."""

    def __init__(self, name, entries):
        self.name = name
        self._entries = {int(p.iso): p for p in entries}

    @property
    def isos(self):
        return sorted(self._entries)

    def params(self, iso):
        try:
            return self._entries[int(iso)]
        except (KeyError, ValueError, TypeError):
            raise UnknownISOError(iso, self._entries) from None

    def to_dict(self):
        return {
            "name": self.name,
            "entries": [
                {"iso": iso, "alpha": list(p.alpha), "beta": list(p.beta)}
                for iso, p in sorted(self._entries.items())
            ],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            entries = [NoiseParameters(e["alpha"], e["beta"], int(e["iso"])) for e in data["entries"]]
            return cls(data.get("name", "custom"), entries)
        except (KeyError, TypeError) as exc:
            raise DataContractError(f"malformed noise profile: {exc}") from exc

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


# Canon PowerShot S100, sensor values normalised to [0, 1]; columns R, G, B.
CANON_S100 = NoiseProfile(
    "canon-s100",
    [
        NoiseParameters((2.46e-5, 1.67e-5, 7.41e-5), (3.58e-8, 2.13e-8, 1.28e-7), 100),
        NoiseParameters((4.57e-5, 3.02e-5, 1.32e-4), (9.89e-8, 6.07e-8, 2.66e-7), 200),
        NoiseParameters((9.12e-5, 5.95e-5, 2.59e-4), (2.21e-7, 1.72e-7, 5.61e-7), 400),
        NoiseParameters((1.85e-4, 1.19e-4, 5.26e-4), (4.94e-7, 4.28e-7, 1.14e-6), 800),
    ],
)

BUILTIN_PROFILES = {CANON_S100.name: CANON_S100}


def get_profile(name_or_path):
    """Resolve a built-in profile name or a path to a profile JSON file."""
    if isinstance(name_or_path, NoiseProfile):
        return name_or_path
    if name_or_path in BUILTIN_PROFILES:
        return BUILTIN_PROFILES[name_or_path]
    path = Path(name_or_path)
    if path.exists():
        return NoiseProfile.from_json(path)
    raise DataContractError(
        f"unknown noise profile {name_or_path!r}; built-ins: {sorted(BUILTIN_PROFILES)}"
    )


def _coeffs(params, channel):
    return params.alpha[channel], params.beta[channel]


def pixel_variance(mu, params: NoiseParameters, channel=GREEN):
    """Variance ``alpha * mu + beta`` of a normalised pixel with mean ``mu``."""
    mu = np.asarray(mu, dtype=np.float64)
    if np.any(mu < 0) or np.any(np.isnan(mu)):
        raise NoiseDomainError("pixel_variance requires mu >= 0")
    alpha, beta = _coeffs(params, channel)
    out = alpha * mu + beta
    return out if out.ndim else float(out)


def log_moments(y, params: NoiseParameters, channel=GREEN):
    """First-order mean and variance of ``ln Y`` given an observed value ``y``.

    The observation stands in for the unknown mean, so the result is
    ``(ln y, (alpha*y + beta) / y**2)``.
    """
    y = np.asarray(y, dtype=np.float64)
    if np.any(~(y > 0)):
        raise NoiseDomainError("log_moments requires y > 0")
    alpha, beta = _coeffs(params, channel)
    mean = np.log(y)
    var = (alpha * y + beta) / (y * y)
    if mean.ndim == 0:
        return float(mean), float(var)
    return mean, var


def _check_positive(*arrays):
    for a in arrays:
        if np.any(~(a > 0)):
            raise NoiseDomainError("row weights require strictly positive pixel values")


def row_weight_calibrated(y_i, y_j, params: NoiseParameters, channel=GREEN, check=True):
    """Inverse variance of ``ln y_i - ln y_j`` under the calibrated noise model.

    ``channel`` may be an integer or an integer array broadcasting against the
    pixel values.
    """
    y_i = np.asarray(y_i, dtype=np.float64)
    y_j = np.asarray(y_j, dtype=np.float64)
    if check:
        _check_positive(y_i, y_j)
    alpha, beta = params.arrays()
    a = alpha[channel]
    b = beta[channel]
    w = 1.0 / ((a * y_i + b) / (y_i * y_i) + (a * y_j + b) / (y_j * y_j))
    return w if w.ndim else float(w)


def row_weight_calibration_free(y_i, y_j, check=True):
    """Weight ``(1/y_i + 1/y_j)**-1``; the calibrated weight with ``beta = 0``
    up to the common factor ``alpha``."""
    y_i = np.asarray(y_i, dtype=np.float64)
    y_j = np.asarray(y_j, dtype=np.float64)
    if check:
        _check_positive(y_i, y_j)
    w = (y_i * y_j) / (y_i + y_j)
    return w if w.ndim else float(w)
