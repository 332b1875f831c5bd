"""Portable float map (PFM) and 8-bit PGM I/O."""
from pathlib import Path

import numpy as np

from .errors import UnreadableFileError


def read_pfm(path):
    """Read a PFM file into an ``(H, W)`` or ``(H, W, 3)`` float32 array.

    Rows are stored bottom-up on disk and returned top-down. The sign of the
    scale field selects byte order (negative means little-endian).
    """
    path = Path(path)
    try:
        with open(path, "rb") as f:
            tag = f.readline().strip()
            dims = f.readline().split()
            while dims and dims[0].startswith(b"#"):
                dims = f.readline().split()
            scale = float(f.readline().strip())
            data = f.read()
    except OSError as exc:
        raise UnreadableFileError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise UnreadableFileError(f"{path}: malformed PFM header") from exc

    if tag == b"PF":
        channels = 3
    elif tag == b"Pf":
        channels = 1
    else:
        raise UnreadableFileError(f"{path}: not a PFM file (tag {tag!r})")
    try:
        width, height = int(dims[0]), int(dims[1])
    except (IndexError, ValueError) as exc:
        raise UnreadableFileError(f"{path}: malformed PFM dimensions") from exc

    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    count = width * height * channels
    if len(data) < count * 4:
        raise UnreadableFileError(f"{path}: truncated PFM payload")
    img = np.frombuffer(data, dtype=dtype, count=count).astype(np.float32)
    shape = (height, width, channels) if channels == 3 else (height, width)
    return np.flipud(img.reshape(shape)).copy()


def write_pfm(path, image):
    """Write a 2-D (grey) or 3-channel float image as little-endian PFM."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2:
        tag = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM supports 1 or 3 channels, got shape {img.shape}")
    height, width = img.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(f"{width} {height}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(img).astype("<f4").tobytes())


def write_pgm(path, mask):
    """Write a boolean or uint8 mask as binary PGM (P5, maxval 255)."""
    arr = np.asarray(mask)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError("PGM mask must be 2-D")
    height, width = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode())
        f.write(arr.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise UnreadableFileError(f"{path}: not a binary PGM")
        width, height = map(int, f.readline().split())
        f.readline()
        data = f.read()
    return np.frombuffer(data, dtype=np.uint8, count=width * height).reshape(height, width)
