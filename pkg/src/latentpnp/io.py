"""Tensor and image file formats.

LRT1 layout: ``b"LRT1"``, little-endian u32 ``ndim``, ``ndim`` little-endian
u32 dims, then row-major little-endian float32 data.
"""

import struct
from pathlib import Path

import cv2
import numpy as np

from .errors import MissingFileError, ShapeError

MAGIC = b"LRT1"


def write_lrt1(path, array):
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes(order="C"))


def read_lrt1(path):
    path = Path(path)
    if not path.exists():
        raise MissingFileError(path, "LRT1 tensor")
    buf = path.read_bytes()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not an LRT1 file")
    (ndim,) = struct.unpack_from("<I", buf, 4)
    dims = struct.unpack_from(f"<{ndim}I", buf, 8)
    offset = 8 + 4 * ndim
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) - offset != 4 * count:
        raise ValueError(f"{path}: payload size does not match dims {dims}")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    return data.reshape(dims).astype(np.float64)


def write_png(path, image, bits=8):
    """Write a ``(C, H, W)`` or ``(H, W)`` image in [0, 1] as 8- or 16-bit PNG.

    Values are clipped to [0, 1] and scaled linearly.
    """
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[0] == 1:
            arr = arr[0]
        elif arr.shape[0] == 3:
            arr = np.transpose(arr, (1, 2, 0))[..., ::-1]  # cv2 expects BGR
        else:
            raise ShapeError(f"PNG export needs 1 or 3 channels, got {arr.shape[0]}")
    peak = 255 if bits == 8 else 65535
    dtype = np.uint8 if bits == 8 else np.uint16
    q = np.round(np.clip(arr, 0.0, 1.0) * peak).astype(dtype)
    if not cv2.imwrite(str(path), np.ascontiguousarray(q)):
        raise OSError(f"could not write {path}")


def read_png(path, channels=None):
    """Read a PNG to a float64 ``(C, H, W)`` array scaled to [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(path, "image")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValueError(f"{path}: unreadable image")
    peak = 65535.0 if raw.dtype == np.uint16 else 255.0
    img = raw.astype(np.float64) / peak
    if img.ndim == 2:
        img = img[None]
    else:
        img = np.transpose(img[..., :3][..., ::-1], (2, 0, 1))
    if channels == 1 and img.shape[0] == 3:
        img = img.mean(axis=0, keepdims=True)
    elif channels == 3 and img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    return np.ascontiguousarray(img)


def load_array(path, channels=None):
    """Load an LRT1 tensor or PNG image depending on the file suffix."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        return read_png(path, channels=channels)
    return read_lrt1(path)
