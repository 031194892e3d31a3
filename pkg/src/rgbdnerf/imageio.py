"""PFM and 8-bit PNG readers/writers."""

from __future__ import annotations

import re

import numpy as np
from PIL import Image


class PFMError(ValueError):
    pass


def write_pfm(path, img) -> None:
    """Write float32 PFM, little-endian (scale -1.0), rows bottom-to-top."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        tag = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise PFMError(f"PFM needs (H, W) or (H, W, 3) data, got {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        f.write(np.ascontiguousarray(np.flipud(img), dtype="<f4").tobytes())


_HEADER = re.compile(rb"^(P[Ff])\s+(\d+)\s+(\d+)\s+(\S+)\s", re.S)


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    m = _HEADER.match(data)
    if m is None:
        raise PFMError(f"{path}: malformed PFM header")
    tag, w, h, scale_s = m.groups()
    try:
        scale = float(scale_s)
    except ValueError:
        raise PFMError(f"{path}: scale/endianness field {scale_s!r} is not a number") from None
    if scale == 0:
        raise PFMError(f"{path}: scale 0 does not encode an endianness")
    channels = 3 if tag == b"PF" else 1
    w, h = int(w), int(h)
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    payload = data[m.end():]
    if len(payload) != 4 * count:
        order = "little" if scale < 0 else "big"
        raise PFMError(
            f"{path}: expected {4 * count} bytes of {order}-endian float data for {w}x{h}x{channels}, "
            f"found {len(payload)}"
        )
    img = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    img = img.reshape((h, w, channels) if channels == 3 else (h, w))
    return np.flipud(img).copy()


def write_png(path, img) -> None:
    """Write an image in [0, 1] as 8-bit PNG, rounding to nearest."""
    img = np.asarray(img, dtype=np.float64)
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im)
    return arr.astype(np.float64) / 255.0


def depth_to_gray(depth, near, far) -> np.ndarray:
    """Map depth to [0, 1] grayscale over [near, far]; invalid depth is black."""
    depth = np.asarray(depth, dtype=np.float64)
    g = np.clip((depth - near) / (far - near), 0.0, 1.0)
    return np.where(depth > 0, 1.0 - g, 0.0)
