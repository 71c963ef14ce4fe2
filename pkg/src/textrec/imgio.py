"""Grayscale image I/O and resampling.

PGM (binary P5, maxval 255) is the mandatory codec: the writer emits a
canonical header so identical pixel data produces identical bytes, which the
golden-file and determinism tests rely on. PNG reading is a passthrough via
matplotlib's built-in decoder; PNG writing is out of scope. Images travel
through the library as float32 arrays in [0, 1].
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def to_unit(img):
    """Clamp to [0,1] float32; accepts uint8 or float input."""
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    return np.clip(arr.astype(np.float32), 0.0, 1.0)


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        if pos >= len(data):
            raise ConfigError(f"{path}: truncated PGM header")
        c = data[pos : pos + 1]
        if c == b"#":
            pos = data.find(b"\n", pos)
            if pos < 0:
                raise ConfigError(f"{path}: unterminated PGM comment")
            pos += 1
        elif c.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            fields.append(data[pos:end])
            pos = end
    if fields[0] != b"P5":
        raise ConfigError(f"{path}: not a binary P5 PGM (magic {fields[0]!r})")
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ConfigError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    if pixels.size != width * height:
        raise ConfigError(f"{path}: expected {width * height} pixels, got {pixels.size}")
    return pixels.reshape(height, width).copy()


def write_pgm(path, img):
    """img: float [0,1] or uint8; writes canonical 'P5\\n{W} {H}\\n255\\n' + bytes."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    if arr.ndim != 2:
        raise ConfigError(f"PGM writer needs a 2-D grayscale image, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_image(path):
    """Dispatch on extension; returns float32 in [0,1], shape (H, W)."""
    path = str(path)
    if path.lower().endswith(".pgm"):
        return to_unit(read_pgm(path))
    if path.lower().endswith(".png"):
        import matplotlib.image as mpimg

        arr = mpimg.imread(path)
        if arr.ndim == 3:
            arr = arr[..., :3].mean(axis=-1)
        return to_unit(arr)
    raise ConfigError(f"{path}: unsupported image format (expected .pgm or .png)")


def resize_bilinear(img, out_h, out_w):
    """Resample to (out_h, out_w) with bilinear interpolation, edges clamped."""
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - fx) + img[np.ix_(y0, x1)] * fx
    bot = img[np.ix_(y1, x0)] * (1 - fx) + img[np.ix_(y1, x1)] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)
