"""Binary checkpoint format (magic CDNT1).

Layout (all integers little-endian):

    magic        5 bytes  b"CDNT1"
    config_len   u32
    config       UTF-8 flat key=value text, stored verbatim
    param_count  u32
    then per parameter, sorted by name:
      name_len   u16
      name       UTF-8
      dtype_tag  u8 (0 = float32)
      rank       u8
      dims       rank x u32
      payload    row-major little-endian float32

Sorting makes save -> load -> save byte-identical regardless of how the
parameter registry was populated.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigError

MAGIC = b"CDNT1"
DTYPE_F32 = 0


def save_checkpoint(path, config_text, arrays):
    """arrays: {name: ndarray}; written as float32."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        blob = config_text.encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", DTYPE_F32, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Returns (config_text, {name: float32 ndarray})."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != MAGIC:
        raise ConfigError(f"{path}: not a checkpoint (magic {data[:5]!r})")
    pos = 5
    (config_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    config_text = data[pos : pos + config_len].decode("utf-8")
    pos += config_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        dtype_tag, rank = struct.unpack_from("<BB", data, pos)
        pos += 2
        if dtype_tag != DTYPE_F32:
            raise ConfigError(f"{path}: unsupported dtype tag {dtype_tag} for {name}")
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        arrays[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
        pos += 4 * size
    if pos != len(data):
        raise ConfigError(f"{path}: {len(data) - pos} trailing bytes")
    return config_text, arrays
