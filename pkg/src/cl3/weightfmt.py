"""CL3W binary weight files.

Layout, all integers little-endian:

    magic "CL3W" | version u8 = 0x01 | frozen_prefix u8 | layer_count u32 |
    layer_count x (rows u32, cols u32) | all weights row-major f64, in
    layer order | all biases f64, in layer order | crc32 u32 (IEEE) over
    every preceding byte

The frozen_prefix byte records how many leading layers are a frozen
backbone, so pretrained weights round-trip with their freeze depth.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import ValidationError
from .network import Mlp

MAGIC = b"CL3W"
VERSION = 0x01
_MAX_LAYERS = 255


def encode_weights(mlp: Mlp) -> bytes:
    """Serialize a model to CL3W bytes."""
    if mlp.n_layers > _MAX_LAYERS:
        raise ValidationError(f"too many layers to encode: {mlp.n_layers}")
    parts = [MAGIC, struct.pack("<BB", VERSION, mlp.frozen_prefix)]
    parts.append(struct.pack("<I", mlp.n_layers))
    for w in mlp.weights:
        parts.append(struct.pack("<II", w.shape[0], w.shape[1]))
    for w in mlp.weights:
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    for b in mlp.biases:
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_weights(data: bytes) -> Mlp:
    """Parse CL3W bytes back into a model, verifying structure and CRC."""
    if len(data) < len(MAGIC) + 2 + 4 + 4:
        raise ValidationError("weight data too short for a CL3W file")
    if data[:4] != MAGIC:
        raise ValidationError("bad magic bytes: not a CL3W file")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != stored_crc:
        raise ValidationError("CL3W checksum mismatch: file corrupted")
    version, frozen_prefix = struct.unpack_from("<BB", data, 4)
    if version != VERSION:
        raise ValidationError(f"unsupported CL3W version {version}")
    (layer_count,) = struct.unpack_from("<I", data, 6)
    if layer_count < 1 or layer_count > _MAX_LAYERS:
        raise ValidationError(f"implausible layer count {layer_count}")
    offset = 10
    shapes = []
    for _ in range(layer_count):
        if offset + 8 > len(data) - 4:
            raise ValidationError("truncated CL3W layer table")
        rows, cols = struct.unpack_from("<II", data, offset)
        offset += 8
        if rows < 1 or cols < 1:
            raise ValidationError(f"invalid layer shape ({rows}, {cols})")
        shapes.append((rows, cols))
    for (prev_rows, prev_cols), (rows, _) in zip(shapes, shapes[1:]):
        if rows != prev_cols:
            raise ValidationError("layer shapes do not chain into a network")

    n_weights = sum(r * c for r, c in shapes)
    n_biases = sum(c for _, c in shapes)
    expected = offset + 8 * (n_weights + n_biases) + 4
    if len(data) != expected:
        raise ValidationError(
            f"CL3W payload has {len(data)} bytes, expected {expected}"
        )
    weights = []
    for rows, cols in shapes:
        count = rows * cols
        w = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        weights.append(w.reshape(rows, cols).astype(np.float64))
        offset += 8 * count
    biases = []
    for _, cols in shapes:
        b = np.frombuffer(data, dtype="<f8", count=cols, offset=offset)
        biases.append(b.astype(np.float64))
        offset += 8 * cols

    dims = (shapes[0][0],) + tuple(c for _, c in shapes)
    if frozen_prefix > layer_count:
        raise ValidationError(f"frozen_prefix {frozen_prefix} exceeds layer count")
    return Mlp(dims, weights, biases, frozen_prefix)


def save_weights(mlp: Mlp, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_weights(mlp))


def load_weights(path) -> Mlp:
    with open(path, "rb") as fh:
        return decode_weights(fh.read())
