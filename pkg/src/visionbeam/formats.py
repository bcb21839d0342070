"""Little-endian binary containers and small text formats.

Channel file (``BSCH``)::

    magic[4] version:u16 M:u32 K:u32 band:u8
    M*K complex entries as (re, im) float64 pairs, subcarrier-major
    (column-major over the M x K matrix)

Codebook files (``BSCB``) share that header with ``K`` holding the number
of beams, followed by the sin-space steering grid (B float64) and the
antenna spacing (float64).  Model checkpoints (``BSNN``) store a layer table
followed by every parameter tensor in declaration order.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .beamforming import Codebook
from .channel import BANDS, FrequencyChannel
from .learning import PARAM_ORDER, ClassifierModel

VERSION = 1
_HEADER = struct.Struct("<4sHIIB")
_BAND_CODES = {band: i for i, band in enumerate(BANDS)}

PathLike = Union[str, Path]


class FormatError(ValueError):
    """File does not hold the expected container."""


def _read_header(buf: bytes, magic: bytes):
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header")
    got, version, m, k, band = _HEADER.unpack_from(buf)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    return m, k, band


def _matrix_bytes(mat: np.ndarray) -> bytes:
    return np.asarray(mat, dtype="<c16").ravel(order="F").tobytes()


def _matrix_from(buf: bytes, offset: int, m: int, k: int) -> np.ndarray:
    n = m * k
    data = np.frombuffer(buf, dtype="<c16", count=n, offset=offset)
    if data.size != n:
        raise FormatError("truncated matrix payload")
    return data.reshape((m, k), order="F").astype(np.complex128)


def channel_to_bytes(channel: FrequencyChannel) -> bytes:
    m, k = channel.entries.shape
    return _HEADER.pack(b"BSCH", VERSION, m, k, _BAND_CODES[channel.band]) + _matrix_bytes(channel.entries)


def channel_from_bytes(buf: bytes) -> FrequencyChannel:
    m, k, band = _read_header(buf, b"BSCH")
    if band >= len(BANDS):
        raise FormatError(f"unknown band code {band}")
    expected = _HEADER.size + 16 * m * k
    if len(buf) != expected:
        raise FormatError(f"channel file has {len(buf)} bytes, expected {expected}")
    return FrequencyChannel(_matrix_from(buf, _HEADER.size, m, k), BANDS[band])


def write_channel(path: PathLike, channel: FrequencyChannel) -> None:
    Path(path).write_bytes(channel_to_bytes(channel))


def read_channel(path: PathLike) -> FrequencyChannel:
    return channel_from_bytes(Path(path).read_bytes())


def codebook_to_bytes(codebook: Codebook) -> bytes:
    m, b = codebook.vectors.shape
    return (
        _HEADER.pack(b"BSCB", VERSION, m, b, 0)
        + _matrix_bytes(codebook.vectors)
        + np.asarray(codebook.steering_grid, dtype="<f8").tobytes()
        + struct.pack("<d", codebook.antenna_spacing)
    )


def codebook_from_bytes(buf: bytes) -> Codebook:
    m, b, _ = _read_header(buf, b"BSCB")
    off = _HEADER.size + 16 * m * b
    if len(buf) != off + 8 * b + 8:
        raise FormatError("codebook file has the wrong length")
    vectors = _matrix_from(buf, _HEADER.size, m, b)
    grid = np.frombuffer(buf, dtype="<f8", count=b, offset=off).copy()
    (spacing,) = struct.unpack_from("<d", buf, off + 8 * b)
    return Codebook(vectors, grid, spacing)


def write_codebook(path: PathLike, codebook: Codebook) -> None:
    Path(path).write_bytes(codebook_to_bytes(codebook))


def read_codebook(path: PathLike) -> Codebook:
    return codebook_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------- checkpoints


def model_to_bytes(model: ClassifierModel) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<4sHI", b"BSNN", VERSION, len(PARAM_ORDER)))
    for name in PARAM_ORDER:
        shape = model.params[name].shape
        encoded = name.encode("ascii")
        out.write(struct.pack("<H", len(encoded)) + encoded)
        out.write(struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape))
    for name in PARAM_ORDER:
        out.write(np.asarray(model.params[name], dtype="<f8").tobytes())
    return out.getvalue()


def _take(stream: BinaryIO, n: int) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise FormatError("truncated checkpoint")
    return data


def model_from_bytes(buf: bytes) -> ClassifierModel:
    stream = io.BytesIO(buf)
    magic, version, count = struct.unpack("<4sHI", _take(stream, 10))
    if magic != b"BSNN":
        raise FormatError(f"bad magic {magic!r}, expected b'BSNN'")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    layers = []
    for _ in range(count):
        (n,) = struct.unpack("<H", _take(stream, 2))
        name = _take(stream, n).decode("ascii")
        (ndim,) = struct.unpack("<B", _take(stream, 1))
        shape = struct.unpack(f"<{ndim}I", _take(stream, 4 * ndim))
        layers.append((name, shape))
    if [name for name, _ in layers] != list(PARAM_ORDER):
        raise FormatError("checkpoint layer table does not match the network")
    params = {}
    for name, shape in layers:
        size = int(np.prod(shape))
        params[name] = np.frombuffer(_take(stream, 8 * size), dtype="<f8").reshape(shape).copy()
    if stream.read(1):
        raise FormatError("trailing bytes after checkpoint payload")
    return ClassifierModel(params)


def write_model(path: PathLike, model: ClassifierModel) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def read_model(path: PathLike) -> ClassifierModel:
    return model_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------- images


def write_ppm(path: PathLike, image: np.ndarray) -> None:
    """Binary P6 PPM, 8-bit."""
    image = np.asarray(image, dtype=np.uint8)
    h, w, c = image.shape
    if c != 3:
        raise ValueError("PPM images need 3 channels")
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + image.tobytes())


def read_ppm(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    pos += 1  # single whitespace byte before the raster
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise FormatError("only 8-bit binary P6 images are supported")
    w, h = int(fields[1]), int(fields[2])
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return raster.reshape(h, w, 3).copy()
