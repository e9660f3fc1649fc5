"""Readers and writers for the on-disk formats used by the pipeline.

* ENVI-style cubes: ``.hdr`` text header plus a raw binary file in bsq, bil
  or bip interleave.
* Binary PGM (P5) for reference and change maps.
* Binary PPM (P6) for colour error maps.
* PFG1 float grids for probability maps: ASCII ``"PFG1 h w\\n"`` then
  little-endian float64 values, row-major.
"""

from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np

from .errors import IntegrityError, ParseError

ENVI_DTYPES = {
    1: np.uint8,
    2: np.int16,
    3: np.int32,
    4: np.float32,
    5: np.float64,
    12: np.uint16,
    13: np.uint32,
    14: np.int64,
    15: np.uint64,
}
_DTYPE_CODES = {np.dtype(v): k for k, v in ENVI_DTYPES.items()}
REQUIRED_KEYS = ("samples", "lines", "bands", "data type", "interleave", "byte order")
_RAW_SUFFIXES = (".img", ".raw", ".dat", ".bin", "")


def parse_envi_header(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines, joining ``{...}`` values that span lines."""
    lines = text.splitlines()
    if lines and lines[0].strip().upper() == "ENVI":
        lines = lines[1:]
    header: dict[str, str] = {}
    i = 0
    while i < len(lines):
        line = lines[i]
        i += 1
        if "=" not in line:
            continue
        key, value = line.split("=", 1)
        value = value.strip()
        if value.startswith("{"):
            while "}" not in value and i < len(lines):
                value += "\n" + lines[i]
                i += 1
        header[key.strip().lower()] = value
    return header


def _header_int(header, key):
    try:
        return int(header[key])
    except KeyError:
        raise ParseError(f"ENVI header missing required key {key!r}") from None
    except ValueError:
        raise ParseError(f"ENVI header key {key!r} is not an integer: {header[key]!r}") from None


def _raw_path_for(header_path: Path, header: dict) -> Path:
    if "data file" in header:
        candidate = header_path.parent / header["data file"].strip("{} ")
        if candidate.exists():
            return candidate
    stem = header_path.with_suffix("")
    for suffix in _RAW_SUFFIXES:
        candidate = Path(str(stem) + suffix)
        if candidate.exists() and candidate != header_path:
            return candidate
    raise IntegrityError(f"no raw data file found next to {header_path}")


def read_envi(header_path: str | os.PathLike) -> np.ndarray:
    """Load an ENVI cube as a float64 ``(lines, samples, bands)`` array.

    Values equal to the header's ``data ignore value`` and any non-finite
    values are mapped to 0.
    """
    header_path = Path(header_path)
    header = parse_envi_header(header_path.read_text())
    for key in REQUIRED_KEYS:
        if key not in header:
            raise ParseError(f"ENVI header missing required key {key!r}")
    samples = _header_int(header, "samples")
    lines = _header_int(header, "lines")
    bands = _header_int(header, "bands")
    code = _header_int(header, "data type")
    if code not in ENVI_DTYPES:
        raise ParseError(f"unsupported ENVI data type {code}")
    interleave = header["interleave"].strip().lower()
    if interleave not in ("bsq", "bil", "bip"):
        raise ParseError(f"unknown interleave {interleave!r}")
    byte_order = _header_int(header, "byte order")
    offset = int(header.get("header offset", "0"))

    dtype = np.dtype(ENVI_DTYPES[code]).newbyteorder(">" if byte_order == 1 else "<")
    raw_path = _raw_path_for(header_path, header)
    expected = offset + samples * lines * bands * dtype.itemsize
    actual = raw_path.stat().st_size
    if actual != expected:
        raise IntegrityError(f"{raw_path}: {actual} bytes on disk, header implies {expected}")
    flat = np.fromfile(raw_path, dtype=dtype, offset=offset)

    if interleave == "bsq":
        cube = flat.reshape(bands, lines, samples).transpose(1, 2, 0)
    elif interleave == "bil":
        cube = flat.reshape(lines, bands, samples).transpose(0, 2, 1)
    else:
        cube = flat.reshape(lines, samples, bands)
    cube = np.ascontiguousarray(cube, dtype=np.float64)

    if "data ignore value" in header:
        cube[cube == float(header["data ignore value"])] = 0.0
    cube[~np.isfinite(cube)] = 0.0
    return cube


def write_envi(
    header_path: str | os.PathLike,
    cube: np.ndarray,
    interleave: str = "bsq",
    byte_order: int = 0,
    dtype=np.float64,
    description: str = "",
) -> Path:
    """Write ``(lines, samples, bands)`` data as ``<stem>.hdr`` + ``<stem>.img``."""
    header_path = Path(header_path)
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise ValueError(f"cube must be (lines, samples, bands), got shape {cube.shape}")
    lines, samples, bands = cube.shape
    interleave = interleave.lower()
    if interleave == "bsq":
        ordered = cube.transpose(2, 0, 1)
    elif interleave == "bil":
        ordered = cube.transpose(0, 2, 1)
    elif interleave == "bip":
        ordered = cube
    else:
        raise ValueError(f"unknown interleave {interleave!r}")
    dt = np.dtype(dtype)
    code = _DTYPE_CODES[dt]
    raw_path = header_path.with_suffix(".img")
    np.ascontiguousarray(ordered).astype(dt.newbyteorder(">" if byte_order == 1 else "<")).tofile(raw_path)
    text = [
        "ENVI",
        f"description = {{{description}}}",
        f"samples = {samples}",
        f"lines = {lines}",
        f"bands = {bands}",
        "header offset = 0",
        "file type = ENVI Standard",
        f"data type = {code}",
        f"interleave = {interleave}",
        f"byte order = {byte_order}",
    ]
    header_path.write_text("\n".join(text) + "\n")
    return raw_path


# -- netpbm ---------------------------------------------------------------------
_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_netpbm(path, magic: bytes):
    blob = Path(path).read_bytes()
    pos = 0
    tokens = []
    while len(tokens) < 4:
        m = _TOKEN.match(blob, pos)
        if not m:
            raise ParseError(f"{path}: truncated netpbm header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != magic:
        raise ParseError(f"{path}: expected {magic.decode()} file, found {tokens[0][:2]!r}")
    width, height, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace byte after maxval
    return blob[pos:], width, height, maxval


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    data, width, height, maxval = _read_netpbm(path, b"P5")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height
    if len(data) < count * dtype.itemsize:
        raise IntegrityError(f"{path}: pixel data truncated")
    return np.frombuffer(data, dtype=dtype, count=count).reshape(height, width).astype(np.int64)


def write_pgm(path: str | os.PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"PGM image must be 2-d, got shape {image.shape}")
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(np.clip(image, 0, 255).astype(np.uint8).tobytes())


def read_reference(path: str | os.PathLike) -> np.ndarray:
    """Binary change map from a PGM: any nonzero pixel is 'changed'."""
    return (read_pgm(path) != 0).astype(np.int64)


def write_binary_map(path: str | os.PathLike, binary: np.ndarray) -> None:
    write_pgm(path, (np.asarray(binary) != 0).astype(np.uint8) * 255)


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    data, width, height, maxval = _read_netpbm(path, b"P6")
    if maxval > 255:
        raise ParseError(f"{path}: 16-bit PPM not supported")
    count = width * height * 3
    if len(data) < count:
        raise IntegrityError(f"{path}: pixel data truncated")
    return np.frombuffer(data, dtype=np.uint8, count=count).reshape(height, width, 3).copy()


def write_ppm(path: str | os.PathLike, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"PPM image must be (h, w, 3), got shape {rgb.shape}")
    height, width, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(rgb.astype(np.uint8).tobytes())


def write_pfg(path: str | os.PathLike, grid: np.ndarray) -> None:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError(f"float grid must be 2-d, got shape {grid.shape}")
    height, width = grid.shape
    with open(path, "wb") as fh:
        fh.write(f"PFG1 {height} {width}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(grid).astype("<f8").tobytes())


def read_pfg(path: str | os.PathLike) -> np.ndarray:
    blob = Path(path).read_bytes()
    newline = blob.find(b"\n")
    parts = blob[:newline].split()
    if newline < 0 or len(parts) != 3 or parts[0] != b"PFG1":
        raise ParseError(f"{path}: not a PFG1 float grid")
    height, width = int(parts[1]), int(parts[2])
    body = blob[newline + 1:]
    if len(body) != 8 * height * width:
        raise IntegrityError(f"{path}: expected {8 * height * width} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(height, width)
