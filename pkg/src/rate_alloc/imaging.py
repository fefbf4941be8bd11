"""Grayscale image I/O, block partitioning, and the orthonormal 2-D DCT.

Pixel intensities live in [0, 1].  Images are split into non-overlapping
B x B blocks, zero-padding the bottom/right edges when the dimensions are
not multiples of B.  All types are immutable after construction and every
function here is pure, so everything is safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np


class PgmError(ValueError):
    """Base class for PGM parse failures."""


class UnsupportedMagicError(PgmError):
    pass


class MalformedHeaderError(PgmError):
    pass


class TruncatedPayloadError(PgmError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Image:
    """A grayscale image: 2-D row-major intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValueError("image pixels must be a non-empty 2-D array")
        if not np.isfinite(px).all() or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("image intensities must be finite and in [0, 1]")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class BlockGrid:
    """An image chopped into B x B blocks, row-major over the grid."""

    block_size: int
    rows: int
    cols: int
    pad_bottom: int
    pad_right: int
    blocks: np.ndarray  # shape (rows * cols, B, B)

    def __post_init__(self):
        b = self.block_size
        if not (0 <= self.pad_bottom < b and 0 <= self.pad_right < b):
            raise ValueError("padding must be smaller than the block size")
        blocks = np.asarray(self.blocks, dtype=np.float64)
        if blocks.shape != (self.rows * self.cols, b, b):
            raise ValueError("block array shape inconsistent with grid")
        object.__setattr__(self, "blocks", _frozen(blocks))

    @property
    def block_count(self) -> int:
        return self.rows * self.cols

    @property
    def padded_height(self) -> int:
        return self.rows * self.block_size

    @property
    def padded_width(self) -> int:
        return self.cols * self.block_size

    @property
    def padded_pixel_count(self) -> int:
        return self.block_count * self.block_size * self.block_size


def partition(image: Image, block_size: int) -> BlockGrid:
    """Split an image into B x B blocks, zero-padding the bottom/right edges."""
    if block_size < 2:
        raise ValueError("block size must be at least 2")
    h, w = image.height, image.width
    rows = -(-h // block_size)
    cols = -(-w // block_size)
    pad_bottom = rows * block_size - h
    pad_right = cols * block_size - w
    padded = np.pad(image.pixels, ((0, pad_bottom), (0, pad_right)))
    blocks = (
        padded.reshape(rows, block_size, cols, block_size)
        .swapaxes(1, 2)
        .reshape(rows * cols, block_size, block_size)
    )
    return BlockGrid(block_size, rows, cols, pad_bottom, pad_right, blocks)


def assemble(grid: BlockGrid, original_h: int, original_w: int) -> Image:
    """Inverse of :func:`partition`: stitch blocks, crop padding, clamp to [0, 1]."""
    b = grid.block_size
    if not (0 < original_h <= grid.padded_height and grid.padded_height - original_h < b):
        raise ValueError("original height inconsistent with grid")
    if not (0 < original_w <= grid.padded_width and grid.padded_width - original_w < b):
        raise ValueError("original width inconsistent with grid")
    padded = (
        grid.blocks.reshape(grid.rows, grid.cols, b, b)
        .swapaxes(1, 2)
        .reshape(grid.padded_height, grid.padded_width)
    )
    return Image(np.clip(padded[:original_h, :original_w], 0.0, 1.0))


# ---------------------------------------------------------------------------
# Orthonormal 2-D DCT
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def dct_matrix(size: int) -> np.ndarray:
    """Orthonormal DCT-II matrix M with M @ M.T = I."""
    k = np.arange(size)[:, None]
    i = np.arange(size)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * size)) * math.sqrt(2.0 / size)
    m[0] *= math.sqrt(0.5)
    return _frozen(m)


def dct2(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II of a square block (energy preserving)."""
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        raise ValueError("dct2 expects a square block")
    m = dct_matrix(block.shape[0])
    return m @ block @ m.T


def idct2(coeffs: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`dct2`."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[0] != coeffs.shape[1]:
        raise ValueError("idct2 expects a square block")
    m = dct_matrix(coeffs.shape[0])
    return m.T @ coeffs @ m


def dct2_blocks(blocks: np.ndarray) -> np.ndarray:
    """Apply :func:`dct2` to a stack of blocks, shape (n, B, B)."""
    blocks = np.asarray(blocks, dtype=np.float64)
    m = dct_matrix(blocks.shape[-1])
    return m @ blocks @ m.T


def vectorize(block: np.ndarray) -> np.ndarray:
    """Row-major flattening of a square block to a length-B^2 vector."""
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        raise ValueError("vectorize expects a square block")
    return block.reshape(-1).copy()


def devectorize(vector: np.ndarray, block_size: int) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.size != block_size * block_size:
        raise ValueError("vector length does not match block size")
    return vector.reshape(block_size, block_size).copy()


# ---------------------------------------------------------------------------
# PGM I/O (P2 ASCII and P5 binary, maxval <= 65535; written as P5 maxval 255)
# ---------------------------------------------------------------------------

class _PgmScanner:
    """Tokenizer over PGM header bytes that tracks byte offsets for errors."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def skip_separators(self) -> None:
        data = self.data
        while self.pos < len(data):
            c = data[self.pos : self.pos + 1]
            if c.isspace():
                self.pos += 1
            elif c == b"#":
                nl = data.find(b"\n", self.pos)
                self.pos = len(data) if nl < 0 else nl + 1
            else:
                return

    def read_int(self, what: str) -> int:
        self.skip_separators()
        start = self.pos
        while self.pos < len(self.data) and self.data[self.pos : self.pos + 1].isdigit():
            self.pos += 1
        if self.pos == start:
            raise MalformedHeaderError(
                f"expected {what} at byte {start}, found "
                f"{self.data[start:start + 8]!r}"
            )
        return int(self.data[start : self.pos])


def load_pgm(path) -> Image:
    """Read a P2 (ASCII) or P5 (binary) PGM file, scaling intensities by maxval."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise UnsupportedMagicError(f"unsupported magic {magic!r} at byte 0 (want P2 or P5)")
    scanner = _PgmScanner(data)
    scanner.pos = 2
    width = scanner.read_int("width")
    height = scanner.read_int("height")
    maxval = scanner.read_int("maxval")
    if width <= 0 or height <= 0 or not (1 <= maxval <= 65535):
        raise MalformedHeaderError(
            f"invalid dimensions or maxval ({width}x{height}, maxval {maxval}) "
            f"in header ending at byte {scanner.pos}"
        )
    count = width * height

    if magic == b"P5":
        if scanner.pos >= len(data) or not data[scanner.pos : scanner.pos + 1].isspace():
            raise MalformedHeaderError(
                f"expected single whitespace after maxval at byte {scanner.pos}"
            )
        start = scanner.pos + 1
        sample_bytes = 1 if maxval <= 255 else 2
        need = count * sample_bytes
        payload = data[start : start + need]
        if len(payload) < need:
            raise TruncatedPayloadError(
                f"payload truncated at byte {start + len(payload)}: "
                f"need {need} bytes, found {len(payload)}"
            )
        dtype = np.uint8 if sample_bytes == 1 else np.dtype(">u2")
        samples = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    else:
        samples = np.empty(count, dtype=np.float64)
        for i in range(count):
            scanner.skip_separators()
            if scanner.pos >= len(data):
                raise TruncatedPayloadError(
                    f"payload truncated at byte {scanner.pos}: "
                    f"expected {count} samples, found {i}"
                )
            samples[i] = scanner.read_int("sample")

    if samples.max(initial=0.0) > maxval:
        raise PgmError(f"sample exceeds maxval {maxval} in payload of {path}")
    return Image((samples / maxval).reshape(height, width))


def encode_pgm(image: Image) -> bytes:
    """Binary P5 bytes with maxval 255, intensities rounded half-up."""
    quantized = np.floor(image.pixels * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + quantized.tobytes()


def save_pgm(image: Image, path) -> None:
    """Write a binary P5 PGM with maxval 255, rounding intensities half-up."""
    Path(path).write_bytes(encode_pgm(image))
