"""Seeded orthonormal measurement operator and the linear baseline decoder.

The operator is a B^2 x B^2 matrix with orthonormal rows, built
deterministically from a seed: a standard-normal draw from numpy's PCG64
generator (ziggurat normal variates), orthonormalized by Householder QR,
with each row's sign fixed so its first nonzero entry is positive.  Rows
are consumed in native order, so "the next M rows" needs no extra state
across sampling stages, and the adjoint of the used rows is an exact
orthogonal projection, which makes reconstruction errors easy to reason
about.  Blocks that receive no measurements reconstruct to zero.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import BlockGrid, Image, assemble, devectorize, vectorize

_MAGIC = b"MBRM"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class MeasurementMatrix:
    """Orthonormal-row operator, reproducible from (dim, seed)."""

    dim: int
    seed: int
    rows: np.ndarray

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.float64)
        if rows.shape != (self.dim, self.dim):
            raise ValueError("operator must be square of side dim")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)


@dataclass(frozen=True)
class Segment:
    """Measurements taken from one contiguous row range (1-based, inclusive)."""

    stage: int
    row_start: int
    row_end: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.size != self.row_end - self.row_start + 1:
            raise ValueError("segment length does not match its row range")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class MeasurementRecord:
    """All measurements of one block, stage segments in sampling order."""

    block_index: int
    segments: tuple

    def __post_init__(self):
        expected_start = 1
        for seg in self.segments:
            if seg.row_start != expected_start:
                raise ValueError("segments must be contiguous from row 1")
            expected_start = seg.row_end + 1

    @property
    def measured_count(self) -> int:
        return sum(seg.values.size for seg in self.segments)

    def concatenated(self) -> np.ndarray:
        if not self.segments:
            return np.empty(0)
        return np.concatenate([seg.values for seg in self.segments])


def build_matrix(block_size: int, seed: int) -> MeasurementMatrix:
    """Deterministic orthonormal-row operator for B x B blocks.

    Generator: numpy PCG64 seeded with `seed`, standard_normal draws in
    C order; rows orthonormalized by QR of the transpose and sign-fixed.
    Retries with seed+1 (at most 8 times) on a rank-deficient draw.
    """
    if block_size < 2:
        raise ValueError("block size must be at least 2")
    dim = block_size * block_size
    for attempt in range(9):
        rng = np.random.Generator(np.random.PCG64(seed + attempt))
        gauss = rng.standard_normal((dim, dim))
        q, _ = np.linalg.qr(gauss.T)
        rows = q.T
        # sign convention: first nonzero entry of each row positive
        for i in range(dim):
            nz = np.flatnonzero(rows[i])
            if nz.size and rows[i, nz[0]] < 0:
                rows[i] = -rows[i]
        gram_err = np.abs(rows @ rows.T - np.eye(dim)).max()
        if gram_err <= 1e-9:
            return MeasurementMatrix(dim=dim, seed=seed, rows=rows)
    raise RuntimeError(f"rank-deficient draws for seeds {seed}..{seed + 8}")


def sample_rows(
    matrix: MeasurementMatrix, row_start: int, row_end: int, block_vector: np.ndarray
) -> np.ndarray:
    """Inner products of rows row_start..row_end (1-based) with the block."""
    if not (1 <= row_start and row_start - 1 <= row_end <= matrix.dim):
        raise ValueError(f"row range {row_start}..{row_end} out of bounds")
    x = np.asarray(block_vector, dtype=np.float64)
    if x.size != matrix.dim:
        raise ValueError("block vector length does not match the operator")
    return matrix.rows[row_start - 1 : row_end] @ x


def adjoint_reconstruct(
    matrix: MeasurementMatrix, row_start: int, row_end: int, values: np.ndarray
) -> np.ndarray:
    """Adjoint of the used rows: the projection of x onto their span."""
    if not (1 <= row_start and row_start - 1 <= row_end <= matrix.dim):
        raise ValueError(f"row range {row_start}..{row_end} out of bounds")
    values = np.asarray(values, dtype=np.float64)
    if values.size != row_end - row_start + 1:
        raise ValueError("value count does not match the row range")
    return matrix.rows[row_start - 1 : row_end].T @ values


def sample_plan(grid: BlockGrid, per_block_M, matrix: MeasurementMatrix, stage: int = 1):
    """Single-stage sampling: rows 1..M_i of the operator per block."""
    counts = np.asarray(per_block_M, dtype=np.int64)
    if counts.size != grid.block_count:
        raise ValueError("one count per block required")
    records = []
    for i, count in enumerate(counts):
        values = sample_rows(matrix, 1, int(count), vectorize(grid.blocks[i]))
        records.append(
            MeasurementRecord(
                block_index=i,
                segments=(Segment(stage=stage, row_start=1, row_end=int(count), values=values),),
            )
        )
    return records


def reconstruct_plan(plan, records, matrix: MeasurementMatrix, original_h: int, original_w: int) -> Image:
    """Adjoint-reconstruct every block of a plan and reassemble the image.

    `plan` only needs block_size / grid_rows / grid_cols attributes, so
    both single-stage and multi-stage plans work.
    """
    b = plan.block_size
    n = plan.grid_rows * plan.grid_cols
    by_index = {rec.block_index: rec for rec in records}
    missing = [i for i in range(n) if i not in by_index]
    if missing:
        raise ValueError(f"records missing for blocks {missing[:8]}")
    blocks = np.zeros((n, b, b))
    for i in range(n):
        rec = by_index[i]
        total = rec.measured_count
        vec = adjoint_reconstruct(matrix, 1, total, rec.concatenated())
        blocks[i] = devectorize(vec, b)
    grid = BlockGrid(
        block_size=b,
        rows=plan.grid_rows,
        cols=plan.grid_cols,
        pad_bottom=plan.grid_rows * b - original_h,
        pad_right=plan.grid_cols * b - original_w,
        blocks=np.clip(blocks, 0.0, 1.0),
    )
    return assemble(grid, original_h, original_w)


def psnr(reference: Image, estimate: Image) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images (inf if equal)."""
    if reference.pixels.shape != estimate.pixels.shape:
        raise ValueError("images must share dimensions")
    mse = float(np.mean((reference.pixels - estimate.pixels) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def save_matrix(matrix: MeasurementMatrix, path) -> None:
    """Binary dump: 16-byte header (magic, version, dim, seed) + LE float64 rows."""
    header = struct.pack("<4sHHQ", _MAGIC, _FORMAT_VERSION, matrix.dim, matrix.seed)
    payload = matrix.rows.astype("<f8").tobytes()
    Path(path).write_bytes(header + payload)


def load_matrix(path) -> MeasurementMatrix:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise ValueError("matrix file shorter than its header")
    magic, version, dim, seed = struct.unpack("<4sHHQ", data[:16])
    if magic != _MAGIC:
        raise ValueError(f"bad matrix magic {magic!r}")
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported matrix format version {version}")
    need = dim * dim * 8
    if len(data) != 16 + need:
        raise ValueError("matrix payload size mismatch")
    rows = np.frombuffer(data[16:], dtype="<f8").reshape(dim, dim)
    return MeasurementMatrix(dim=dim, seed=seed, rows=rows.copy())
