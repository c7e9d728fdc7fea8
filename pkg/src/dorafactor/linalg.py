"""Row-major matrices, deterministic reductions, chunk planning and fixtures.

Every reduction here has one canonical order: ascending index.  Sums are
evaluated with ``np.add.accumulate``, which is strictly sequential, so the
bits of a result never depend on BLAS, SIMD width or thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import FP32, FP64, DTypeSpec, round_to_dtype

ALIGNMENT = 64
DEFAULT_BUDGET_BYTES = 256 * 2**20
# Upper bound on the (M, k_block, N) product buffer inside matmul.
_BLOCK_ELEMS = 1 << 22


@dataclass(frozen=True)
class RealMatrix:
    data: np.ndarray
    dtype: DTypeSpec = FP32
    contiguous: bool = True

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"RealMatrix must be 2-D, got shape {self.data.shape}")
        if self.data.dtype != self.dtype.storage:
            raise TypeError(f"storage {self.data.dtype} does not match tag {self.dtype}")

    @classmethod
    def from_array(cls, arr, dtype: DTypeSpec = FP32, contiguous: bool = True) -> "RealMatrix":
        """Round ``arr`` into ``dtype`` and wrap it."""
        data = round_to_dtype(np.atleast_2d(np.asarray(arr, dtype=np.float64)), dtype)
        return cls(np.ascontiguousarray(data), dtype, contiguous)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def widen(self) -> np.ndarray:
        """Values as the accumulation type: fp64 for FP64, fp32 otherwise."""
        return self.data.astype(accumulator_for(self.dtype), copy=False)

    def __getitem__(self, item):
        return self.data[item]


def accumulator_for(dtype: DTypeSpec):
    return np.float64 if dtype is FP64 else np.float32


@dataclass(frozen=True)
class ChunkPlan:
    d_out: int
    d_in: int
    chunk_size: int
    num_chunks: int
    budget_bytes: int = DEFAULT_BUDGET_BYTES
    alignment: int = ALIGNMENT

    def bounds(self):
        """(start, stop) column ranges, ascending."""
        for start in range(0, self.d_in, self.chunk_size):
            yield start, min(start + self.chunk_size, self.d_in)


def plan_chunks(d_out: int, d_in: int, budget_bytes: int = DEFAULT_BUDGET_BYTES) -> ChunkPlan:
    """Chunk the ``d_in`` axis so one fp32 ``[d_out, chunk]`` buffer fits the budget.

    A chunk that covers all of ``d_in`` is used as-is; a budget-limited chunk is
    rounded down to a multiple of 64.
    """
    if d_out < 1 or d_in < 1:
        raise ValueError(f"dimensions must be positive, got d_out={d_out}, d_in={d_in}")
    if budget_bytes < 256:
        raise ValueError(f"budget_bytes must be >= 256, got {budget_bytes}")
    floor = min(ALIGNMENT, d_in)
    if budget_bytes < d_out * 4 * floor:
        raise ValueError(
            f"chunk budget {budget_bytes} B cannot hold one {floor}-column fp32 chunk "
            f"at d_out={d_out} ({d_out * 4 * floor} B)"
        )
    fit = budget_bytes // (d_out * 4)
    if fit >= d_in:
        cs = d_in
    else:
        cs = max(floor, fit // ALIGNMENT * ALIGNMENT)
    return ChunkPlan(d_out, d_in, cs, math.ceil(d_in / cs), budget_bytes)


def matmul(a, b, acc_dtype=np.float32) -> np.ndarray:
    """``a @ b`` with ascending-k sequential accumulation in ``acc_dtype``.

    Each output element is ((a0*b0 + a1*b1) + a2*b2) + ..., every product and
    partial sum rounded in ``acc_dtype``.
    """
    a = np.asarray(a, dtype=acc_dtype)
    b = np.asarray(b, dtype=acc_dtype)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    acc = np.zeros((m, n), dtype=acc_dtype)
    if k == 0:
        return acc
    kb = max(1, _BLOCK_ELEMS // max(1, m * n))
    for k0 in range(0, k, kb):
        k1 = min(k, k0 + kb)
        prods = a[:, k0:k1, None] * b[None, k0:k1, :]
        stacked = np.concatenate([acc[:, None, :], prods], axis=1)
        acc = np.add.accumulate(stacked, axis=1)[:, -1, :]
    return np.ascontiguousarray(acc)


def matmul_f32(a, b) -> np.ndarray:
    if isinstance(a, RealMatrix):
        a = a.data
    if isinstance(b, RealMatrix):
        b = b.data
    return matmul(a, b, np.float32)


def rowsum(x: np.ndarray) -> np.ndarray:
    """Sequential ascending sum along axis 1, in x's dtype."""
    if x.shape[1] == 0:
        return np.zeros(x.shape[0], dtype=x.dtype)
    return np.add.accumulate(x, axis=1)[:, -1].copy()


def colsum(x: np.ndarray) -> np.ndarray:
    """Sequential ascending sum along axis 0 (serial per column)."""
    if x.shape[0] == 0:
        return np.zeros(x.shape[1], dtype=x.dtype)
    return np.add.accumulate(x, axis=0)[-1].copy()


def _rng(seed) -> np.random.Generator:
    entropy = list(seed) if isinstance(seed, (tuple, list)) else seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def seeded_array(kind: str, shape, seed, dtype: DTypeSpec = FP32, scale: float = 1.0, loc: float = 0.0):
    """Deterministic fixture values rounded into ``dtype``.

    Generator: numpy PCG64 seeded through ``SeedSequence(seed)`` (``seed`` may be
    an int or a tuple of ints).  ``gaussian`` draws ``standard_normal``
    (ziggurat) in float64 for FP64 targets and float32 otherwise, then forms
    ``loc + scale * z`` in that precision and rounds; ``uniform`` lies in
    [0, 1) on a grid every value of which is representable in ``dtype``.
    """
    rng = _rng(seed)
    if kind == "gaussian":
        if dtype is FP64:
            return loc + scale * rng.standard_normal(shape)
        z = rng.standard_normal(shape, dtype=np.float32)
        z *= np.float32(scale)
        z += np.float32(loc)
        return round_to_dtype(z, dtype)
    if kind == "uniform":
        if dtype is FP64:
            return rng.random(shape)
        if dtype is FP32:
            return rng.random(shape, dtype=np.float32)
        q = dtype.mantissa_bits + 1
        return (np.floor(rng.random(shape) * 2.0**q) / 2.0**q).astype(np.float32)
    raise ValueError(f"unknown fixture kind {kind!r}")


def seeded_fixture(kind: str, shape, seed, dtype: DTypeSpec = FP32, scale: float = 1.0) -> RealMatrix:
    data = seeded_array(kind, shape, seed, dtype, scale)
    return RealMatrix(np.ascontiguousarray(np.atleast_2d(data)), dtype)
