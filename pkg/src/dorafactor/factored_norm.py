"""Row norms of ``W + s*B@A`` without forming ``B@A``.

The squared row norm splits into three per-row terms::

    ||W + sBA||^2 = ||W||^2 + 2s <W, BA> + s^2 ||BA||^2

``<W, BA>_j = sum_l B[j,l] * U[j,l]`` with ``U = W A^T``, and
``||BA||_j^2 = sum_l (B G)[j,l] * B[j,l]`` with the Gram matrix ``G = A A^T``.
Both are accumulated chunk by chunk along ``d_in`` so the largest
intermediate is ``[d_out, chunk]`` rather than ``[d_out, d_in]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import ChunkPlan, RealMatrix, accumulator_for, matmul, plan_chunks, rowsum
from .numerics import FP64, DTypeSpec, correctly_rounded_sqrt_f32, nan_preserving_clamp_min, round_to_dtype


@dataclass(frozen=True)
class AdapterPair:
    A: RealMatrix  # [r, d_in]
    B: RealMatrix  # [d_out, r]
    s: float

    def __post_init__(self):
        if self.A.rows != self.B.cols or self.A.rows < 1:
            raise ValueError(f"rank mismatch: A is {self.A.shape}, B is {self.B.shape}")

    @property
    def rank(self) -> int:
        return self.A.rows

    def check_against(self, W: RealMatrix) -> None:
        if self.A.cols != W.cols or self.B.rows != W.rows:
            raise ValueError(
                f"adapter A{self.A.shape} / B{self.B.shape} incompatible with W{W.shape}"
            )


@dataclass(frozen=True)
class NormTerms:
    base_sq: np.ndarray
    cross: np.ndarray
    ba_sq: np.ndarray
    two_s: float
    s2: float

    @classmethod
    def from_scale(cls, base_sq, cross, ba_sq, s: float) -> "NormTerms":
        s = float(s)  # Python floats are fp64
        return cls(base_sq, cross, ba_sq, 2.0 * s, s * s)


def factored_norm_terms(W: RealMatrix, adapter: AdapterPair, plan: ChunkPlan | None = None) -> NormTerms:
    """Accumulate base_sq, cross and ba_sq chunk by chunk.

    Accumulation is fp32 (fp64 when W is FP64).  ``U_c`` lives for one chunk
    only; ``G`` is rebuilt on every call.  With ``s == 0`` cross and ba_sq come
    back as zeros and neither ``U_c`` nor ``G`` is formed.
    """
    adapter.check_against(W)
    plan = plan or plan_chunks(W.rows, W.cols)
    if (plan.d_out, plan.d_in) != W.shape:
        raise ValueError(f"chunk plan for {(plan.d_out, plan.d_in)} used with W{W.shape}")

    acc = accumulator_for(W.dtype)
    d_out, r = W.rows, adapter.rank
    skip_lora = adapter.s == 0
    base_sq = np.zeros(d_out, dtype=acc)
    cross = np.zeros(d_out, dtype=acc)
    G = None if skip_lora else np.zeros((r, r), dtype=acc)
    B = None if skip_lora else adapter.B.data.astype(acc)

    # A cached ||W||^2_row would replace the base_sq update below; W is frozen,
    # but the norm is recomputed on every forward by contract, so no cache.
    for c0, c1 in plan.bounds():
        W_c = W.data[:, c0:c1].astype(acc)
        base_sq = base_sq + rowsum(W_c * W_c)
        if skip_lora:
            continue
        A_c = adapter.A.data[:, c0:c1].astype(acc)
        G = G + matmul(A_c, A_c.T, acc)
        U_c = matmul(W_c, A_c.T, acc)
        cross = cross + rowsum(B * U_c)

    if skip_lora:
        ba_sq = np.zeros(d_out, dtype=acc)
    else:
        ba_sq = rowsum(matmul(B, G, acc) * B)
    return NormTerms.from_scale(base_sq, cross, ba_sq, adapter.s)


def assemble_norm(terms: NormTerms) -> np.ndarray:
    """sqrt(max(base_sq + two_s*cross + s2*ba_sq, 0)), every op rounded to fp32.

    Scalars enter as fp32 (``fl32(two_s)``), products and sums are separate
    numpy ufunc calls so nothing is contracted into an FMA.
    """
    base_sq = np.asarray(terms.base_sq, dtype=np.float32)
    cross = np.asarray(terms.cross, dtype=np.float32)
    ba_sq = np.asarray(terms.ba_sq, dtype=np.float32)
    if not (base_sq.shape == cross.shape == ba_sq.shape):
        raise ValueError("norm terms must have equal length")
    with np.errstate(over="ignore", invalid="ignore"):
        t1 = base_sq + np.float32(terms.two_s) * cross
        t2 = t1 + np.float32(terms.s2) * ba_sq
    return correctly_rounded_sqrt_f32(nan_preserving_clamp_min(t2, 0.0))


def _assemble_f64(terms: NormTerms) -> np.ndarray:
    t = terms.base_sq + terms.two_s * terms.cross + terms.s2 * terms.ba_sq
    with np.errstate(invalid="ignore"):
        return np.sqrt(np.maximum(t, 0.0))


def factored_row_norm(W: RealMatrix, adapter: AdapterPair, plan: ChunkPlan | None = None) -> np.ndarray:
    """Per-row L2 norm of ``W + s*B@A``, returned in W's dtype.

    The result is a plain array with no autodiff attached; callers treat it
    as a constant.
    """
    terms = factored_norm_terms(W, adapter, plan)
    if W.dtype is FP64:
        return _assemble_f64(terms)
    if adapter.s == 0:
        w_norm = correctly_rounded_sqrt_f32(terms.base_sq)
    else:
        w_norm = assemble_norm(terms)
    return round_to_dtype(w_norm, W.dtype)


def magnitude_scale(m, w_norm, dtype: DTypeSpec) -> np.ndarray:
    """g = m / max(w_norm, eps) in the layer's working dtype.

    Kept apart from the norm so every norm path shares this precision context.
    Half formats divide in fp32 and round the quotient, as device kernels do.
    """
    m = np.asarray(m)
    w_norm = np.asarray(w_norm)
    if m.shape != w_norm.shape:
        raise ValueError(f"magnitude length {m.shape} != norm length {w_norm.shape}")
    if dtype is FP64:
        return m.astype(np.float64) / np.maximum(w_norm.astype(np.float64), dtype.norm_eps)
    eps = round_to_dtype(dtype.norm_eps, dtype)
    denom = round_to_dtype(w_norm, dtype)
    denom = np.maximum(denom, eps)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        q = round_to_dtype(m, dtype).astype(np.float32) / denom
    return round_to_dtype(q, dtype)


def clamped_norm(w_norm, dtype: DTypeSpec) -> np.ndarray:
    """The denominator actually used by :func:`magnitude_scale`."""
    if dtype is FP64:
        return np.maximum(np.asarray(w_norm, dtype=np.float64), dtype.norm_eps)
    return np.maximum(round_to_dtype(w_norm, dtype), round_to_dtype(dtype.norm_eps, dtype))
