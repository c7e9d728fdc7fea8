"""Closed-form working-set accounting for the row-norm computation.

Counts logical allocations only.  Allocator rounding, fragmentation and
caching are not modeled, which is why measured allocator deltas differ.
Accumulation buffers are always fp32 (4 bytes) regardless of storage dtype.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from math import floor, log10

from .linalg import ChunkPlan, plan_chunks
from .numerics import FP32, DTypeSpec

MiB = 2**20
ACC_BYTES = 4

# (d_out, d_in, rank) of the published norm-memory comparison, in order.
TABLE6_SHAPES = (
    (4096, 4096, 64),
    (4096, 4096, 384),
    (4096, 4096, 512),
    (8192, 8192, 384),
    (8192, 8192, 512),
    (8192, 8192, 768),
    (4096, 11008, 384),
    (8192, 28672, 384),
)
# Published theory ratios for TABLE6_SHAPES and measured allocator deltas (MB).
TABLE6_THEORY = (63.0, 9.8, 7.1, 20.4, 15.1, 9.8, 26.2, 71.3)
TABLE6_MEASURED_MB = (
    (192, 65), (192, 71), (192, 73), (768, 245), (768, 241), (768, 236), (516, 179), (2688, 245),
)


@dataclass(frozen=True)
class MemoryEstimate:
    persistent_bytes: int
    transient_bytes: int
    identity_bytes: int = 0
    reduction_ratio_vs_dense: float = 0.0
    breakdown: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def theoretical_reduction(d_out: int, d_in: int, r: int) -> float:
    """Dense-product elements over the rank-dependent factored elements (U + G)."""
    if min(d_out, d_in, r) < 1:
        raise ValueError("dimensions and rank must be >= 1")
    return (d_out * d_in) / (d_out * r + r * r)


def factored_transient_bytes(
    plan: ChunkPlan,
    d_out: int,
    r: int,
    s_zero: bool = False,
    weights_need_widening: bool = True,
) -> MemoryEstimate:
    """Peak logical working set of one factored-norm call.

    One fp32 ``[d_out, chunk]`` buffer is always live: the widened copy of
    ``W_c`` when weights are not fp32, otherwise the ``W_c**2`` temporary.
    The widened ``A_c`` exists only when widening is needed; ``U_c`` and ``G``
    disappear on the zero-scale path.
    """
    cs = plan.chunk_size
    parts = {
        "chunk_buffer": d_out * cs * ACC_BYTES,
        "a_chunk": r * cs * ACC_BYTES if (weights_need_widening and not s_zero) else 0,
        "u_chunk": 0 if s_zero else d_out * r * ACC_BYTES,
        "gram": 0 if s_zero else r * r * ACC_BYTES,
        "accumulators": 3 * d_out * ACC_BYTES,
    }
    dense = d_out * plan.d_in
    factored = d_out * r + r * r
    return MemoryEstimate(
        persistent_bytes=0,
        transient_bytes=sum(parts.values()),
        identity_bytes=0,
        reduction_ratio_vs_dense=dense / factored,
        breakdown=parts,
    )


def dense_baseline_bytes(d_out: int, d_in: int, dtype: DTypeSpec, with_identity: bool = True) -> MemoryEstimate:
    """Temporaries of the materializing baseline in the storage dtype.

    Identity ``[d_in, d_in]`` (optional), the dense ``B@A`` product and the
    composed-weight copy, each ``[d_out, d_in]``.
    """
    item = dtype.itemsize
    parts = {
        "identity": d_in * d_in * item if with_identity else 0,
        "lora_weight": d_out * d_in * item,
        "composed_weight": d_out * d_in * item,
    }
    return MemoryEstimate(
        persistent_bytes=0,
        transient_bytes=sum(parts.values()),
        identity_bytes=parts["identity"],
        reduction_ratio_vs_dense=1.0,
        breakdown=parts,
    )


def emit_theory_table(shapes=TABLE6_SHAPES, budget_bytes: int = 256 * MiB, dtype: DTypeSpec | None = None) -> list[dict]:
    """One record per (d_out, d_in, r): theory ratio plus modeled byte counts."""
    dtype = dtype or FP32
    rows = []
    for d_out, d_in, r in shapes:
        plan = plan_chunks(d_out, d_in, budget_bytes)
        fact = factored_transient_bytes(plan, d_out, r, weights_need_widening=dtype is not FP32)
        dense = dense_baseline_bytes(d_out, d_in, dtype)
        rows.append(
            {
                "d_out": d_out,
                "d_in": d_in,
                "rank": r,
                "theory_ratio": round(theoretical_reduction(d_out, d_in, r), 6),
                "dense_product_bytes": d_out * d_in * ACC_BYTES,
                "u_plus_g_bytes": (d_out * r + r * r) * ACC_BYTES,
                "factored_transient_bytes": fact.transient_bytes,
                "dense_baseline_bytes": dense.transient_bytes,
                "chunk_size": plan.chunk_size,
                "num_chunks": plan.num_chunks,
            }
        )
    return rows


def sig_round(x: float, digits: int = 3) -> float:
    """Round to ``digits`` significant figures."""
    if x == 0:
        return 0.0
    return round(x, digits - 1 - floor(log10(abs(x))))
