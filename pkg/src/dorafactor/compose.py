"""DoRA composition delta, its backward, and memory-traffic accounting.

The delta applied on top of the frozen-path output is::

    delta = (g - 1) * base + g * (s * lora)

evaluated in one canonical order (``s*lora``, then ``g*(.)``, then
``(g-1)*base``, then the sum) with fp32 intermediates and a single rounding
at the store.  Every variant below shares :func:`_delta_tile`, which is what
makes them bitwise identical.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass, field

import numpy as np

from .linalg import RealMatrix, accumulator_for, colsum
from .numerics import FP32, FP64, DTypeSpec, fl32, half_op, round_to_dtype, rounded_op

DEFAULT_TILE_ROWS = 64
DEFAULT_TILE_COLS = 128
LAYER_KINDS = ("linear", "embedding", "conv")


@dataclass(frozen=True)
class ComposeInputs:
    base: RealMatrix  # frozen-path output X @ W^T, bias excluded
    lora: RealMatrix  # X @ A^T @ B^T
    g: np.ndarray  # [d_out], held at fp32 (fp64 for FP64 inputs)
    s: float
    dtype: DTypeSpec

    def __post_init__(self):
        if self.base.shape != self.lora.shape:
            raise ValueError(f"base {self.base.shape} and lora {self.lora.shape} differ")
        if self.base.dtype is not self.dtype or self.lora.dtype is not self.dtype:
            raise ValueError("base and lora must be stored in the compose dtype")
        if np.shape(self.g) != (self.base.cols,):
            raise ValueError(f"g has shape {np.shape(self.g)}, expected ({self.base.cols},)")

    @classmethod
    def build(cls, base, lora, g, s, dtype: DTypeSpec) -> "ComposeInputs":
        """Round raw arrays into place; g is kept at compute precision."""
        return cls(
            RealMatrix.from_array(base, dtype),
            RealMatrix.from_array(lora, dtype),
            round_to_dtype(np.asarray(g, dtype=np.float64), FP64 if dtype is FP64 else FP32),
            float(s),
            dtype,
        )

    @property
    def rows(self) -> int:
        return self.base.rows

    @property
    def d_out(self) -> int:
        return self.base.cols


@dataclass
class TrafficReport:
    activation_reads: float = 0.0
    activation_writes: float = 0.0
    vector_reads: float = 0.0
    vector_writes: float = 0.0
    bytes_total: int = 0
    pass_count: int = 0
    kernel_launches: int = 0
    ops: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "activation_reads": self.activation_reads,
            "activation_writes": self.activation_writes,
            "vector_reads": self.vector_reads,
            "vector_writes": self.vector_writes,
            "bytes_total": self.bytes_total,
            "pass_count": self.pass_count,
            "kernel_launches": self.kernel_launches,
            "ops": list(self.ops),
        }


@dataclass(frozen=True)
class GradBundle:
    d_lora: RealMatrix
    d_base: RealMatrix
    d_mag: np.ndarray | None = None


def _compute_type(dtype: DTypeSpec):
    return accumulator_for(dtype)


def _delta_tile(base, lora, g, s, ct):
    t = ct(s) * lora
    t = g * t
    u = (g - ct(1)) * base
    return u + t


def _inner_tile(base, lora, s, ct):
    return ct(s) * lora + base


def stable_compose(inp: ComposeInputs) -> RealMatrix:
    ct = _compute_type(inp.dtype)
    delta = _delta_tile(inp.base.widen(), inp.lora.widen(), inp.g.astype(ct), inp.s, ct)
    return RealMatrix(round_to_dtype(delta, inp.dtype), inp.dtype)


def naive_compose(inp: ComposeInputs) -> RealMatrix:
    """``g*(s*lora + base) - base`` with every intermediate rounded to the storage dtype.

    This is the cancellation-prone form; it exists to be compared against.
    """
    dt = inp.dtype
    if dt is FP64:
        g = inp.g.astype(np.float64)
        return RealMatrix(g * (inp.s * inp.lora.data + inp.base.data) - inp.base.data, dt)
    g = round_to_dtype(inp.g, dt)
    s = fl32(inp.s)
    base, lora = inp.base.data, inp.lora.data
    if round_to_dtype(s, dt) == s:
        t = half_op(dt, operator.mul, s, lora, is_mul=True)
    else:
        t = rounded_op(dt, operator.mul, s, lora)
    u = half_op(dt, operator.add, t, base, is_mul=False)
    v = half_op(dt, operator.mul, g, u, is_mul=True)
    out = half_op(dt, operator.sub, v, base, is_mul=False)
    return RealMatrix(out, dt)


def compose_delta(inp: ComposeInputs, layer_kind: str = "linear") -> RealMatrix:
    """Delta for any adapted layer type; the (g-1)*base term is never dropped."""
    if layer_kind not in LAYER_KINDS:
        raise ValueError(f"unknown layer kind {layer_kind!r}")
    return stable_compose(inp)


def _tiles(rows, cols, tile_rows, tile_cols):
    for r0 in range(0, rows, tile_rows):
        for c0 in range(0, cols, tile_cols):
            yield slice(r0, min(r0 + tile_rows, rows)), slice(c0, min(c0 + tile_cols, cols))


def _check_fusable(inp: ComposeInputs):
    if not (inp.base.contiguous and inp.lora.contiguous):
        raise ValueError("fused compose needs contiguous base and lora; use stable_compose")


def _tile_pass(inp: ComposeInputs, tile_rows, tile_cols, need_inner):
    ct = _compute_type(inp.dtype)
    rows, d_out = inp.base.shape
    delta = np.empty((rows, d_out), dtype=inp.dtype.storage)
    inner = np.empty((rows, d_out), dtype=inp.dtype.storage) if need_inner else None
    base, lora = inp.base.data, inp.lora.data
    g_all = inp.g.astype(ct)
    reads = writes = g_reads = 0
    for rs, cs in _tiles(rows, d_out, tile_rows, tile_cols):
        b = base[rs, cs].astype(ct)
        lo = lora[rs, cs].astype(ct)
        g = g_all[cs]
        reads += 2 * b.size
        g_reads += g.size
        delta[rs, cs] = round_to_dtype(_delta_tile(b, lo, g, inp.s, ct), inp.dtype)
        writes += b.size
        if need_inner:
            inner[rs, cs] = round_to_dtype(_inner_tile(b, lo, inp.s, ct), inp.dtype)
            writes += b.size

    n = rows * d_out
    item = inp.dtype.itemsize
    traffic = TrafficReport(
        activation_reads=reads / n,
        activation_writes=writes / n,
        vector_reads=g_reads / d_out,
        bytes_total=(reads + writes + g_reads) * item,
        pass_count=1,
        kernel_launches=1,
        ops=[{"op": "fused", "reads": reads, "writes": writes, "vector_reads": g_reads}],
    )
    return delta, inner, traffic


def fused_compose(inp: ComposeInputs, tile_rows: int = DEFAULT_TILE_ROWS, tile_cols: int = DEFAULT_TILE_COLS):
    """Single traversal over (row, column) tiles; bitwise equal to :func:`stable_compose`.

    Each tile reads base and lora once and its slice of g once, and writes
    delta once.  Returns ``(delta, traffic)``.
    """
    _check_fusable(inp)
    delta, _, traffic = _tile_pass(inp, tile_rows, tile_cols, need_inner=False)
    return RealMatrix(delta, inp.dtype), traffic


def dual_output_compose(
    inp: ComposeInputs,
    need_inner: bool,
    tile_rows: int = DEFAULT_TILE_ROWS,
    tile_cols: int = DEFAULT_TILE_COLS,
):
    """Delta plus ``inner = s*lora + base`` in the same pass.

    ``inner`` is what the magnitude gradient needs; with a frozen magnitude it
    is neither allocated nor written.  Returns ``(delta, inner_or_None, traffic)``.
    """
    _check_fusable(inp)
    delta, inner, traffic = _tile_pass(inp, tile_rows, tile_cols, need_inner)
    inner_m = RealMatrix(inner, inp.dtype) if need_inner else None
    return RealMatrix(delta, inp.dtype), inner_m, traffic


def compute_inner(inp: ComposeInputs) -> RealMatrix:
    ct = _compute_type(inp.dtype)
    inner = _inner_tile(inp.base.widen(), inp.lora.widen(), inp.s, ct)
    return RealMatrix(round_to_dtype(inner, inp.dtype), inp.dtype)


def compose_backward(
    dY: RealMatrix,
    g: np.ndarray,
    s: float,
    inner: RealMatrix | None,
    w_norm: np.ndarray,
    mag_grad: bool,
) -> GradBundle:
    """Gradients of ``delta`` given the upstream gradient ``dY``.

    ``d_lora = g*(s*dY)`` and ``d_base = (g-1)*dY`` share one elementwise
    pass.  ``d_mag[j] = sum_i dY[i,j]*inner[i,j] / w_norm[j]`` is a separate
    serial column reduction followed by one divide per column; ``w_norm`` here
    is the clamped denominator that produced g.
    """
    if mag_grad and inner is None:
        raise ValueError("inner is required when the magnitude needs a gradient")
    dt = dY.dtype
    ct = _compute_type(dt)
    dy = dY.widen()
    gc = np.asarray(g).astype(ct)
    d_lora = gc * (ct(s) * dy)
    d_base = (gc - ct(1)) * dy
    d_mag = None
    if mag_grad:
        if inner.shape != dY.shape:
            raise ValueError(f"inner {inner.shape} does not match dY {dY.shape}")
        d_mag = colsum(dy * inner.widen()) / np.asarray(w_norm).astype(ct)
    return GradBundle(
        RealMatrix(round_to_dtype(d_lora, dt), dt),
        RealMatrix(round_to_dtype(d_base, dt), dt),
        d_mag,
    )


def eager_traffic_model(rows: int, d_out: int, dtype: DTypeSpec) -> TrafficReport:
    """Traffic of the unfused sequence of elementwise kernels.

    Ops, each its own launch: ``gm1 = g - 1`` (vector), ``t1 = s*lora``,
    ``t2 = g*t1``, ``t3 = gm1*base``, ``delta = t3 + t2``.  Every activation op
    sweeps each of its operand streams separately, so ``pass_count`` counts
    operand streams (inputs plus output) of the activation-sized ops; a fused
    kernel co-iterates its streams and counts as a single pass.
    """
    ops = [
        {"op": "g_minus_1", "act_in": 0, "act_out": 0, "vec_in": 1, "vec_out": 1},
        {"op": "scale_lora", "act_in": 1, "act_out": 1, "vec_in": 0, "vec_out": 0},
        {"op": "mul_g", "act_in": 1, "act_out": 1, "vec_in": 1, "vec_out": 0},
        {"op": "mul_gm1_base", "act_in": 1, "act_out": 1, "vec_in": 1, "vec_out": 0},
        {"op": "add", "act_in": 2, "act_out": 1, "vec_in": 0, "vec_out": 0},
    ]
    act_r = sum(o["act_in"] for o in ops)
    act_w = sum(o["act_out"] for o in ops)
    vec_r = sum(o["vec_in"] for o in ops)
    vec_w = sum(o["vec_out"] for o in ops)
    passes = sum(o["act_in"] + o["act_out"] + o["vec_in"] for o in ops if o["act_out"])
    item = dtype.itemsize
    return TrafficReport(
        activation_reads=act_r,
        activation_writes=act_w,
        vector_reads=vec_r,
        vector_writes=vec_w,
        bytes_total=(act_r + act_w) * rows * d_out * item + (vec_r + vec_w) * d_out * item,
        pass_count=passes,
        kernel_launches=len(ops),
        ops=ops,
    )


def fused_traffic_model(rows: int, d_out: int, dtype: DTypeSpec, tile_rows: int = DEFAULT_TILE_ROWS) -> TrafficReport:
    """Closed form of what :func:`fused_compose` counts, without running it."""
    n = rows * d_out
    row_tiles = -(-rows // tile_rows)
    return TrafficReport(
        activation_reads=2,
        activation_writes=1,
        vector_reads=row_tiles,
        bytes_total=(3 * n + row_tiles * d_out) * dtype.itemsize,
        pass_count=1,
        kernel_launches=1,
        ops=[{"op": "fused", "reads": 2 * n, "writes": n, "vector_reads": row_tiles * d_out}],
    )
