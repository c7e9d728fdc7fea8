"""Emulated reduced-precision arithmetic.

All formats are binary IEEE-style with round-to-nearest-even, gradual
underflow (no flush-to-zero) and overflow to +-Inf.  Values are rounded
directly from float64, so there is no double rounding through fp32.

Emulated half formats (BF16E, FP16E) are stored widened in ``np.float32``
arrays; every stored value is exactly representable in the tagged format.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Kind(str, enum.Enum):
    FP64 = "fp64"
    FP32 = "fp32"
    BF16E = "bf16"
    FP16E = "fp16"


@dataclass(frozen=True)
class DTypeSpec:
    kind: Kind
    mantissa_bits: int
    norm_eps: float
    emin: int
    emax: int

    @property
    def ulp_at_one(self) -> float:
        return 2.0 ** -self.mantissa_bits

    @property
    def collapse_threshold(self) -> float:
        return self.ulp_at_one / 2

    @property
    def max_finite(self) -> float:
        return (2.0 - 2.0 ** -self.mantissa_bits) * 2.0 ** self.emax

    @property
    def storage(self) -> np.dtype:
        return np.dtype(np.float64 if self.kind is Kind.FP64 else np.float32)

    @property
    def itemsize(self) -> int:
        """Bytes per element of the real (non-emulated) format."""
        return {Kind.FP64: 8, Kind.FP32: 4, Kind.BF16E: 2, Kind.FP16E: 2}[self.kind]

    @property
    def is_half(self) -> bool:
        return self.kind in (Kind.BF16E, Kind.FP16E)

    @property
    def name(self) -> str:
        return self.kind.value

    def __repr__(self) -> str:
        return f"DTypeSpec({self.kind.value})"


FP64 = DTypeSpec(Kind.FP64, 52, 1e-12, -1022, 1023)
FP32 = DTypeSpec(Kind.FP32, 23, 1e-12, -126, 127)
BF16 = DTypeSpec(Kind.BF16E, 7, 1e-6, -126, 127)
FP16 = DTypeSpec(Kind.FP16E, 10, 1e-6, -14, 15)

_BY_NAME = {
    "fp64": FP64, "float64": FP64,
    "fp32": FP32, "float32": FP32,
    "bf16": BF16, "bfloat16": BF16,
    "fp16": FP16, "float16": FP16, "half": FP16,
}


def dtype_from_name(name: str) -> DTypeSpec:
    try:
        return _BY_NAME[name.lower()]
    except KeyError:
        raise ValueError(f"unknown dtype {name!r}; expected one of {sorted(_BY_NAME)}") from None


def _round_f64_reference(x: np.ndarray, spec: DTypeSpec) -> np.ndarray:
    """Round a float64 array to ``spec`` elementwise; result still float64."""
    shift = 52 - spec.mantissa_bits
    u = x.view(np.uint64)
    lsb = (u >> np.uint64(shift)) & np.uint64(1)
    bias = np.uint64((1 << (shift - 1)) - 1)
    mask = ~np.uint64((1 << shift) - 1)
    out = ((u + bias + lsb) & mask).view(np.float64)

    # Below the smallest normal the grid spacing is fixed.
    tiny = np.abs(x) < 2.0 ** spec.emin
    if tiny.any():
        quantum = 2.0 ** (spec.emin - spec.mantissa_bits)
        out[tiny] = np.rint(x[tiny] / quantum) * quantum

    over = np.abs(out) > spec.max_finite
    if over.any():
        out[over] = np.copysign(np.inf, x[over])
    special = ~np.isfinite(x)
    if special.any():
        out[special] = x[special]
    return out


def _round_f64(x: np.ndarray, spec: DTypeSpec) -> np.ndarray:
    """Fast path: mantissa rounding on the bits, reference path for the rest.

    Only elements that are zero, subnormal in ``spec``, overflowing or
    non-finite take the slow path.
    """
    shift = np.uint64(52 - spec.mantissa_bits)
    u = x.view(np.uint64)
    r = u >> shift
    r &= np.uint64(1)
    r += np.uint64((1 << (int(shift) - 1)) - 1)
    r += u
    r &= ~np.uint64((1 << int(shift)) - 1)
    # Biased fp64 exponent of the rounded value must lie in spec's normal range.
    e = (r >> np.uint64(52)) & np.uint64(0x7FF)
    lo = np.uint64(1023 + spec.emin)
    e -= lo
    bad = e > np.uint64(spec.emax - spec.emin)
    out = r.view(np.float64)
    if bad.any():
        out[bad] = _round_f64_reference(x[bad], spec)
    return out


def _round_f32_to_bf16(x: np.ndarray) -> np.ndarray:
    """Exact RNE of float32 values to bfloat16 on the bit pattern."""
    u = x.view(np.uint32)
    r = u >> np.uint32(16)
    r &= np.uint32(1)
    r += np.uint32(0x7FFF)
    r += u
    r &= np.uint32(0xFFFF0000)
    out = r.view(np.float32)
    nan = np.isnan(x)
    if nan.any():
        out[nan] = x[nan]
    return out


def round_to_dtype(x, spec: DTypeSpec):
    """Round ``x`` (interpreted as float64) to the nearest value of ``spec``.

    Ties go to even.  Returns an array in ``spec.storage``; a 0-d input gives a
    numpy scalar.
    """
    if isinstance(x, np.ndarray) and x.ndim and x.dtype == np.float32:
        if spec.kind in (Kind.FP32, Kind.FP64):
            return x.astype(spec.storage)
        if spec.kind is Kind.BF16E:
            return _round_f32_to_bf16(x)
        if spec.kind is Kind.FP16E:
            # numpy's float->half conversion rounds to nearest even.
            with np.errstate(over="ignore"):
                return x.astype(np.float16).astype(np.float32)
    x64 = np.asarray(x, dtype=np.float64)
    scalar = x64.ndim == 0
    x64 = np.ascontiguousarray(np.atleast_1d(x64))
    if spec.kind is Kind.FP64:
        out = x64.copy()
    else:
        out = _round_f64(x64, spec).astype(np.float32)
    return out[0] if scalar else out


def fl32(x):
    return round_to_dtype(x, FP32)


def rounded_op(spec: DTypeSpec, fn, *operands):
    """Evaluate one arithmetic op as if computed natively in ``spec``.

    The op runs in float64 and is rounded once.  For +, -, *, / on inputs
    already in ``spec`` this is the correctly rounded result: float64 has
    more than 2p+2 significand bits for every supported p.
    """
    args = [np.asarray(a, dtype=np.float64) for a in operands]
    return round_to_dtype(fn(*args), spec)


# Products of two half-format values stay normal in fp32 above this magnitude.
_HALF_PRODUCT_SAFE_MIN = 2.0**-60


def _has_tiny(x: np.ndarray) -> bool:
    a = np.abs(x)
    return bool(np.min(a, where=a != 0, initial=np.inf) < _HALF_PRODUCT_SAFE_MIN)


def half_op(spec: DTypeSpec, fn, a, b, *, is_mul: bool):
    """One +, - or * on two values already representable in a half format.

    Evaluated in fp32 then rounded.  Sums are exact in fp32 or too far from a
    half-format rounding boundary to be affected; products of two <=11-bit
    significands are exact unless they leave fp32's normal range, in which
    case this falls back to :func:`rounded_op`.
    """
    if not spec.is_half:
        return rounded_op(spec, fn, a, b)
    a32 = np.asarray(a, dtype=np.float32)
    b32 = np.asarray(b, dtype=np.float32)
    if is_mul and (_has_tiny(a32) or _has_tiny(b32)):
        return rounded_op(spec, fn, a, b)
    with np.errstate(over="ignore", invalid="ignore"):
        return round_to_dtype(np.asarray(fn(a32, b32), dtype=np.float32), spec)


def correctly_rounded_sqrt_f32(x):
    x = np.asarray(x, dtype=np.float32)
    with np.errstate(invalid="ignore"):
        return np.sqrt(x)


def nan_preserving_clamp_min(x, floor):
    # np.maximum propagates NaN from either side.
    return np.maximum(np.asarray(x, dtype=np.float32), np.float32(floor))


def representable_values(spec: DTypeSpec) -> np.ndarray:
    """Every finite value of a 16-bit format, decoded from its bit patterns."""
    bits = np.arange(1 << 16, dtype=np.uint32)
    if spec.kind is Kind.BF16E:
        with np.errstate(invalid="ignore"):
            vals = (bits << np.uint32(16)).view(np.float32).astype(np.float64)
    elif spec.kind is Kind.FP16E:
        vals = bits.astype(np.uint16).view(np.float16).astype(np.float64)
    else:
        raise ValueError("only 16-bit formats can be enumerated")
    return vals[np.isfinite(vals)]
