"""A DoRA linear layer: forward returns ``base + delta + bias``, backward gives dA, dB, d_mag.

The row norm is recomputed on every forward and treated as a constant by
the backward.  The bias never enters the norm or the compose; it is added
after the delta.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .compose import (
    ComposeInputs,
    GradBundle,
    compose_backward,
    compute_inner,
    dual_output_compose,
    fused_compose,
    stable_compose,
)
from .dispatch import DispatchContext, Tier, TierDecision, select_tier
from .factored_norm import AdapterPair, clamped_norm, factored_row_norm, magnitude_scale
from .linalg import ChunkPlan, RealMatrix, accumulator_for, matmul, plan_chunks
from .numerics import FP32, FP64, DTypeSpec, round_to_dtype


@dataclass(frozen=True)
class DoraLinearState:
    W: RealMatrix  # [d_out, d_in], frozen
    adapter: AdapterPair
    m: np.ndarray  # [d_out]
    bias: np.ndarray | None = None
    m_trainable: bool = True
    working_dtype: DTypeSpec = FP32
    dispatch_cfg: DispatchContext = field(default_factory=DispatchContext)
    chunk_plan: ChunkPlan | None = None

    def __post_init__(self):
        self.adapter.check_against(self.W)
        for name in ("W",):
            if getattr(self, name).dtype is not self.working_dtype:
                raise ValueError(f"{name} is {getattr(self, name).dtype}, layer works in {self.working_dtype}")
        if self.adapter.A.dtype is not self.working_dtype or self.adapter.B.dtype is not self.working_dtype:
            raise ValueError("adapter factors must be stored in the working dtype")
        if np.shape(self.m) != (self.d_out,):
            raise ValueError(f"magnitude has shape {np.shape(self.m)}, expected ({self.d_out},)")
        if self.bias is not None and np.shape(self.bias) != (self.d_out,):
            raise ValueError(f"bias has shape {np.shape(self.bias)}, expected ({self.d_out},)")

    @property
    def d_out(self) -> int:
        return self.W.rows

    @property
    def d_in(self) -> int:
        return self.W.cols

    def plan(self) -> ChunkPlan:
        return self.chunk_plan or plan_chunks(self.d_out, self.d_in)


@dataclass(frozen=True)
class LayerSaved:
    X: RealMatrix
    xa: RealMatrix  # X @ A^T, [rows, r]
    g: np.ndarray
    w_norm: np.ndarray  # clamped denominator behind g
    base_out: RealMatrix
    lora_out: RealMatrix
    delta: RealMatrix
    inner: RealMatrix | None
    decision: TierDecision
    mag_grad: bool


@dataclass(frozen=True)
class LayerGrads:
    dA: np.ndarray
    dB: np.ndarray
    d_mag: np.ndarray | None
    bundle: GradBundle


def _mm(a: np.ndarray, b: np.ndarray, dtype: DTypeSpec) -> RealMatrix:
    # fp32 accumulation (fp64 for FP64), one rounding at the store.
    return RealMatrix(round_to_dtype(matmul(a, b, accumulator_for(dtype)), dtype), dtype)


def layer_forward(state: DoraLinearState, X: RealMatrix, *, tier_ctx: DispatchContext | None = None):
    """Returns ``(Y, saved)``.  ``tier_ctx`` overrides the state's dispatch template."""
    dt = state.working_dtype
    if X.cols != state.d_in:
        raise ValueError(f"X has {X.cols} columns, layer expects d_in={state.d_in}")
    if X.dtype is not dt:
        raise ValueError(f"X is {X.dtype}, layer works in {dt}")
    A, B = state.adapter.A, state.adapter.B

    # Norm first, fresh every call.
    w_norm = factored_row_norm(state.W, state.adapter, state.plan())
    g = magnitude_scale(state.m, w_norm, dt)
    g_c = np.asarray(g, dtype=np.float64 if dt is FP64 else np.float32)

    base_out = _mm(X.data, state.W.data.T, dt)
    xa = _mm(X.data, A.data.T, dt)
    lora_out = _mm(xa.data, B.data.T, dt)

    ctx = (tier_ctx or state.dispatch_cfg).with_shape(X.rows, state.d_out)
    decision = select_tier(ctx)
    inp = ComposeInputs(base_out, lora_out, g_c, state.adapter.s, dt)
    mag_grad = ctx.requires_grad and state.m_trainable

    inner = None
    if decision.tier is Tier.FUSED_BACKWARD:
        delta, inner, _ = dual_output_compose(inp, need_inner=mag_grad)
    elif decision.tier is Tier.FUSED_FORWARD:
        delta, _ = fused_compose(inp)
    else:
        delta = stable_compose(inp)
        if mag_grad:
            inner = compute_inner(inp)

    ct = accumulator_for(dt)
    y = round_to_dtype(base_out.widen() + delta.widen(), dt)
    if state.bias is not None:
        y = round_to_dtype(y.astype(ct) + round_to_dtype(np.asarray(state.bias, dtype=np.float64), dt).astype(ct), dt)
    Y = RealMatrix(np.ascontiguousarray(y), dt)

    saved = LayerSaved(X, xa, g_c, clamped_norm(w_norm, dt), base_out, lora_out, delta, inner, decision, mag_grad)
    return Y, saved


def layer_backward(state: DoraLinearState, saved: LayerSaved, dY: RealMatrix) -> LayerGrads:
    """Adapter and magnitude gradients; W is frozen and the norm is a constant."""
    if saved is None:
        raise ValueError("backward needs the saved bundle from a forward call")
    if dY.shape != saved.base_out.shape:
        raise ValueError(f"dY {dY.shape} does not match forward output {saved.base_out.shape}")
    if saved.mag_grad and saved.inner is None:
        raise ValueError("saved bundle lacks inner; forward ran without magnitude gradient")
    dt = state.working_dtype
    bundle = compose_backward(dY, saved.g, state.adapter.s, saved.inner, saved.w_norm, saved.mag_grad)
    ct = accumulator_for(dt)
    d_lora = bundle.d_lora.data
    # lora = xa @ B^T  ->  dB = d_lora^T @ xa,  d_xa = d_lora @ B;  xa = X @ A^T  ->  dA = d_xa^T @ X
    dB = round_to_dtype(matmul(d_lora.T, saved.xa.data, ct), dt)
    d_xa = round_to_dtype(matmul(d_lora, state.adapter.B.data, ct), dt)
    dA = round_to_dtype(matmul(d_xa.T, saved.X.data, ct), dt)
    d_mag = None if bundle.d_mag is None else round_to_dtype(bundle.d_mag, dt)
    return LayerGrads(dA, dB, d_mag, bundle)


def detached_loss(X, W, bias, A, B, s, m, w_norm) -> float:
    """``sum(Y)`` in fp64 with ``w_norm`` held fixed; the finite-difference target."""
    X, W, A, B = (np.asarray(v, dtype=np.float64) for v in (X, W, A, B))
    base = X @ W.T
    inner = float(s) * ((X @ A.T) @ B.T) + base
    g = np.asarray(m, dtype=np.float64) / np.asarray(w_norm, dtype=np.float64)
    Y = g * inner
    if bias is not None:
        Y = Y + np.asarray(bias, dtype=np.float64)
    return float(Y.sum())


def full_loss(X, W, bias, A, B, s, m, eps: float = 1e-12) -> float:
    """Same loss but with the norm recomputed from A and B, i.e. not detached."""
    W64 = np.asarray(W, dtype=np.float64)
    V = W64 + float(s) * (np.asarray(B, dtype=np.float64) @ np.asarray(A, dtype=np.float64))
    norm = np.maximum(np.sqrt((V * V).sum(axis=1)), eps)
    return detached_loss(X, W, bias, A, B, s, m, norm)


def central_difference(fn, theta: np.ndarray, rel_step: float = 1e-3) -> np.ndarray:
    """Central differences with step ``rel_step * max(1, |theta_i|)`` per entry."""
    theta = np.array(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    flat, gflat = theta.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        h = rel_step * max(1.0, abs(flat[i]))
        keep = flat[i]
        flat[i] = keep + h
        up = fn(theta)
        flat[i] = keep - h
        down = fn(theta)
        flat[i] = keep
        gflat[i] = (up - down) / (2 * h)
    return grad


def fd_grads(state: DoraLinearState, X: RealMatrix, w_norm, detached: bool = True) -> dict:
    """Finite-difference dA, dB, d_mag of ``sum(Y)`` around the state's parameters."""
    W, b, s = state.W.data, state.bias, state.adapter.s
    A0, B0, m0 = state.adapter.A.data, state.adapter.B.data, np.asarray(state.m, dtype=np.float64)
    Xd = X.data

    def loss(A, B, m):
        if detached:
            return detached_loss(Xd, W, b, A, B, s, m, w_norm)
        return full_loss(Xd, W, b, A, B, s, m, state.working_dtype.norm_eps)

    return {
        "dA": central_difference(lambda a: loss(a, B0, m0), A0),
        "dB": central_difference(lambda bb: loss(A0, bb, m0), B0),
        "d_mag": central_difference(lambda mm: loss(A0, B0, mm), m0),
    }
