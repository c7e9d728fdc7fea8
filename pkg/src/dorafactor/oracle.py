"""Dense brute-force references, all evaluated in float64.

``peft_identity_norm`` reproduces the identity-matrix construction used by
common DoRA implementations; ``dense_ba_norm`` forms ``B @ A`` directly.  Both
materialize the full ``[d_out, d_in]`` product and record what they
allocated, so the memory model has something concrete to compare with.
"""

from __future__ import annotations

import numpy as np

from .factored_norm import AdapterPair
from .linalg import RealMatrix, matmul, rowsum
from .numerics import round_to_dtype

IDENTITY_D_IN_CAP = 16384


def _f64(x) -> np.ndarray:
    return (x.data if isinstance(x, RealMatrix) else np.asarray(x)).astype(np.float64)


def _row_norm_of_composed(W: RealMatrix, lora_weight: np.ndarray, s: float, ledger, round_result):
    composed = _f64(W) + float(s) * lora_weight
    if ledger is not None:
        ledger["composed_weight"] = W.rows * W.cols * W.dtype.itemsize
    w_norm = np.sqrt(rowsum(composed * composed))
    return round_to_dtype(w_norm, W.dtype) if round_result else w_norm


def peft_identity_norm(
    W: RealMatrix,
    adapter: AdapterPair,
    *,
    ledger: dict | None = None,
    round_result: bool = True,
    d_in_cap: int = IDENTITY_D_IN_CAP,
) -> np.ndarray:
    """Row norm via ``(I @ A^T @ B^T)^T``; ``ledger`` receives allocation sizes in bytes.

    Sizes are those of the modeled baseline in W's storage format.
    """
    adapter.check_against(W)
    d_in = W.cols
    if d_in > d_in_cap:
        raise ValueError(f"d_in={d_in} exceeds the identity-oracle cap of {d_in_cap}")
    eye = np.eye(d_in)
    xa = matmul(eye, _f64(adapter.A).T, np.float64)
    lora_weight = matmul(xa, _f64(adapter.B).T, np.float64).T
    if ledger is not None:
        ledger["identity"] = d_in * d_in * W.dtype.itemsize
        ledger["lora_weight"] = W.rows * d_in * W.dtype.itemsize
    return _row_norm_of_composed(W, lora_weight, adapter.s, ledger, round_result)


def dense_ba_norm(
    W: RealMatrix,
    adapter: AdapterPair,
    *,
    ledger: dict | None = None,
    round_result: bool = True,
) -> np.ndarray:
    """Row norm via the explicit product ``B @ A``; no identity matrix."""
    adapter.check_against(W)
    lora_weight = matmul(_f64(adapter.B), _f64(adapter.A), np.float64)
    if ledger is not None:
        ledger["lora_weight"] = W.rows * W.cols * W.dtype.itemsize
    return _row_norm_of_composed(W, lora_weight, adapter.s, ledger, round_result)


def dense_composed_weight(W: RealMatrix, adapter: AdapterPair, m) -> np.ndarray:
    """``m * (W + sBA) / ||W + sBA||_row`` in float64, the norm floored at the dtype eps."""
    adapter.check_against(W)
    V = _f64(W) + float(adapter.s) * (_f64(adapter.B) @ _f64(adapter.A))
    norm = np.sqrt(np.sum(V * V, axis=1))
    norm = np.maximum(norm, W.dtype.norm_eps)
    return np.asarray(m, dtype=np.float64)[:, None] * V / norm[:, None]


def oracle_forward(X, W: RealMatrix, bias, adapter: AdapterPair, m) -> np.ndarray:
    """``X @ W'^T + bias`` through the fully composed weight, float64."""
    X = _f64(X)
    if X.shape[1] != W.cols:
        raise ValueError(f"X has {X.shape[1]} columns, W expects {W.cols}")
    Y = X @ dense_composed_weight(W, adapter, m).T
    if bias is not None:
        Y = Y + np.asarray(bias, dtype=np.float64)
    return Y
