"""Memory-efficient DoRA reference: factored row norms, stable compose, dispatch and models."""

__version__ = "0.1.0"

from .compose import (  # noqa: E402
    ComposeInputs,
    GradBundle,
    TrafficReport,
    compose_backward,
    dual_output_compose,
    eager_traffic_model,
    fused_compose,
    naive_compose,
    stable_compose,
)
from .dispatch import DispatchContext, Tier, TierDecision, select_tier, shape_guard  # noqa: E402
from .factored_norm import AdapterPair, NormTerms, factored_row_norm, magnitude_scale  # noqa: E402
from .layer import DoraLinearState, layer_backward, layer_forward  # noqa: E402
from .linalg import ChunkPlan, RealMatrix, plan_chunks  # noqa: E402
from .numerics import BF16, FP16, FP32, FP64, DTypeSpec, round_to_dtype  # noqa: E402

__all__ = [
    "AdapterPair",
    "BF16",
    "ChunkPlan",
    "ComposeInputs",
    "DTypeSpec",
    "DispatchContext",
    "DoraLinearState",
    "FP16",
    "FP32",
    "FP64",
    "GradBundle",
    "NormTerms",
    "RealMatrix",
    "Tier",
    "TierDecision",
    "TrafficReport",
    "compose_backward",
    "dual_output_compose",
    "eager_traffic_model",
    "factored_row_norm",
    "fused_compose",
    "layer_backward",
    "layer_forward",
    "magnitude_scale",
    "naive_compose",
    "plan_chunks",
    "round_to_dtype",
    "select_tier",
    "shape_guard",
    "stable_compose",
]
