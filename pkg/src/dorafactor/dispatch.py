"""Three-tier selection of the compose path.

Tier 1: fused forward+backward (training, saves ``inner``).
Tier 2: fused forward only (inference).
Tier 3: eager elementwise fallback.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace


class Tier(enum.IntEnum):
    FUSED_BACKWARD = 1
    FUSED_FORWARD = 2
    EAGER = 3


class Force(str, enum.Enum):
    ON = "on"
    OFF = "off"
    AUTO = "auto"

    @classmethod
    def parse(cls, value) -> "Force":
        if isinstance(value, Force):
            return value
        v = str(value).strip().lower()
        aliases = {"1": "on", "true": "on", "0": "off", "false": "off", "": "auto"}
        return cls(aliases.get(v, v))


# Reason codes.
NO_ACCELERATOR = "NO_ACCELERATOR"
NO_KERNELS = "NO_KERNELS"
FORCED_OFF = "FORCED_OFF"
FORCED_ON = "FORCED_ON"
FUSED_BACKWARD_OFF = "FUSED_BACKWARD_OFF"
NON_CONTIGUOUS = "NON_CONTIGUOUS"
SHAPE_GUARD = "SHAPE_GUARD"
D_OUT_ALIGNMENT = "D_OUT_ALIGNMENT"
BELOW_CROSSOVER = "BELOW_CROSSOVER"
ABOVE_CROSSOVER = "ABOVE_CROSSOVER"
INFERENCE = "INFERENCE"
GRAD_OUTSIDE_TRAINING = "GRAD_OUTSIDE_TRAINING"


@dataclass(frozen=True)
class CrossoverConfig:
    # Launch latency dominates below these; retune for new hardware.
    min_d_out: int = 2048
    min_elements: int = 2048 * 6144


@dataclass(frozen=True)
class DispatchContext:
    training: bool = True
    requires_grad: bool = True
    accelerator_available: bool = True
    kernels_available: bool = True
    force_fused: Force = Force.AUTO
    force_fused_backward: Force = Force.AUTO
    rows: int = 1
    d_out: int = 1
    contiguous: bool = True
    mag_broadcast_last_dim: bool = True
    d_out_divisible_128: bool = True
    crossover: CrossoverConfig = field(default_factory=CrossoverConfig)

    def __post_init__(self):
        if self.rows < 1 or self.d_out < 1:
            raise ValueError(f"rows and d_out must be >= 1, got {self.rows}, {self.d_out}")

    def with_shape(self, rows: int, d_out: int) -> "DispatchContext":
        return replace(self, rows=rows, d_out=d_out, d_out_divisible_128=d_out % 128 == 0)


@dataclass(frozen=True)
class TierDecision:
    tier: Tier
    reasons: tuple[str, ...]


def select_tier(ctx: DispatchContext) -> TierDecision:
    """Pick the compose tier; ``reasons`` lists every rule that fired."""
    fallback = []
    if not ctx.accelerator_available:
        fallback.append(NO_ACCELERATOR)
    if not ctx.kernels_available:
        fallback.append(NO_KERNELS)
    if Force.parse(ctx.force_fused) is Force.OFF:
        fallback.append(FORCED_OFF)
    if not ctx.contiguous:
        fallback.append(NON_CONTIGUOUS)
    if not ctx.mag_broadcast_last_dim:
        fallback.append(SHAPE_GUARD)
    if not ctx.d_out_divisible_128:
        fallback.append(D_OUT_ALIGNMENT)
    if fallback:
        return TierDecision(Tier.EAGER, tuple(fallback))

    if not ctx.requires_grad:
        return TierDecision(Tier.FUSED_FORWARD, (INFERENCE,))

    # Tier 1 is a training kernel; gradients outside training take the eager path.
    if not ctx.training:
        return TierDecision(Tier.EAGER, (GRAD_OUTSIDE_TRAINING,))

    fb = Force.parse(ctx.force_fused_backward)
    if fb is Force.ON:
        return TierDecision(Tier.FUSED_BACKWARD, (FORCED_ON,))
    if fb is Force.OFF:
        return TierDecision(Tier.EAGER, (FUSED_BACKWARD_OFF,))
    if _above(ctx):
        return TierDecision(Tier.FUSED_BACKWARD, (ABOVE_CROSSOVER,))
    return TierDecision(Tier.EAGER, (BELOW_CROSSOVER,))


def _above(ctx: DispatchContext) -> bool:
    c = ctx.crossover
    return ctx.d_out >= c.min_d_out and ctx.rows * ctx.d_out >= c.min_elements


def shape_guard(activation_shape, magnitude_shape) -> bool:
    """True iff the magnitude broadcasts only along the activation's last axis.

    Both element count and placement are checked: ``[1, C, 1, 1]`` against
    ``[N, C, H, W]`` fails even when ``C == W``.
    """
    act = tuple(int(d) for d in activation_shape)
    mag = tuple(int(d) for d in magnitude_shape)
    if not act or not mag or len(mag) > len(act):
        return False
    n = 1
    for d in mag:
        n *= d
    if n != act[-1]:
        return False
    return mag[-1] == act[-1] and all(d == 1 for d in mag[:-1])
