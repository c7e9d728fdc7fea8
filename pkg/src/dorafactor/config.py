"""Runtime configuration: defaults, then environment, then command-line flags."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace

from .dispatch import Force

ENV_PREFIX = "DORAFACTOR_"
# Names used by the PEFT integration; read when the DORAFACTOR_ form is unset.
ENV_ALIAS_PREFIX = "PEFT_DORA_"

SUITES = ("norm", "compose", "backward", "dispatch", "memory", "stability", "layer")
SHAPE_SETS = ("core", "extended", "table6")
DTYPES = ("fp32", "bf16", "fp16")


@dataclass(frozen=True)
class RuntimeConfig:
    suite: str | None = None
    shapes: str = "core"
    rank: int | None = None
    dtype: str = "fp32"
    repeats: int = 20
    warmup: int = 3
    seed: int = 0
    json_out: str | None = None
    fused: str = "auto"
    fused_backward: str = "auto"
    norm_chunk_mb: int = 256
    parallel: int = 1

    def __post_init__(self):
        if self.suite is not None and self.suite not in SUITES:
            raise ValueError(f"unknown suite {self.suite!r}; choose from {', '.join(SUITES)}")
        if self.shapes not in SHAPE_SETS:
            raise ValueError(f"unknown shape set {self.shapes!r}")
        if self.dtype not in DTYPES:
            raise ValueError(f"unknown dtype {self.dtype!r}")
        if self.repeats < 1 or self.warmup < 0:
            raise ValueError("repeats must be >= 1 and warmup >= 0")
        if self.rank is not None and self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.norm_chunk_mb < 1:
            raise ValueError("norm_chunk_mb must be >= 1")
        if self.parallel < 1:
            raise ValueError("parallel must be >= 1")
        Force.parse(self.fused)
        Force.parse(self.fused_backward)

    @property
    def norm_chunk_bytes(self) -> int:
        return self.norm_chunk_mb * 2**20

    def with_overrides(self, **kw) -> "RuntimeConfig":
        """Apply non-None overrides."""
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def as_dict(self) -> dict:
        return asdict(self)


_INT_FIELDS = {"rank", "repeats", "warmup", "seed", "norm_chunk_mb", "parallel"}


def _normalize_force(v: str) -> str:
    return Force.parse(v).value


def env_overrides(environ=None) -> dict:
    """Config values found in the environment, keyed by field name."""
    environ = os.environ if environ is None else environ
    out = {}
    for f in fields(RuntimeConfig):
        key = f.name.upper()
        raw = environ.get(ENV_PREFIX + key)
        if raw is None:
            raw = environ.get(ENV_ALIAS_PREFIX + key)
        if raw is None or raw == "":
            continue
        if f.name in _INT_FIELDS:
            try:
                out[f.name] = int(raw)
            except ValueError:
                raise ValueError(f"{ENV_PREFIX}{key}={raw!r} is not an integer") from None
        elif f.name in ("fused", "fused_backward"):
            out[f.name] = _normalize_force(raw)
        else:
            out[f.name] = raw
    return out


def resolve(cli: dict | None = None, environ=None) -> RuntimeConfig:
    """Defaults < environment < flags (flags given as None are ignored)."""
    cfg = RuntimeConfig().with_overrides(**env_overrides(environ))
    cli = dict(cli or {})
    for k in ("fused", "fused_backward"):
        if cli.get(k) is not None:
            cli[k] = _normalize_force(cli[k])
    return cfg.with_overrides(**cli)
