"""Collapse-zone statistics of the magnitude scale and the stable-vs-naive sweep."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .compose import ComposeInputs, fused_compose, naive_compose, stable_compose
from .linalg import RealMatrix, seeded_array
from .numerics import BF16, FP16, FP32, FP64, DTypeSpec, round_to_dtype


def collapse_fractions(g, specs=(BF16, FP16), exact: bool = False) -> dict[str, float]:
    """Fraction of ``g`` inside each format's collapse zone ``|g - 1| < ulp(1)/2``.

    With ``exact=True`` count instead the entries that round to exactly 1.
    The two differ just below 1, where the grid is twice as fine.
    """
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("g must be finite")
    out = {}
    for spec in specs:
        if exact:
            hit = round_to_dtype(g, spec) == 1.0
        else:
            hit = np.abs(g - 1.0) < spec.collapse_threshold
        out[spec.name] = float(np.count_nonzero(hit)) / g.size
    return out


def sample_g(model: str = "gaussian", n: int = 1, seed=0, mean: float = 1.0, std: float = 0.0015, path=None) -> np.ndarray:
    """Magnitude-scale samples: ``gaussian`` (float64) or a plain-text vector ``from_file``.

    The gaussian model only approximates a trained adapter's statistics.
    """
    if model == "gaussian":
        if n < 1:
            raise ValueError("n must be >= 1")
        return seeded_array("gaussian", (n,), seed, FP64, scale=std, loc=mean)
    if model == "from_file":
        try:
            g = np.loadtxt(path, dtype=np.float64, ndmin=1)
        except ValueError as exc:
            raise ValueError(f"malformed g file {path}: {exc}") from None
        if g.ndim != 1:
            raise ValueError(f"g file {path} must hold one value per line")
        return g
    raise ValueError(f"unknown g model {model!r}")


@dataclass(frozen=True)
class SweepConfig:
    rows: int = 512
    d_out: int = 2048
    points: int = 129
    half_width: float = 2.0**-6
    fixture_std: float = 16.0
    s: float = 1.0
    seed: int = 0

    def grid(self) -> np.ndarray:
        return np.linspace(1.0 - self.half_width, 1.0 + self.half_width, self.points)


@dataclass(frozen=True)
class SweepPoint:
    g: float
    stable_err: float
    naive_err: float
    fused_err: float


def sweep_point(g_value: float, index: int, spec: DTypeSpec, cfg: SweepConfig) -> SweepPoint:
    shape = (cfg.rows, cfg.d_out)
    base = seeded_array("gaussian", shape, (cfg.seed, index, 0), spec, scale=cfg.fixture_std)
    lora = seeded_array("gaussian", shape, (cfg.seed, index, 1), spec, scale=cfg.fixture_std)
    g = np.full(cfg.d_out, g_value, dtype=np.float32)
    inp = ComposeInputs(RealMatrix(base, spec), RealMatrix(lora, spec), g, cfg.s, spec)

    g64 = g.astype(np.float64)
    ref = lora.astype(np.float64)
    ref *= float(round_to_dtype(cfg.s, FP32))
    ref *= g64
    ref += (g64 - 1.0) * base

    def err(out: RealMatrix) -> float:
        d = out.data.astype(np.float64)
        d -= ref
        return float(max(d.max(), -d.min()))

    # Tile shape never changes results; full-width tiles keep the sweep fast.
    fused, _ = fused_compose(inp, tile_cols=cfg.d_out)
    return SweepPoint(float(g[0]), err(stable_compose(inp)), err(naive_compose(inp)), err(fused))


def cancellation_sweep(spec: DTypeSpec = BF16, cfg: SweepConfig | None = None, grid=None) -> list[SweepPoint]:
    """Max-abs error of each compose form against an fp64 reference, per grid g.

    Fixtures for grid point ``i`` are seeded by ``(seed, i)``.
    """
    cfg = cfg or SweepConfig()
    grid = cfg.grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if np.any((grid <= 0) | (grid >= 2)):
        raise ValueError("grid must lie inside (0, 2)")
    return [sweep_point(float(gv), i, spec, cfg) for i, gv in enumerate(grid)]


def peak_ratio(points: list[SweepPoint]) -> float:
    peak_stable = max(p.stable_err for p in points)
    peak_naive = max(p.naive_err for p in points)
    return peak_naive / peak_stable if peak_stable > 0 else float("inf")


def points_as_records(points) -> list[dict]:
    return [asdict(p) for p in points]
