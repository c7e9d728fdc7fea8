"""Correctness suites with a stable JSON artifact.

Every numeric field of an artifact is a pure function of its embedded
config; wall-clock numbers live only under keys named ``timing``.
"""

from __future__ import annotations

import json
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__
from .compose import (
    ComposeInputs,
    compose_backward,
    dual_output_compose,
    eager_traffic_model,
    fused_compose,
    fused_traffic_model,
    stable_compose,
)
from .config import RuntimeConfig
from .dispatch import CrossoverConfig, DispatchContext, Force, Tier, select_tier
from .factored_norm import AdapterPair, factored_row_norm
from .layer import DoraLinearState, fd_grads, layer_backward, layer_forward
from .linalg import RealMatrix, plan_chunks, seeded_array, seeded_fixture
from .memory import (
    MiB,
    TABLE6_SHAPES,
    TABLE6_THEORY,
    dense_baseline_bytes,
    factored_transient_bytes,
    theoretical_reduction,
)
from .numerics import BF16, FP16, FP32, FP64, dtype_from_name, round_to_dtype
from .oracle import dense_ba_norm, oracle_forward, peft_identity_norm
from .stability import SweepConfig, collapse_fractions, sample_g, sweep_point

SCHEMA_VERSION = 1

CORE_SHAPES = ((64, 96, 8), (257, 17, 2), (96, 64, 33), (17, 257, 1), (128, 256, 16))
EXTENDED_SHAPES = CORE_SHAPES + ((512, 1024, 16), (1024, 512, 64), (768, 768, 32))
SHAPES = {"core": CORE_SHAPES, "extended": EXTENDED_SHAPES, "table6": TABLE6_SHAPES}

# Above this many weight elements the norm and layer suites evaluate a
# proportionally shrunk proxy; the declared shape still drives the theory columns.
PROXY_MAX_ELEMS = 1 << 20
PROXY_DIVISOR = 32

NORM_TOL = {"fp32": 1e-5, "bf16": 2.0**-7, "fp16": 2.0**-10}
LAYER_TOL = {"fp32": 1e-5, "bf16": 2.0**-6, "fp16": 2.0**-9}
GRAD_TOL = 1e-3
COMPOSE_ROWS = 100  # not a multiple of the 64-row tile
LAYER_ROWS = 33


class SchemaError(ValueError):
    pass


def shape_set(cfg: RuntimeConfig):
    shapes = SHAPES[cfg.shapes]
    if cfg.rank is not None:
        shapes = tuple((d_out, d_in, cfg.rank) for d_out, d_in, _ in shapes)
    return shapes


def proxy_shape(d_out, d_in, r):
    if d_out * d_in <= PROXY_MAX_ELEMS:
        return d_out, d_in, r
    k = PROXY_DIVISOR
    return max(1, d_out // k), max(1, d_in // k), max(1, r // k)


def _rel(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    den = float(np.linalg.norm(b))
    num = float(np.linalg.norm(a - b))
    return num / den if den > 0 else num


def _fixture(d_out, d_in, r, seed, dtype, s):
    W = seeded_fixture("gaussian", (d_out, d_in), (seed, 0), dtype)
    A = seeded_fixture("gaussian", (r, d_in), (seed, 1), dtype, scale=1.0 / math.sqrt(d_in))
    B = seeded_fixture("gaussian", (d_out, r), (seed, 2), dtype)
    return W, AdapterPair(A, B, s)


def median_time(fn, repeats: int, warmup: int) -> dict:
    for _ in range(warmup):
        fn()
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return {"median_s": statistics.median(ts), "repeats": repeats, "warmup": warmup}


# ---- norm ---------------------------------------------------------------


def norm_case(cfg: RuntimeConfig, idx: int, shape):
    d_out, d_in, r = shape
    e_out, e_in, e_r = proxy_shape(*shape)
    dt = dtype_from_name(cfg.dtype)
    s = 2.0 / math.sqrt(e_r)
    W, ad = _fixture(e_out, e_in, e_r, (cfg.seed, idx), dt, s)
    plan = plan_chunks(e_out, e_in, cfg.norm_chunk_bytes)
    fact = factored_row_norm(W, ad, plan)
    ledger_id, ledger_ba = {}, {}
    ref_id = peft_identity_norm(W, ad, ledger=ledger_id, round_result=False)
    ref_ba = dense_ba_norm(W, ad, ledger=ledger_ba, round_result=False)
    err = float(np.max(np.abs(fact - ref_id) / np.maximum(ref_id, 1e-30)))
    theory = theoretical_reduction(d_out, d_in, r)
    ok = err <= NORM_TOL[cfg.dtype] and bool(np.array_equal(ref_id, ref_ba))
    outputs = {
        "theory_ratio": round(theory, 6),
        "max_rel_err": err,
        "oracles_bitwise_equal": bool(np.array_equal(ref_id, ref_ba)),
        "identity_ledger_bytes": ledger_id,
        "dense_ba_ledger_bytes": ledger_ba,
        "num_chunks": plan.num_chunks,
    }
    if cfg.shapes == "table6" and cfg.rank is None and shape in TABLE6_SHAPES:
        published = TABLE6_THEORY[TABLE6_SHAPES.index(shape)]
        outputs["published_theory_ratio"] = published
        ok = ok and round(theory, 1) == published
    return {
        "id": f"norm/{d_out}x{d_in}/r{r}",
        "inputs": {"shape": [d_out, d_in], "rank": r, "evaluated_shape": [e_out, e_in, e_r], "seed": [cfg.seed, idx], "s": s, "dtype": cfg.dtype},
        "outputs": outputs,
        "passed": bool(ok),
    }


def norm_timing(cfg):
    d_out, d_in, r = proxy_shape(*shape_set(cfg)[0])
    W, ad = _fixture(d_out, d_in, r, (cfg.seed, 0), dtype_from_name(cfg.dtype), 1.0)
    return {"factored_row_norm": median_time(lambda: factored_row_norm(W, ad), cfg.repeats, cfg.warmup)}


# ---- compose ------------------------------------------------------------


def _compose_inputs(rows, d_out, seed, dt, s, g=None):
    base = seeded_array("gaussian", (rows, d_out), (*seed, 0), dt)
    lora = seeded_array("gaussian", (rows, d_out), (*seed, 1), dt)
    if g is None:
        g = 1.0 + 0.01 * seeded_array("gaussian", (d_out,), (*seed, 2), FP32)
    return ComposeInputs.build(base, lora, g, s, dt)


def compose_case(cfg: RuntimeConfig, idx: int, shape):
    d_out = shape[0]
    rows = COMPOSE_ROWS
    dt = dtype_from_name(cfg.dtype)
    inp = _compose_inputs(rows, d_out, (cfg.seed, idx), dt, 0.5)
    ref = stable_compose(inp).data
    fused, traffic = fused_compose(inp)
    dual, inner, dual_traffic = dual_output_compose(inp, need_inner=True)
    _, no_inner, frozen_traffic = dual_output_compose(inp, need_inner=False)
    parity = bool(np.array_equal(ref, fused.data) and np.array_equal(ref, dual.data))

    ones = replace(inp, g=np.ones(d_out, dtype=inp.g.dtype))
    exact_g = bool(
        np.array_equal(stable_compose(ones).data, round_to_dtype(np.float32(inp.s) * inp.lora.widen(), dt))
    )
    eager = eager_traffic_model(rows, d_out, dt)
    model = fused_traffic_model(rows, d_out, dt)
    ratio = eager.bytes_total / traffic.bytes_total
    ok = (
        parity
        and exact_g
        and no_inner is None
        and traffic.activation_reads == 2
        and traffic.activation_writes == 1
        and traffic.pass_count == 1
        and frozen_traffic.activation_writes == 1
        and dual_traffic.activation_writes == 2
        and traffic.bytes_total == model.bytes_total
        and 10 <= eager.pass_count <= 12
        and 2.5 <= ratio <= 4.0
    )
    return {
        "id": f"compose/{rows}x{d_out}",
        "inputs": {"rows": rows, "d_out": d_out, "seed": [cfg.seed, idx], "s": 0.5, "dtype": cfg.dtype},
        "outputs": {
            "bitwise_parity": parity,
            "exact_g_identity": exact_g,
            "fused_traffic": {k: v for k, v in traffic.as_dict().items() if k != "ops"},
            "eager_traffic": {k: v for k, v in eager.as_dict().items() if k != "ops"},
            "bytes_ratio": ratio,
            "dual_activation_writes": dual_traffic.activation_writes,
            "frozen_activation_writes": frozen_traffic.activation_writes,
        },
        "passed": bool(ok),
    }


def compose_timing(cfg):
    inp = _compose_inputs(COMPOSE_ROWS, 1024, (cfg.seed, 0), dtype_from_name(cfg.dtype), 0.5)
    return {
        "stable_compose": median_time(lambda: stable_compose(inp), cfg.repeats, cfg.warmup),
        "fused_compose": median_time(lambda: fused_compose(inp), cfg.repeats, cfg.warmup),
    }


# ---- layer / backward ---------------------------------------------------


def layer_fixture(d_out, d_in, r, seed, dt=FP32, rows=LAYER_ROWS, s=None, m_trainable=True, bias=True):
    s = 2.0 / math.sqrt(r) if s is None else s
    W, ad = _fixture(d_out, d_in, r, seed, dt, s)
    # m starts at the row norms of W, as in a freshly initialized adapter, then drifts.
    w_rows = np.sqrt(np.sum(W.data.astype(np.float64) ** 2, axis=1))
    m = round_to_dtype(w_rows * (1.0 + 0.05 * seeded_array("gaussian", (d_out,), (*seed, 3), FP64)), dt)
    b = seeded_array("gaussian", (d_out,), (*seed, 4), dt) if bias else None
    X = seeded_fixture("gaussian", (rows, d_in), (*seed, 5), dt)
    return DoraLinearState(W, ad, np.asarray(m, dtype=np.float32), b, m_trainable, dt), X


def backward_instance(i: int):
    """(rows, d_out, d_in, r) of the i-th gradient-check instance."""
    sizes = (3, 8, 64)
    return sizes[i % 3], sizes[(i // 3) % 3], 6, 1 + i % 2


def backward_case(cfg: RuntimeConfig, idx: int, _shape=None):
    rows, d_out, d_in, r = backward_instance(idx)
    state, X = layer_fixture(d_out, d_in, r, (cfg.seed, idx), FP32, rows=rows)
    Y, saved = layer_forward(state, X)
    grads = layer_backward(state, saved, RealMatrix(np.ones_like(Y.data)))
    fd = fd_grads(state, X, saved.w_norm)
    errs = {
        "dA": _rel(grads.dA, fd["dA"]),
        "dB": _rel(grads.dB, fd["dB"]),
        "d_mag": _rel(grads.d_mag, fd["d_mag"]),
    }
    g1 = compose_backward(Y, np.ones(d_out, dtype=np.float32), state.adapter.s, saved.inner, saved.w_norm, True)
    d_base_zero = bool(np.all(g1.d_base.data == 0))
    return {
        "id": f"backward/{idx}",
        "inputs": {"rows": rows, "d_out": d_out, "d_in": d_in, "rank": r, "seed": [cfg.seed, idx], "dtype": "fp32"},
        "outputs": {"rel_err": errs, "d_base_zero_at_unit_g": d_base_zero},
        "passed": bool(max(errs.values()) <= GRAD_TOL and d_base_zero),
    }


def layer_case(cfg: RuntimeConfig, idx: int, shape):
    d_out, d_in, r = proxy_shape(*shape)
    dt = dtype_from_name(cfg.dtype)
    state, X = layer_fixture(d_out, d_in, r, (cfg.seed, idx), dt)
    base_ctx = DispatchContext(force_fused=Force.parse(cfg.fused))
    results = {}
    for label, fb in (("tier_on", Force.ON), ("tier_off", Force.OFF)):
        Y, saved = layer_forward(state, X, tier_ctx=replace(base_ctx, force_fused_backward=fb))
        gr = layer_backward(state, saved, Y)
        results[label] = (Y.data, gr.dA, gr.dB, gr.d_mag, int(saved.decision.tier))
    Y_inf, _ = layer_forward(state, X, tier_ctx=replace(base_ctx, requires_grad=False, training=False))
    a, b = results["tier_on"], results["tier_off"]
    tier_invariant = all(np.array_equal(x, y) for x, y in zip(a[:4], b[:4])) and np.array_equal(a[0], Y_inf.data)

    ref = oracle_forward(X.data, state.W, state.bias, state.adapter, state.m)
    err = _rel(a[0], ref)

    Y0, _ = layer_forward(replace(state, bias=None), X)
    bias_ok = bool(np.array_equal(a[0], round_to_dtype(Y0.data + np.asarray(state.bias, np.float32), dt)))

    W2 = RealMatrix(round_to_dtype(state.W.data * np.float32(1.5), dt), dt)
    _, s1 = layer_forward(state, X)
    _, s2 = layer_forward(replace(state, W=W2), X)
    fresh = not np.array_equal(s1.w_norm, s2.w_norm)

    ok = tier_invariant and err <= LAYER_TOL[cfg.dtype] and bias_ok and fresh
    return {
        "id": f"layer/{d_out}x{d_in}/r{r}",
        "inputs": {"shape": list(shape), "evaluated_shape": [d_out, d_in, r], "rows": LAYER_ROWS, "seed": [cfg.seed, idx], "dtype": cfg.dtype},
        "outputs": {
            "tiers_compared": [a[4], b[4]],
            "tier_invariant": bool(tier_invariant),
            "oracle_rel_err": err,
            "bias_neutral": bias_ok,
            "norm_fresh": bool(fresh),
        },
        "passed": bool(ok),
    }


def layer_timing(cfg):
    d_out, d_in, r = proxy_shape(*shape_set(cfg)[0])
    state, X = layer_fixture(d_out, d_in, r, (cfg.seed, 0), dtype_from_name(cfg.dtype))
    return {"layer_forward": median_time(lambda: layer_forward(state, X), cfg.repeats, cfg.warmup)}


# ---- dispatch -----------------------------------------------------------

# (label, rows, d_out, contiguous) of the four shape/guard columns.
DISPATCH_SHAPES = (
    ("large", 4096, 4096, True),
    ("small_d_out", 4096, 512, True),
    ("unaligned_d_out", 4096, 4000, True),
    ("non_contiguous", 4096, 4096, False),
)
# Expected tier for (mode, force_fused_backward, shape label), written out by hand.
DISPATCH_EXPECTED = {
    ("train", "auto"): {"large": 1, "small_d_out": 3, "unaligned_d_out": 3, "non_contiguous": 3},
    ("train", "on"): {"large": 1, "small_d_out": 1, "unaligned_d_out": 3, "non_contiguous": 3},
    ("train", "off"): {"large": 3, "small_d_out": 3, "unaligned_d_out": 3, "non_contiguous": 3},
    ("infer", "auto"): {"large": 2, "small_d_out": 2, "unaligned_d_out": 3, "non_contiguous": 3},
    ("infer", "on"): {"large": 2, "small_d_out": 2, "unaligned_d_out": 3, "non_contiguous": 3},
    ("infer", "off"): {"large": 2, "small_d_out": 2, "unaligned_d_out": 3, "non_contiguous": 3},
}
# Per-layer projection widths at rows=4096: q, k, v, o, gate, up, down.
FLEET_D_OUT = (4096, 512, 512, 4096, 11008, 4096, 4096)
FLEET_ROWS = 4096


def dispatch_contexts():
    for mode in ("train", "infer"):
        for fb in ("auto", "on", "off"):
            for label, rows, d_out, contiguous in DISPATCH_SHAPES:
                ctx = DispatchContext(
                    training=mode == "train",
                    requires_grad=mode == "train",
                    force_fused_backward=Force(fb),
                    contiguous=contiguous,
                ).with_shape(rows, d_out)
                yield (mode, fb, label), ctx


def dispatch_case(cfg: RuntimeConfig, idx: int, _shape=None):
    key, ctx = list(dispatch_contexts())[idx]
    d = select_tier(ctx)
    expected = DISPATCH_EXPECTED[key[:2]][key[2]]
    return {
        "id": "dispatch/" + "/".join(key),
        "inputs": {"mode": key[0], "force_fused_backward": key[1], "shape": key[2], "rows": ctx.rows, "d_out": ctx.d_out, "contiguous": ctx.contiguous},
        "outputs": {"tier": int(d.tier), "expected_tier": expected, "reasons": list(d.reasons)},
        "passed": int(d.tier) == expected and (d.tier != Tier.EAGER or len(d.reasons) > 0),
    }


def fleet_tier1_fraction(crossover: CrossoverConfig | None = None) -> float:
    ctx = DispatchContext(crossover=crossover or CrossoverConfig())
    tiers = [select_tier(ctx.with_shape(FLEET_ROWS, d)).tier for d in FLEET_D_OUT]
    return sum(t is Tier.FUSED_BACKWARD for t in tiers) / len(tiers)


def fleet_case(cfg: RuntimeConfig, idx: int = 0, _shape=None):
    frac = fleet_tier1_fraction()
    return {
        "id": "dispatch/fleet",
        "inputs": {"rows": FLEET_ROWS, "d_out": list(FLEET_D_OUT)},
        "outputs": {"tier1_fraction": frac},
        "passed": frac == 5 / 7,
    }


# ---- memory -------------------------------------------------------------


def memory_case(cfg: RuntimeConfig, idx: int, shape):
    d_out, d_in, r = shape
    plan = plan_chunks(d_out, d_in, cfg.norm_chunk_bytes)
    est = factored_transient_bytes(plan, d_out, r, weights_need_widening=cfg.dtype != "fp32")
    dense = dense_baseline_bytes(d_out, d_in, dtype_from_name(cfg.dtype))
    theory = theoretical_reduction(d_out, d_in, r)
    outputs = {
        "theory_ratio": round(theory, 6),
        "factored_transient_bytes": est.transient_bytes,
        "breakdown": est.breakdown,
        "dense_baseline_bytes": dense.transient_bytes,
        "identity_bytes": dense.identity_bytes,
    }
    ok = True
    if cfg.rank is None and shape in TABLE6_SHAPES:
        outputs["published_theory_ratio"] = TABLE6_THEORY[TABLE6_SHAPES.index(shape)]
        ok = round(theory, 1) == outputs["published_theory_ratio"]
    return {
        "id": f"memory/{d_out}x{d_in}/r{r}",
        "inputs": {"shape": [d_out, d_in], "rank": r, "dtype": cfg.dtype, "norm_chunk_mb": cfg.norm_chunk_mb},
        "outputs": outputs,
        "passed": bool(ok),
    }


def memory_fixed_case(cfg: RuntimeConfig, idx: int, _shape=None):
    """Closed-form checks that do not depend on the shape set."""
    ratio = theoretical_reduction(8192, 8192, 512)
    id4096 = dense_baseline_bytes(4096, 4096, BF16).identity_bytes
    id8192 = dense_baseline_bytes(8192, 8192, BF16).identity_bytes
    plan = plan_chunks(8192, 8192, 256 * MiB)
    fp32_est = factored_transient_bytes(plan, 8192, 512, weights_need_widening=False)
    zero = factored_transient_bytes(plan, 8192, 512, s_zero=True)
    lo = factored_transient_bytes(plan, 8192, 16).breakdown["chunk_buffer"]
    hi = factored_transient_bytes(plan, 8192, 768).breakdown["chunk_buffer"]
    explained = fp32_est.transient_bytes / (241 * MiB)
    outputs = {
        "table1_ratio": ratio,
        "identity_bytes_d4096_bf16": id4096,
        "identity_bytes_d8192_bf16": id8192,
        "fp32_transient_bytes_8192_r512": fp32_est.transient_bytes,
        "fraction_of_241MiB_explained": explained,
        "s_zero_drops_u_and_gram": zero.breakdown["u_chunk"] == 0 and zero.breakdown["gram"] == 0,
        "chunk_buffer_rank_independent": lo == hi,
    }
    ok = (
        round(ratio, 1) == 15.1
        and id4096 == 32 * MiB
        and id8192 == 128 * MiB
        and explained >= 0.8
        and outputs["s_zero_drops_u_and_gram"]
        and outputs["chunk_buffer_rank_independent"]
    )
    return {"id": "memory/closed_form", "inputs": {"budget_mb": 256}, "outputs": outputs, "passed": bool(ok)}


# ---- stability ----------------------------------------------------------


def _stability_spec(cfg):
    return FP16 if cfg.dtype == "fp16" else BF16


def stability_point_case(cfg: RuntimeConfig, idx: int, _shape=None):
    sc = SweepConfig(seed=cfg.seed)
    gv = float(sc.grid()[idx])
    spec = _stability_spec(cfg)
    p = sweep_point(gv, idx, spec, sc)
    return {
        "id": f"stability/point/{idx}",
        "inputs": {"g": gv, "index": idx, "rows": sc.rows, "d_out": sc.d_out, "seed": [cfg.seed, idx], "dtype": spec.name},
        "outputs": {"g": p.g, "stable_err": p.stable_err, "naive_err": p.naive_err, "fused_err": p.fused_err},
        "passed": p.stable_err <= p.naive_err and p.fused_err == p.stable_err,
    }


def stability_collapse_case(cfg: RuntimeConfig, idx: int = 0, _shape=None):
    g = sample_g("gaussian", 10**6, cfg.seed)
    fr = collapse_fractions(g)
    return {
        "id": "stability/collapse",
        "inputs": {"model": "gaussian", "mean": 1.0, "std": 0.0015, "n": 10**6, "seed": cfg.seed, "note": "gaussian approximation of trained-adapter statistics"},
        "outputs": {"fractions": fr},
        "passed": fr["bf16"] >= 0.95 and 0.15 <= fr["fp16"] <= 0.35,
    }


def stability_summary(cases: list[dict]) -> dict:
    pts = [c["outputs"] for c in cases if c["id"].startswith("stability/point/")]
    peak_s = max(p["stable_err"] for p in pts)
    peak_n = max(p["naive_err"] for p in pts)
    ratio = peak_n / peak_s if peak_s > 0 else None
    dominance = all(p["stable_err"] <= p["naive_err"] for p in pts)
    return {
        "id": "stability/sweep",
        "inputs": {"points": len(pts)},
        "outputs": {"peak_stable_err": peak_s, "peak_naive_err": peak_n, "peak_ratio": ratio, "dominance": dominance},
        "passed": bool(dominance and ratio is not None and ratio >= 2.0),
    }


def stability_timing(cfg):
    sc = SweepConfig(seed=cfg.seed)
    inp = _compose_inputs(sc.rows, sc.d_out, (cfg.seed, 0), _stability_spec(cfg), 1.0)
    return {"stable_compose": median_time(lambda: stable_compose(inp), cfg.repeats, cfg.warmup)}


# ---- driver -------------------------------------------------------------


def plan_cases(cfg: RuntimeConfig) -> list[tuple]:
    """(function, index, shape) triples for a suite, in artifact order."""
    suite = cfg.suite
    shapes = shape_set(cfg)
    if suite == "norm":
        return [(norm_case, i, sh) for i, sh in enumerate(shapes)]
    if suite == "compose":
        return [(compose_case, i, sh) for i, sh in enumerate(shapes)]
    if suite == "layer":
        return [(layer_case, i, sh) for i, sh in enumerate(shapes)]
    if suite == "backward":
        return [(backward_case, i, None) for i in range(20)]
    if suite == "dispatch":
        return [(dispatch_case, i, None) for i in range(24)] + [(fleet_case, 0, None)]
    if suite == "memory":
        return [(memory_case, i, sh) for i, sh in enumerate(shapes)] + [(memory_fixed_case, 0, None)]
    if suite == "stability":
        n = SweepConfig().points
        return [(stability_point_case, i, None) for i in range(n)] + [(stability_collapse_case, 0, None)]
    raise ValueError(f"unknown suite {suite!r}")


_TIMING = {"norm": norm_timing, "compose": compose_timing, "layer": layer_timing, "stability": stability_timing}


def _call(job):
    fn, cfg, idx, shape = job
    return fn(cfg, idx, shape)


def _finite(obj):
    # JSON has no inf/nan; keep artifacts strictly valid.
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return _finite(obj.item())
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def run_suite(cfg: RuntimeConfig, with_timing: bool = True) -> dict:
    if cfg.suite is None:
        raise ValueError("no suite selected")
    t0 = time.perf_counter()
    jobs = [(fn, cfg, idx, sh) for fn, idx, sh in plan_cases(cfg)]
    if cfg.parallel > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallel) as ex:
            cases = list(ex.map(_call, jobs))
    else:
        cases = [_call(j) for j in jobs]
    if cfg.suite == "stability":
        cases.append(stability_summary(cases))
    cases = [_finite(c) for c in cases]
    n_pass = sum(1 for c in cases if c["passed"])
    summary = {"cases": len(cases), "passed": n_pass, "failed": len(cases) - n_pass, "all_passed": n_pass == len(cases)}
    timing = {}
    if with_timing and cfg.suite in _TIMING:
        timing["kernels"] = _TIMING[cfg.suite](cfg)
    timing["wall_s"] = time.perf_counter() - t0
    config = cfg.as_dict()
    config.pop("json_out")
    config.pop("parallel")  # results do not depend on it
    return {
        "schema": SCHEMA_VERSION,
        "package_version": __version__,
        "suite": cfg.suite,
        "config": config,
        "cases": cases,
        "summary": summary,
        "timing": _finite(timing),
    }


def dumps(artifact: dict) -> str:
    return json.dumps(artifact, sort_keys=True, indent=2) + "\n"


def strip_timing(obj):
    """Drop every ``timing`` key, recursively; what remains must be reproducible."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k != "timing"}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def config_from_artifact(artifact: dict) -> RuntimeConfig:
    try:
        return RuntimeConfig(**artifact["config"])
    except KeyError as exc:
        raise SchemaError(f"artifact is missing field {exc.args[0]!r}") from None


# ---- plot data ----------------------------------------------------------

PLOT_TARGETS = {
    "stability_curve": ("stability/point/", ("g", "stable_err", "naive_err")),
    "norm_memory": ("", ("shape", "rank", "theory_ratio")),
    "traffic": ("compose/", ("rows", "d_out", "fused_bytes", "eager_bytes", "bytes_ratio", "eager_passes")),
}


def _field(case: dict, path: str):
    cur = case
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise SchemaError(f"case {case.get('id', '?')!r} is missing field {path!r}")
        cur = cur[part]
    return cur


def plot_rows(artifact: dict, target: str) -> tuple[list[str], list[list]]:
    """Header and rows for one plot target; raises SchemaError naming any missing field."""
    if target not in PLOT_TARGETS:
        raise ValueError(f"unknown plot target {target!r}")
    if artifact.get("schema") != SCHEMA_VERSION:
        raise SchemaError(f"field 'schema' must be {SCHEMA_VERSION}, got {artifact.get('schema')!r}")
    if "cases" not in artifact:
        raise SchemaError("artifact is missing field 'cases'")
    prefix, header = PLOT_TARGETS[target]
    rows = []
    for case in artifact["cases"]:
        cid = _field(case, "id")
        if target == "stability_curve" and cid.startswith(prefix):
            rows.append([_field(case, "outputs." + h) for h in header])
        elif target == "norm_memory" and (cid.startswith("norm/") or cid.startswith("memory/")) and cid != "memory/closed_form":
            d_out, d_in = _field(case, "inputs.shape")
            rows.append([f"{d_out}x{d_in}", _field(case, "inputs.rank"), _field(case, "outputs.theory_ratio")])
        elif target == "traffic" and cid.startswith(prefix):
            rows.append([
                _field(case, "inputs.rows"),
                _field(case, "inputs.d_out"),
                _field(case, "outputs.fused_traffic.bytes_total"),
                _field(case, "outputs.eager_traffic.bytes_total"),
                _field(case, "outputs.bytes_ratio"),
                _field(case, "outputs.eager_traffic.pass_count"),
            ])
    if not rows:
        raise SchemaError(f"artifact of suite {artifact.get('suite')!r} has no cases for target {target!r}")
    return list(header), rows
