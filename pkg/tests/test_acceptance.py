"""Acceptance gate: one PASS/FAIL line per criterion.

Run with pytest (lines appear in the terminal summary) or directly:
``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest

from dorafactor.bench import (
    DISPATCH_EXPECTED,
    dispatch_contexts,
    dumps,
    fleet_tier1_fraction,
    layer_fixture,
    backward_instance,
    run_suite,
    strip_timing,
)
from dorafactor.compose import (
    ComposeInputs,
    compose_backward,
    dual_output_compose,
    eager_traffic_model,
    fused_compose,
    stable_compose,
)
from dorafactor.config import SUITES, RuntimeConfig
from dorafactor.dispatch import DispatchContext, Tier, select_tier
from dorafactor.factored_norm import AdapterPair, factored_row_norm
from dorafactor.layer import fd_grads, layer_backward, layer_forward
from dorafactor.linalg import RealMatrix, seeded_array, seeded_fixture
from dorafactor.memory import TABLE6_SHAPES, TABLE6_THEORY, MiB, dense_baseline_bytes, theoretical_reduction
from dorafactor.numerics import BF16, FP16, FP32, FP64
from dorafactor.oracle import dense_ba_norm
from dorafactor.stability import cancellation_sweep, collapse_fractions, peak_ratio, sample_g

# Tolerances and limits, pinned.
NORM_REL_TOL = 1e-5
NORM_MIN_INSTANCES = 200
NORM_TIME_S = 10.0
PARITY_MIN_CASES = 1000
PARITY_TIME_S = 30.0
SWEEP_MIN_RATIO = 2.0
SWEEP_TIME_S = 20.0
COLLAPSE_BF16_MIN = 0.95
COLLAPSE_FP16_RANGE = (0.15, 0.35)
COLLAPSE_TIME_S = 5.0
GRAD_REL_TOL = 1e-3
GRAD_MIN_INSTANCES = 20
GRAD_TIME_S = 10.0
EAGER_PASS_RANGE = (10, 12)
TRAFFIC_RATIO_RANGE = (2.5, 4.0)

RESULTS: dict[str, str] = {}


def report(key: str, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {key} {title}: {detail}"
    RESULTS[key] = line
    print(line)
    assert ok, line


def _rel(a, b):
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def test_c01_norm_oracle_equivalence():
    dims = (3, 17, 64, 96, 257)
    t0 = time.perf_counter()
    n = 0
    worst = 0.0
    for d_out in dims:
        for d_in in dims:
            for r in (1, 2, 8, 33):
                for s in (0.0, 1.0, 2 / math.sqrt(r)):
                    seed = (n, 101)
                    W = seeded_fixture("gaussian", (d_out, d_in), (*seed, 0))
                    A = seeded_fixture("gaussian", (r, d_in), (*seed, 1), scale=1 / math.sqrt(d_in))
                    B = seeded_fixture("gaussian", (d_out, r), (*seed, 2))
                    ad = AdapterPair(A, B, s)
                    ref = dense_ba_norm(W, ad, round_result=False)
                    got = factored_row_norm(W, ad)
                    worst = max(worst, float(np.max(np.abs(got - ref) / ref)))
                    n += 1
    dt = time.perf_counter() - t0
    ok = n >= NORM_MIN_INSTANCES and worst <= NORM_REL_TOL and dt < NORM_TIME_S
    report("C01", "norm oracle equivalence", ok, f"{n} instances, max rel err {worst:.2e} (tol {NORM_REL_TOL:g}), {dt:.2f}s")


def test_c02_theory_table():
    got = tuple(round(theoretical_reduction(*sh), 1) for sh in TABLE6_SHAPES)
    t1 = round(theoretical_reduction(8192, 8192, 512), 1)
    ok = got == TABLE6_THEORY and t1 == 15.1
    report("C02", "theory table", ok, f"{list(got)}; (8192,8192,512) -> {t1}")


def test_c03_identity_bytes():
    a = dense_baseline_bytes(4096, 4096, BF16).identity_bytes
    b = dense_baseline_bytes(8192, 8192, BF16).identity_bytes
    ok = a == 32 * MiB and b == 128 * MiB
    report("C03", "identity baseline bytes", ok, f"d_in=4096 -> {a // MiB} MiB, d_in=8192 -> {b // MiB} MiB")


def test_c04_path_parity():
    rng = np.random.default_rng(404)
    specs = (FP32, BF16, FP16, FP64)
    t0 = time.perf_counter()
    n = ragged = unaligned = 0
    bad = []
    while n < PARITY_MIN_CASES:
        rows = int(rng.integers(1, 97))
        d_out = int(rng.integers(1, 321))
        spec = specs[n % 4]
        tr = int(rng.choice([1, 16, 64]))
        tc = int(rng.choice([32, 128]))
        seed = (n, 404)
        base = seeded_array("gaussian", (rows, d_out), (*seed, 0), spec, scale=8.0)
        lora = seeded_array("gaussian", (rows, d_out), (*seed, 1), spec, scale=8.0)
        g = 1.0 + 0.02 * seeded_array("gaussian", (d_out,), (*seed, 2), FP64)
        inp = ComposeInputs.build(base, lora, g, float(rng.choice([0.5, 1.0, 0.3535533905932738])), spec)
        ref = stable_compose(inp).data
        f, _ = fused_compose(inp, tr, tc)
        d, _, _ = dual_output_compose(inp, bool(n % 2), tr, tc)
        if not (np.array_equal(ref, f.data) and np.array_equal(ref, d.data)):
            bad.append(n)
        ragged += rows % tr != 0
        unaligned += d_out % tc != 0
        n += 1
    dt = time.perf_counter() - t0
    ok = not bad and ragged > 0 and unaligned > 0 and dt < PARITY_TIME_S
    report("C04", "path parity", ok, f"{n} cases ({ragged} ragged rows, {unaligned} unaligned d_out), {len(bad)} mismatches, {dt:.2f}s")


def test_c05_stability_dominance():
    t0 = time.perf_counter()
    pts = cancellation_sweep(BF16)
    dt = time.perf_counter() - t0
    dom = all(p.stable_err <= p.naive_err for p in pts)
    parity = all(p.fused_err == p.stable_err for p in pts)
    ratio = peak_ratio(pts)
    ok = dom and parity and ratio >= SWEEP_MIN_RATIO and dt < SWEEP_TIME_S
    report("C05", "stability dominance", ok, f"{len(pts)} points, dominance={dom}, fused==stable={parity}, peak ratio {ratio:.2f}, {dt:.2f}s")


def test_c06_collapse_fractions():
    t0 = time.perf_counter()
    fr = collapse_fractions(sample_g("gaussian", 10**6, 0, mean=1.0, std=0.0015))
    dt = time.perf_counter() - t0
    lo, hi = COLLAPSE_FP16_RANGE
    ok = fr["bf16"] >= COLLAPSE_BF16_MIN and lo <= fr["fp16"] <= hi and dt < COLLAPSE_TIME_S
    report("C06", "collapse-zone fractions", ok, f"bf16 {fr['bf16']:.4f}, fp16 {fr['fp16']:.4f}, {dt:.2f}s")


def test_c07_gradients():
    t0 = time.perf_counter()
    worst = 0.0
    n = 0
    for i in range(GRAD_MIN_INSTANCES):
        rows, d_out, d_in, r = backward_instance(i)
        state, X = layer_fixture(d_out, d_in, r, (707, i), rows=rows)
        Y, saved = layer_forward(state, X)
        g = layer_backward(state, saved, RealMatrix(np.ones_like(Y.data)))
        fd = fd_grads(state, X, saved.w_norm)
        worst = max(worst, _rel(g.dA, fd["dA"]), _rel(g.dB, fd["dB"]), _rel(g.d_mag, fd["d_mag"]))
        n += 1
    dY = RealMatrix(seeded_array("gaussian", (64, 64), 77))
    unit = compose_backward(dY, np.ones(64, np.float32), 0.5, None, np.ones(64), False)
    zero = bool(np.all(unit.d_base.data == 0))
    dt = time.perf_counter() - t0
    ok = worst <= GRAD_REL_TOL and zero and n >= GRAD_MIN_INSTANCES and dt < GRAD_TIME_S
    report("C07", "gradient correctness", ok, f"{n} instances, max rel err {worst:.2e} (tol {GRAD_REL_TOL:g}), d_base==0 at g=1: {zero}, {dt:.2f}s")


def test_c08_dispatch_table():
    table = list(dispatch_contexts())
    mism = [k for k, ctx in table if int(select_tier(ctx).tier) != DISPATCH_EXPECTED[k[:2]][k[2]]]
    small = select_tier(DispatchContext().with_shape(4096, 512)).tier
    frac = fleet_tier1_fraction()
    ok = len(table) == 24 and not mism and small is Tier.EAGER and frac == 5 / 7
    report("C08", "dispatch truth table", ok, f"{len(table)} contexts, {len(mism)} mismatches, d_out=512 -> tier {int(small)}, fleet tier-1 {frac:.1%}")


def test_c09_traffic_model():
    inp = ComposeInputs.build(np.ones((4096 // 16, 4096)), np.ones((4096 // 16, 4096)), np.ones(4096), 1.0, FP32)
    _, f = fused_compose(inp)
    e = eager_traffic_model(inp.rows, inp.d_out, FP32)
    ratio = e.bytes_total / f.bytes_total
    lo, hi = TRAFFIC_RATIO_RANGE
    plo, phi = EAGER_PASS_RANGE
    ok = (
        f.pass_count == 1
        and f.activation_reads == 2
        and f.activation_writes == 1
        and plo <= e.pass_count <= phi
        and lo <= ratio <= hi
    )
    report("C09", "traffic model", ok, f"fused {f.pass_count} pass, {f.activation_reads:g}R+{f.activation_writes:g}W; eager {e.pass_count} passes; bytes ratio {ratio:.2f}")


def test_c10_determinism(tmp_path):
    same = []
    for suite in SUITES:
        art = run_suite(RuntimeConfig(suite=suite, repeats=1, warmup=0, seed=10))
        path = tmp_path / f"{suite}.json"
        path.write_text(dumps(art))
        loaded = json.loads(path.read_text())
        again = run_suite(RuntimeConfig(**loaded["config"]))
        same.append(dumps(strip_timing(loaded)) == dumps(strip_timing(again)))
    ok = all(same)
    report("C10", "artifact determinism", ok, f"{sum(same)}/{len(same)} suites byte-identical after regeneration (timing excluded)")


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failed = 0
    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_c")):
        try:
            if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
