
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dorafactor.compose import (
    LAYER_KINDS,
    ComposeInputs,
    compose_backward,
    compose_delta,
    compute_inner,
    dual_output_compose,
    eager_traffic_model,
    fused_compose,
    fused_traffic_model,
    naive_compose,
    stable_compose,
)
from dorafactor.linalg import RealMatrix, seeded_array
from dorafactor.numerics import BF16, FP16, FP32, FP64, round_to_dtype

SPECS = [FP32, BF16, FP16, FP64]


def inputs(rows, d_out, seed, dt=FP32, s=0.5, g_spread=0.01, scale=1.0):
    base = seeded_array("gaussian", (rows, d_out), (seed, 0), dt, scale=scale)
    lora = seeded_array("gaussian", (rows, d_out), (seed, 1), dt, scale=scale)
    g = 1.0 + g_spread * seeded_array("gaussian", (d_out,), (seed, 2), FP64)
    return ComposeInputs.build(base, lora, g, s, dt)


def const(rows, d_out, base, lora, g, s, dt=FP32):
    return ComposeInputs.build(np.full((rows, d_out), base), np.full((rows, d_out), lora), np.full(d_out, g), s, dt)


def test_stable_examples():
    inp = inputs(5, 7, 0)
    one = ComposeInputs(inp.base, inp.lora, np.ones(7, np.float32), 0.5, FP32)
    assert np.array_equal(stable_compose(one).data, np.float32(0.5) * inp.lora.data)
    zero = ComposeInputs(inp.base, inp.lora, np.ones(7, np.float32), 0.0, FP32)
    assert not stable_compose(zero).data.any()
    assert np.all(stable_compose(const(3, 4, 1.0, 1.0, 2.0, 0.5)).data == 2.0)


def test_naive_examples():
    # g == 1: base cancels exactly when t + base is exact, as with small integers.
    ints = ComposeInputs.build(
        np.arange(12.0).reshape(3, 4), np.arange(12.0).reshape(3, 4) - 5, np.ones(4), 0.5, FP32
    )
    assert np.array_equal(naive_compose(ints).data, np.float32(0.5) * ints.lora.data)
    # In general the rounding of t + base survives the cancellation; the stable form has none.
    inp = inputs(5, 7, 1)
    one = ComposeInputs(inp.base, inp.lora, np.ones(7, np.float32), 0.5, FP32)
    want = np.float32(0.5) * inp.lora.data
    assert np.array_equal(stable_compose(one).data, want)
    assert not np.array_equal(naive_compose(one).data, want)
    # g rounds to 1 in bf16, so the true 0.5 correction vanishes.
    assert not naive_compose(const(1, 1, 256.0, 0.0, 1 + 2**-9, 1.0, BF16)).data.any()
    assert stable_compose(const(1, 1, 256.0, 0.0, 1 + 2**-9, 1.0, BF16)).data[0, 0] == 0.5
    assert naive_compose(const(1, 1, 1.0, 1.0, 2.0, 1.0)).data[0, 0] == 3.0


@given(seed=st.integers(0, 10**6), s=st.sampled_from([1.0, 0.5, 0.7071067811865476, 3.0]))
def test_naive_half_fast_path_equals_float64_route(seed, s):
    for dt in (BF16, FP16):
        inp = inputs(6, 10, seed, dt, s=s, scale=16.0)
        got = naive_compose(inp).data
        g = round_to_dtype(inp.g, dt)
        sf = float(np.float32(s))
        t = round_to_dtype(sf * inp.lora.data.astype(np.float64), dt)
        u = round_to_dtype(t.astype(np.float64) + inp.base.data, dt)
        v = round_to_dtype(g.astype(np.float64) * u, dt)
        want = round_to_dtype(v.astype(np.float64) - inp.base.data, dt)
        assert np.array_equal(got, want)


@given(
    rows=st.integers(1, 150),
    d_out=st.integers(1, 300),
    dt=st.sampled_from(SPECS),
    tile_rows=st.sampled_from([1, 7, 64]),
    tile_cols=st.sampled_from([5, 128, 1000]),
    seed=st.integers(0, 10**6),
)
def test_all_paths_bitwise_equal(rows, d_out, dt, tile_rows, tile_cols, seed):
    inp = inputs(rows, d_out, seed, dt)
    ref = stable_compose(inp).data
    fused, _ = fused_compose(inp, tile_rows, tile_cols)
    dual, inner, _ = dual_output_compose(inp, True, tile_rows, tile_cols)
    assert np.array_equal(fused.data, ref)
    assert np.array_equal(dual.data, ref)
    assert np.array_equal(inner.data, compute_inner(inp).data)
    for kind in LAYER_KINDS:
        assert np.array_equal(compose_delta(inp, kind).data, ref)


@pytest.mark.parametrize("dt", SPECS, ids=lambda d: d.name)
def test_unit_g_identity_every_variant(dt):
    inp = inputs(9, 13, 4, dt)
    one = ComposeInputs(inp.base, inp.lora, np.ones(13, inp.g.dtype), 0.5, dt)
    want = round_to_dtype(0.5 * inp.lora.data.astype(np.float64), dt)
    assert np.array_equal(stable_compose(one).data, want)
    assert np.array_equal(fused_compose(one)[0].data, want)
    assert np.array_equal(dual_output_compose(one, False)[0].data, want)
    dY = RealMatrix(inp.base.data.copy(), dt)
    gb = compose_backward(dY, one.g, 0.5, None, np.ones(13), False)
    assert not gb.d_base.data.any()


def test_dual_output_frozen_magnitude():
    inp = const(3, 4, 0.0, 2.0, 1.0, 1.0)
    delta, inner, tr = dual_output_compose(inp, need_inner=True)
    assert np.array_equal(inner.data, inp.lora.data) and np.array_equal(delta.data, inp.lora.data)
    assert tr.activation_writes == 2
    _, none, tr = dual_output_compose(inp, need_inner=False)
    assert none is None and tr.activation_writes == 1


def test_fused_needs_contiguous():
    inp = inputs(4, 4, 0)
    nc = ComposeInputs(RealMatrix(inp.base.data, FP32, contiguous=False), inp.lora, inp.g, 0.5, FP32)
    with pytest.raises(ValueError):
        fused_compose(nc)
    assert np.array_equal(stable_compose(nc).data, stable_compose(inp).data)


def test_shape_checks():
    with pytest.raises(ValueError):
        ComposeInputs.build(np.ones((2, 3)), np.ones((2, 4)), np.ones(3), 1.0, FP32)
    with pytest.raises(ValueError):
        ComposeInputs.build(np.ones((2, 3)), np.ones((2, 3)), np.ones(4), 1.0, FP32)
    with pytest.raises(ValueError):
        ComposeInputs(RealMatrix(np.ones((2, 3), np.float32)), RealMatrix(np.ones((2, 3), np.float32)), np.ones(3), 1.0, BF16)


def test_fused_traffic_counts():
    inp = inputs(130, 257, 2)
    _, tr = fused_compose(inp)
    assert (tr.activation_reads, tr.activation_writes, tr.pass_count) == (2, 1, 1)
    assert tr.vector_reads >= 1
    assert tr.bytes_total == fused_traffic_model(130, 257, FP32).bytes_total


def test_fused_bytes_at_4096():
    tr = fused_traffic_model(4096, 4096, FP32)
    assert tr.bytes_total == 3 * 4096 * 4096 * 4 + tr.vector_reads * 4096 * 4
    assert tr.pass_count == 1


@pytest.mark.parametrize("rows,d_out", [(1, 1), (4096, 4096), (17, 3000), (8192, 2048)])
@pytest.mark.parametrize("dt", [FP32, BF16], ids=lambda d: d.name)
def test_eager_model(rows, d_out, dt):
    e = eager_traffic_model(rows, d_out, dt)
    f = fused_traffic_model(rows, d_out, dt)
    assert 10 <= e.pass_count <= 12
    assert e.kernel_launches == 5
    if rows * d_out >= 4096:  # vector terms are noise only for real activations
        assert 2.5 <= e.bytes_total / f.bytes_total <= 4.0
    if rows == d_out == 1:
        assert e.bytes_total == (e.activation_reads + e.activation_writes + e.vector_reads + e.vector_writes) * dt.itemsize


def test_backward_examples():
    dY = RealMatrix(np.ones((3, 4), np.float32))
    gb = compose_backward(dY, np.full(4, 2.0, np.float32), 0.5, None, np.ones(4), False)
    assert np.all(gb.d_lora.data == 1.0) and np.all(gb.d_base.data == 1.0) and gb.d_mag is None
    with pytest.raises(ValueError):
        compose_backward(dY, np.ones(4, np.float32), 1.0, None, np.ones(4), True)


def _fd(f, x, h_rel=1e-3):
    x = np.array(x, np.float64)
    out = np.empty_like(x)
    for i in np.ndindex(x.shape):
        h = h_rel * max(1.0, abs(x[i]))
        k = x[i]
        x[i] = k + h
        up = f(x)
        x[i] = k - h
        dn = f(x)
        x[i] = k
        out[i] = (up - dn) / (2 * h)
    return out


@given(rows=st.sampled_from([3, 8, 64]), d_out=st.sampled_from([3, 8, 64]), seed=st.integers(0, 10**6))
def test_backward_matches_finite_differences(rows, d_out, seed):
    inp = inputs(rows, d_out, seed, s=0.7)
    w_norm = 1.0 + np.abs(seeded_array("gaussian", (d_out,), (seed, 5), FP64))
    m = inp.g.astype(np.float64) * w_norm
    base = inp.base.data.astype(np.float64)
    lora = inp.lora.data.astype(np.float64)
    s = 0.7

    def loss(base_, lora_, m_):
        g = m_ / w_norm
        return float(((g - 1) * base_ + g * (s * lora_)).sum())

    gb = compose_backward(RealMatrix(np.ones((rows, d_out), np.float32)), inp.g, s, compute_inner(inp), w_norm, True)
    fd_lora = _fd(lambda x: loss(base, x, m), lora)
    fd_base = _fd(lambda x: loss(x, lora, m), base)
    fd_mag = _fd(lambda x: loss(base, lora, x), m)

    def rel(a, b):
        return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-30)

    assert rel(gb.d_lora.data, fd_lora) <= 1e-3
    assert rel(gb.d_base.data, fd_base) <= 1e-3 or np.linalg.norm(fd_base) < 1e-6
    assert rel(gb.d_mag, fd_mag) <= 1e-3


def test_d_mag_reduction_is_serial_and_deterministic():
    inp = inputs(257, 9, 3)
    dY = RealMatrix(seeded_array("gaussian", (257, 9), 8))
    a = compose_backward(dY, inp.g, 0.5, compute_inner(inp), np.ones(9), True).d_mag
    b = compose_backward(dY, inp.g, 0.5, compute_inner(inp), np.ones(9), True).d_mag
    want = np.add.accumulate(dY.data * compute_inner(inp).data, axis=0)[-1]
    assert np.array_equal(a, b) and np.array_equal(a, want)


