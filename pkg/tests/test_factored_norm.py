import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _oracles import dense_row_norm
from dorafactor.factored_norm import (
    AdapterPair,
    NormTerms,
    assemble_norm,
    clamped_norm,
    factored_norm_terms,
    factored_row_norm,
    magnitude_scale,
)
from dorafactor.linalg import RealMatrix, plan_chunks, seeded_fixture
from dorafactor.numerics import BF16, FP16, FP32, FP64, round_to_dtype


def rm(x, dt=FP32):
    return RealMatrix.from_array(x, dt)


def instance(d_out, d_in, r, s, seed, dt=FP32):
    W = seeded_fixture("gaussian", (d_out, d_in), (seed, 0), dt)
    A = seeded_fixture("gaussian", (r, d_in), (seed, 1), dt, scale=1 / math.sqrt(d_in))
    B = seeded_fixture("gaussian", (d_out, r), (seed, 2), dt)
    return W, AdapterPair(A, B, s)


def test_rank_one_example():
    W = rm([[3.0, 0.0], [0.0, 6.0]])
    ad = AdapterPair(rm([[0.0, 1.0]]), rm([[4.0], [4.0]]), 1.0)
    assert list(factored_row_norm(W, ad)) == [5.0, 10.0]


def test_zero_scale_is_plain_row_norm():
    W = rm([[3.0, 4.0], [0.0, 0.0]])
    ad = AdapterPair(rm([[np.nan, 1.0]]), rm([[1.0], [1.0]]), 0.0)
    # The adapter is never touched on the zero-scale path, so the NaN stays out.
    assert list(factored_row_norm(W, ad)) == [5.0, 0.0]
    t = factored_norm_terms(W, ad)
    assert not t.cross.any() and not t.ba_sq.any()


def test_identity_weight():
    W = rm(np.eye(2))
    ad = AdapterPair(rm([[1.0, 1.0]]), rm([[0.0], [0.0]]), 0.0)
    assert list(factored_row_norm(W, ad)) == [1.0, 1.0]


@given(
    d_out=st.sampled_from([3, 17, 64]),
    d_in=st.sampled_from([3, 17, 96, 257]),
    r=st.sampled_from([1, 2, 8, 33]),
    s_kind=st.sampled_from(["zero", "one", "inv"]),
    seed=st.integers(0, 10**6),
)
def test_matches_dense_fp64(d_out, d_in, r, s_kind, seed):
    s = {"zero": 0.0, "one": 1.0, "inv": 2 / math.sqrt(r)}[s_kind]
    W, ad = instance(d_out, d_in, r, s, seed)
    got = factored_row_norm(W, ad)
    want = dense_row_norm(W.data, ad.B.data, ad.A.data, s)
    assert np.all(np.abs(got - want) <= 1e-5 * want)


@given(seed=st.integers(0, 10**6), cs=st.integers(1, 6))
def test_chunking_changes_only_rounding(seed, cs):
    W, ad = instance(24, 400, 4, 0.7, seed)
    full = factored_row_norm(W, ad, plan_chunks(24, 400))
    chunked = factored_row_norm(W, ad, plan_chunks(24, 400, 24 * 4 * 64 * cs))
    assert chunked.dtype == np.float32
    assert np.allclose(chunked, full, rtol=2e-6, atol=0)


def test_chunk_plan_shape_must_match():
    W, ad = instance(8, 64, 2, 1.0, 0)
    with pytest.raises(ValueError):
        factored_row_norm(W, ad, plan_chunks(8, 65))


def test_adapter_shape_checks():
    with pytest.raises(ValueError):
        AdapterPair(rm(np.ones((2, 4))), rm(np.ones((3, 3))), 1.0)
    W, ad = instance(5, 6, 2, 1.0, 0)
    with pytest.raises(ValueError):
        factored_row_norm(rm(np.ones((5, 7))), ad)


@pytest.mark.parametrize("dt", [BF16, FP16, FP64], ids=lambda d: d.name)
def test_other_dtypes(dt):
    W, ad = instance(16, 40, 4, 0.5, 3, dt)
    got = factored_row_norm(W, ad)
    want = dense_row_norm(W.data, ad.B.data, ad.A.data, 0.5)
    tol = {"bf16": 2**-8, "fp16": 2**-11, "fp64": 1e-13}[dt.name]
    assert np.all(np.abs(got - want) <= tol * want)
    assert np.array_equal(round_to_dtype(got, dt), got)


def test_assembly_rounds_each_step_to_fp32():
    t = NormTerms.from_scale(
        np.array([1.0], np.float32), np.array([2.0**-25], np.float32), np.array([0.0], np.float32), 1.0
    )
    # 1 + 2*2**-25 = 1 + 2**-24, a tie that goes to 1 in fp32.
    assert assemble_norm(t)[0] == 1.0


def test_assembly_clamps_negative_and_keeps_nan():
    t = NormTerms.from_scale(
        np.array([1.0, np.nan], np.float32), np.array([-1.0, 0.0], np.float32), np.array([0.0, 0.0], np.float32), 1.0
    )
    out = assemble_norm(t)
    assert out[0] == 0.0 and np.isnan(out[1])


def test_two_s_and_s2_kept_in_float64():
    t = NormTerms.from_scale(np.zeros(1), np.zeros(1), np.zeros(1), 0.1)
    assert t.two_s == 0.2 and t.s2 == 0.1 * 0.1


@pytest.mark.parametrize("dt", [FP32, BF16, FP16, FP64], ids=lambda d: d.name)
def test_magnitude_scale_eps_floor(dt):
    g = magnitude_scale(np.array([1.0, 2.0]), np.array([0.0, 4.0]), dt)
    eps = float(round_to_dtype(dt.norm_eps, dt))
    assert g[1] == 0.5
    # fp16 cannot hold 1/eps and overflows to inf.
    assert g[0] == round_to_dtype(1.0 / eps, dt) or np.isclose(g[0], 1.0 / eps, rtol=dt.ulp_at_one)
    assert clamped_norm(np.array([0.0]), dt)[0] == eps


def test_magnitude_scale_shape_check():
    with pytest.raises(ValueError):
        magnitude_scale(np.ones(3), np.ones(2), FP32)
