import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynpred.codebank import (
    BANK_SIZES,
    Codebank,
    QuantizeResult,
    VQLossConfig,
    fuse_quantized,
    quantize,
    straight_through,
    usage_stats,
    vq_loss,
)
from dynpred.errors import ConfigurationError, DimensionError
from dynpred.numerics import finite_diff_check


def brute_force_nearest(z, codes):
    out = []
    for vec in z:
        best, best_d = 0, None
        for j, c in enumerate(codes):
            d = sum((float(a) - float(b)) ** 2 for a, b in zip(vec, c))
            if best_d is None or d < best_d:
                best, best_d = j, d
        out.append(best)
    return np.array(out)


def test_quantize_matches_brute_force_1000_pairs():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        o = int(rng.integers(2, 9))
        d = int(rng.integers(1, 5))
        p = int(rng.integers(1, 6))
        # small integer grids make exact ties common
        codes = rng.integers(-2, 3, (o, d)).astype(np.float64)
        z = rng.integers(-2, 3, (p, d)).astype(np.float64)
        if trial % 2:
            codes += rng.standard_normal(codes.shape)
            z += rng.standard_normal(z.shape)
        result = quantize(z, Codebank(codes))
        np.testing.assert_array_equal(result.indices, brute_force_nearest(z, codes))
        np.testing.assert_array_equal(result.quantized, codes[result.indices])


def test_quantize_ties_go_to_lowest_index():
    codes = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    r = quantize(np.array([[0.0, 0.0], [1.0, 0.0]]), Codebank(codes))
    np.testing.assert_array_equal(r.indices, [0, 0])


def test_quantize_latent_map_layout():
    rng = np.random.default_rng(1)
    bank = Codebank(rng.standard_normal((5, 3)))
    z = rng.standard_normal((2, 3, 4, 4))
    r = quantize(z, bank)
    assert r.indices.shape == (2, 4, 4) and r.quantized.shape == z.shape
    flat = np.moveaxis(z, 1, -1).reshape(-1, 3)
    np.testing.assert_array_equal(r.indices.reshape(-1), brute_force_nearest(flat, bank.codes.values))
    with pytest.raises(DimensionError):
        quantize(rng.standard_normal((2, 4, 4, 4)), bank)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_quantize_scale_invariance_and_idempotence(seed, s):
    rng = np.random.default_rng(seed)
    codes = rng.standard_normal((6, 3))
    z = rng.standard_normal((10, 3))
    r = quantize(z, Codebank(codes))
    np.testing.assert_array_equal(quantize(z * s, Codebank(codes * s)).indices, r.indices)
    np.testing.assert_array_equal(quantize(r.quantized, Codebank(codes)).indices,
                                  quantize(codes[r.indices], Codebank(codes)).indices)
    again = quantize(r.quantized, Codebank(codes))
    np.testing.assert_array_equal(again.quantized, r.quantized)


def test_vq_loss_worked_example():
    z = np.array([[1.0, 0.0]])
    r = QuantizeResult(np.array([0]), np.array([[0.0, 0.0]]))
    loss, gz, gc = vq_loss(z, r, VQLossConfig(0.99), n_codes=1)
    assert abs(loss - 1.99) < 1e-12
    np.testing.assert_allclose(gz, [[1.98, 0.0]], atol=1e-12)
    np.testing.assert_allclose(gc, [[-2.0, 0.0]], atol=1e-12)


@pytest.mark.parametrize("i", range(20))
def test_vq_loss_term_gradients(i):
    # the two terms split the gradient: codebook term -> codes, commitment term -> Z
    rng = np.random.default_rng(600 + i)
    beta = float(rng.uniform(0.1, 2.0))
    codes = rng.standard_normal((4, 3))
    z = rng.standard_normal((2, 3, 2, 2))
    r = quantize(z, Codebank(codes))
    _, gz, gc = vq_loss(z, r, VQLossConfig(beta), n_codes=4)
    p = z.size // 3
    zf = np.moveaxis(z, 1, -1).reshape(-1, 3)
    idx = r.indices.reshape(-1)
    fixed_c = codes[idx].copy()
    fixed_z = zf.copy()
    commit = lambda: beta * ((np.moveaxis(z, 1, -1).reshape(-1, 3) - fixed_c) ** 2).sum() / p
    codebook = lambda: ((fixed_z - codes[idx]) ** 2).sum() / p
    assert finite_diff_check(commit, [z], [gz]) < 1e-6
    assert finite_diff_check(codebook, [codes], [gc]) < 1e-6


def test_vq_loss_totals():
    rng = np.random.default_rng(2)
    codes = rng.standard_normal((4, 3))
    z = rng.standard_normal((7, 3))
    r = quantize(z, Codebank(codes))
    loss, _, gc = vq_loss(z, r, VQLossConfig(0.5))
    expected = 1.5 * ((z - codes[r.indices]) ** 2).sum() / 7
    assert abs(loss - expected) < 1e-12
    assert gc.shape[0] == r.indices.max() + 1


def test_straight_through_is_bit_identical():
    rng = np.random.default_rng(3)
    g = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    r = QuantizeResult(np.zeros((2, 4, 4), int), np.zeros((2, 3, 4, 4), np.float32))
    out = straight_through(None, r, g)
    assert out.tobytes() == g.tobytes() and out is not g
    with pytest.raises(DimensionError):
        straight_through(None, r, g[:1])


def test_fuse_quantized_and_usage():
    codes = np.array([[0.0, 0.0], [5.0, 5.0]])
    z = np.array([[0.1, 0.0], [4.0, 5.0], [0.0, 0.2]])
    r = quantize(z, Codebank(codes))
    np.testing.assert_array_equal(fuse_quantized(z, r), z + codes[[0, 1, 0]])
    counts, perplexity = usage_stats(r, 3)
    np.testing.assert_array_equal(counts, [2, 1, 0])
    assert 1.0 < perplexity < 2.0


def test_bank_construction():
    for name, (o, d) in BANK_SIZES.items():
        bank = Codebank.uniform(o, d, np.random.default_rng(0))
        assert bank.shape == (o, d)
        assert np.all(np.abs(bank.codes.values) <= 1.0 / o)
    with pytest.raises(ConfigurationError):
        Codebank(np.zeros((1, 4)))
    with pytest.raises(ConfigurationError):
        Codebank(np.array([[np.nan], [0.0]]))
    with pytest.raises(ConfigurationError):
        VQLossConfig(0.0).validate()
