"""Quantizer tests: nearest-point semantics, block/pool kernels, selectors."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gridforge import (
    E4M3,
    CorruptBlockError,
    DegenerateBlockError,
    Grid,
    GridFamily,
    InputError,
    ShapeError,
    SIGN_OF_MAX,
    builtin_grid,
    decode_format,
    dequantize_block,
    mu_statistic,
    nearest_point,
    pool_losses,
    pool_mu,
    quantize_block,
)

IF4 = builtin_grid("IF4")
NVFP4 = builtin_grid("NVFP4")
INT4 = builtin_grid("INT4")
SFP4 = builtin_grid("SFP4")

finite_blocks = arrays(
    np.float64,
    st.integers(1, 24),
    elements=st.floats(-1e6, 1e6, allow_nan=False, width=64),
)


# ── nearest point ────────────────────────────────────────────────────────────


def test_nearest_exact_hit_has_zero_error():
    g = builtin_grid("NF4")
    for j, p in enumerate(g.points):
        idx, err = nearest_point(p, g)
        assert idx == j and err == 0.0


def test_nearest_tie_breaks_to_lower_index():
    g = Grid((-1.0, 0.0, 1.0))
    assert nearest_point(0.5, g)[0] == 1
    assert nearest_point(-0.5, g)[0] == 0


def test_nearest_saturates_outside_range():
    g = builtin_grid("INT4")
    assert nearest_point(5.0, g)[0] == len(g) - 1
    assert nearest_point(-5.0, g)[0] == 0


def test_nearest_matches_linear_scan_oracle(rng):
    g = builtin_grid("NF4")
    a = rng.uniform(-1, 1, size=1_000_000)
    idx, err = nearest_point(a, g)
    oracle = np.abs(a[:, None] - g.levels[None, :]).argmin(axis=1)
    np.testing.assert_array_equal(idx, oracle)
    np.testing.assert_allclose(err, (a - g.levels[oracle]) ** 2, rtol=0, atol=0)


# ── single-block quantization ────────────────────────────────────────────────


def test_zero_block_convention():
    qb, loss = quantize_block(np.zeros(16), IF4)
    assert qb.scale == 0.0
    assert np.all(qb.codes == 0)
    assert loss.mse == 0.0
    np.testing.assert_array_equal(dequantize_block(qb, IF4), np.zeros(16))


def test_representable_block_is_exact(rng):
    for fam, grid in ((NVFP4, NVFP4), (IF4, IF4.grids[1])):
        x = 3.7 * grid.levels
        qb, loss = quantize_block(x, fam)
        assert loss.mse == 0.0
        np.testing.assert_array_equal(dequantize_block(qb, fam), x)


def test_scaling_block_scales_loss_quadratically(rng):
    x = rng.standard_normal(16)
    qb1, l1 = quantize_block(x, IF4)
    for c in (0.25, 3.0, 117.0):
        qb2, l2 = quantize_block(c * x, IF4)
        np.testing.assert_array_equal(qb1.codes, qb2.codes)
        assert qb1.grid_index == qb2.grid_index
        assert l2.mse == pytest.approx(c * c * l1.mse, rel=1e-12)


def test_min_mse_never_worse_than_members(rng):
    pool = rng.standard_normal((256, 16))
    fam_loss = pool_losses(pool, IF4)
    for g in IF4.grids:
        np.testing.assert_array_less(fam_loss, pool_losses(pool, g) + 1e-15)


def test_divisor_search_never_hurts(rng):
    pool = rng.standard_normal((256, 16))
    searched = pool_losses(pool, SFP4, scale_divisors=(4, 4.5, 5, 5.5, 6))
    plain = pool_losses(pool, SFP4, scale_divisors=(6,))
    np.testing.assert_array_less(searched, plain + 1e-15)


def test_sign_selector_bounded_below_by_min_mse(rng):
    base = builtin_grid("NF4")
    neg = Grid(tuple(-p for p in reversed(base.points)))
    sign_fam = GridFamily((base, neg), selector=SIGN_OF_MAX)
    free_fam = GridFamily((base, neg))
    pool = rng.standard_normal((512, 16))
    np.testing.assert_array_less(
        pool_losses(pool, free_fam), pool_losses(pool, sign_fam) + 1e-15
    )


def test_sign_selector_dispatches_on_max_entry():
    base = builtin_grid("NF4")
    neg = Grid(tuple(-p for p in reversed(base.points)))
    fam = GridFamily((base, neg), selector=SIGN_OF_MAX)
    qb, _ = quantize_block(np.array([0.1, 2.0, -1.9]), fam)
    assert qb.grid_index == 0
    qb, _ = quantize_block(np.array([0.1, -2.0, 1.9]), fam)
    assert qb.grid_index == 1


def test_scale_format_quantizes_scale_before_codes(rng):
    x = rng.standard_normal(16)
    qb, loss = quantize_block(x, NVFP4, scale_format=E4M3)
    raw = decode_format(qb.scale_code, E4M3)
    assert qb.scale == raw * NVFP4.raw_max
    # reported loss is exact for the stored reconstruction
    rec = dequantize_block(qb, NVFP4)
    assert loss.mse == pytest.approx(((x - rec) ** 2).mean(), rel=1e-12)


def test_loss_matches_dequantized_reconstruction(rng):
    pool = rng.standard_normal((64, 16)) * 10
    for fam in (IF4, SFP4, builtin_grid("MPO2")):
        for row in pool:
            qb, loss = quantize_block(
                row, fam, scale_divisors=(4, 5, 6) if fam is SFP4 else None
            )
            rec = dequantize_block(qb, fam)
            assert loss.mse == pytest.approx(((row - rec) ** 2).mean(), rel=1e-12)


def test_nan_block_rejected():
    with pytest.raises(InputError):
        quantize_block(np.array([1.0, np.nan]), NVFP4)
    with pytest.raises(InputError):
        pool_losses(np.array([[1.0, np.inf]]), NVFP4)


def test_empty_block_rejected():
    with pytest.raises(ShapeError):
        quantize_block(np.array([]), NVFP4)
    with pytest.raises(ShapeError):
        pool_losses(np.zeros((0, 16)), NVFP4)


def test_dequantize_range_checks():
    qb, _ = quantize_block(np.ones(4), IF4)
    bad_gidx = type(qb)(qb.scale, qb.codes, grid_index=7)
    with pytest.raises(CorruptBlockError):
        dequantize_block(bad_gidx, IF4)
    bad_codes = type(qb)(qb.scale, np.array([0, 99]), grid_index=0)
    with pytest.raises(CorruptBlockError):
        dequantize_block(bad_codes, IF4)


# ── pool kernel equivalence ──────────────────────────────────────────────────


@pytest.mark.parametrize(
    "fam,kwargs",
    [
        (IF4, {}),
        (NVFP4, {"scale_format": E4M3}),
        (SFP4, {"scale_divisors": (4, 4.5, 5, 5.5, 6)}),
        (SFP4, {"scale_divisors": (4, 6), "scale_format": E4M3}),
    ],
    ids=["if4", "scale-fmt", "divisors", "divisors+fmt"],
)
def test_pool_losses_match_per_block_loop(rng, fam, kwargs):
    pool = rng.standard_normal((128, 16)) * rng.lognormal(0, 1, (128, 1))
    pool[7] = 0.0  # keep a zero block in the mix
    vec, gidx = pool_losses(pool, fam, return_grid_index=True, **kwargs)
    for i, row in enumerate(pool):
        qb, loss = quantize_block(row, fam, **kwargs)
        assert vec[i] == pytest.approx(loss.mse, rel=1e-12, abs=1e-300)
        assert gidx[i] == qb.grid_index


def test_pool_losses_match_loop_sign_selector(rng):
    base = builtin_grid("NF4")
    neg = Grid(tuple(-p for p in reversed(base.points)))
    fam = GridFamily((base, neg), selector=SIGN_OF_MAX)
    pool = rng.standard_normal((200, 8))
    vec, gidx = pool_losses(pool, fam, return_grid_index=True)
    for i, row in enumerate(pool):
        qb, loss = quantize_block(row, fam)
        assert vec[i] == pytest.approx(loss.mse, rel=1e-12)
        assert gidx[i] == qb.grid_index


# ── mu statistic ─────────────────────────────────────────────────────────────


def test_mu_constant_magnitude_block_is_one():
    assert mu_statistic(np.full(16, -0.3)) == 1.0
    assert mu_statistic(np.array([0.5, -0.5, 0.5])) == 1.0


def test_mu_single_spike():
    x = np.zeros(16)
    x[3] = 2.5
    assert mu_statistic(x) == pytest.approx(1 / 16)


def test_mu_rejects_zero_block():
    with pytest.raises(DegenerateBlockError):
        mu_statistic(np.zeros(8))
    with pytest.raises(DegenerateBlockError):
        pool_mu(np.zeros((3, 8)))


def test_pool_mu_matches_loop(rng):
    pool = rng.standard_normal((100, 16))
    vec = pool_mu(pool)
    for i, row in enumerate(pool):
        assert vec[i] == pytest.approx(mu_statistic(row), rel=1e-15)


# ── property-based checks ────────────────────────────────────────────────────


@settings(max_examples=200, deadline=None)
@given(finite_blocks)
def test_property_family_loss_bounded_by_members(x):
    qb, loss = quantize_block(x, IF4)
    for g in IF4.grids:
        _, single = quantize_block(x, g)
        assert loss.mse <= single.mse * (1 + 1e-12) + 1e-300


@settings(max_examples=200, deadline=None)
@given(finite_blocks, st.floats(1e-3, 1e3))
def test_property_positive_scaling_invariance(x, c):
    qa, la = quantize_block(x, NVFP4)
    qb, lb = quantize_block(c * x, NVFP4)
    np.testing.assert_array_equal(qa.codes, qb.codes)
    # absolute slack: one-ulp wiggle in the reconstruction scale
    slack = (np.abs(c * x).max() * 1e-15) ** 2
    assert lb.mse == pytest.approx(c * c * la.mse, rel=1e-9, abs=slack)
