"""Codec tests: exhaustive round-trips, rounding semantics, table shapes."""

import math

import numpy as np
import pytest

from gridforge import (
    E2M1,
    E3M2,
    E3M3U,
    E4M3,
    FORMATS,
    EncodingError,
    decode_format,
    decode_table,
    encode_format,
    format_values,
    round_to_format,
)

ALL = [E2M1, E3M2, E3M3U, E4M3]


# ── exhaustive code round-trips ──────────────────────────────────────────────


@pytest.mark.parametrize("fmt", ALL, ids=lambda f: f.kind)
def test_roundtrip_every_code(fmt):
    for code in range(fmt.n_codes):
        v = decode_format(code, fmt)
        res = encode_format(v, fmt)
        assert res.code == code, f"{fmt.kind} code {code:#04x} -> {v} -> {res.code:#04x}"
        assert not res.saturated


def test_code_counts():
    assert E4M3.n_codes == 256
    assert E3M3U.n_codes == 64
    assert E2M1.n_codes == 16
    assert E3M2.n_codes == 64


def test_decode_table_covers_all_codes():
    for fmt in ALL:
        t = decode_table(fmt)
        assert len(t) == fmt.n_codes


# ── format parameters ────────────────────────────────────────────────────────


def test_max_finite_values():
    assert E2M1.max_finite == 6.0
    assert E4M3.max_finite == 448.0
    assert E3M2.max_finite == 28.0
    assert E3M3U.max_finite == 30.0


def test_e3m3u_is_unsigned_and_strictly_increasing():
    t = np.asarray(decode_table(E3M3U))
    assert t[0] == 0.0
    assert np.all(np.diff(t) > 0), "unsigned codes must decode monotonically"
    # smallest positive value is the subnormal step 2^-5
    assert t[1] == 2.0 ** -5


def test_e4m3_nan_codes():
    # only the all-ones mantissa patterns are non-finite
    nan_codes = [c for c in range(256) if math.isnan(decode_table(E4M3)[c])]
    assert nan_codes == [0x7F, 0xFF]


def test_signed_zero_round_trip():
    assert encode_format(0.0, E4M3).code == 0x00
    assert encode_format(-0.0, E4M3).code == 0x80


def test_format_values_sorted_unique():
    for fmt in ALL:
        vals = format_values(fmt)
        assert np.all(np.diff(vals) > 0)
        assert vals.max() == fmt.max_finite


# ── rounding ─────────────────────────────────────────────────────────────────


@pytest.mark.parametrize("fmt", ALL, ids=lambda f: f.kind)
def test_round_matches_table_scan(fmt, rng):
    """round_to_format agrees with a brute-force nearest-value search."""
    table = format_values(fmt)
    lo = 0.0 if not fmt.signed else -fmt.max_finite
    x = rng.uniform(lo, fmt.max_finite, size=20_000)
    x = np.concatenate([x, x / 977.0])  # push some values into subnormal range
    if not fmt.signed:
        x = np.abs(x)
    got = round_to_format(x, fmt)
    want = table[np.abs(x[:, None] - table[None, :]).argmin(axis=1)]
    np.testing.assert_array_equal(got, want)


def test_round_ties_to_even_mantissa():
    # midway cases resolve toward the even mantissa pattern
    assert round_to_format(5.0, E2M1) == 4.0  # between 4 (1.0·2²) and 6 (1.1·2²)
    assert round_to_format(2.5, E2M1) == 2.0
    assert round_to_format(0.25, E2M1) == 0.0  # subnormal tie between 0 and 0.5
    assert round_to_format(0.75, E2M1) == 1.0


def test_round_saturates_above_max():
    assert round_to_format(1e6, E4M3) == 448.0
    assert round_to_format(-1e6, E4M3) == -448.0
    assert round_to_format(7.3, E2M1) == 6.0


def test_round_is_idempotent(rng):
    for fmt in ALL:
        x = rng.uniform(0, fmt.max_finite, size=500)
        once = round_to_format(x, fmt)
        np.testing.assert_array_equal(round_to_format(once, fmt), once)


def test_round_scalar_returns_float():
    out = round_to_format(0.3, E4M3)
    assert isinstance(out, float)


def test_round_rejects_non_finite():
    with pytest.raises(EncodingError):
        round_to_format(float("nan"), E4M3)
    with pytest.raises(EncodingError):
        round_to_format(float("inf"), E4M3)


# ── encode edge cases ────────────────────────────────────────────────────────


def test_encode_saturation_flag():
    res = encode_format(1000.0, E4M3)
    assert res.saturated
    assert decode_format(res.code, E4M3) == 448.0
    res = encode_format(-1000.0, E4M3)
    assert res.saturated
    assert decode_format(res.code, E4M3) == -448.0


def test_encode_nan_only_where_representable():
    res = encode_format(float("nan"), E4M3)
    assert res.code == 0x7F
    for fmt in (E2M1, E3M2, E3M3U):
        with pytest.raises(EncodingError):
            encode_format(float("nan"), fmt)


def test_encode_rejects_inf_and_negative_unsigned():
    with pytest.raises(EncodingError):
        encode_format(float("inf"), E4M3)
    with pytest.raises(EncodingError):
        encode_format(-0.5, E3M3U)


def test_decode_range_check():
    with pytest.raises(EncodingError):
        decode_format(64, E3M3U)
    with pytest.raises(EncodingError):
        decode_format(-1, E4M3)


def test_formats_registry():
    assert set(FORMATS) >= {"E2M1", "E4M3", "E3M2", "E3M3u"}
