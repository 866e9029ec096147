"""Bit-exact minifloat codecs: E2M1, E4M3, E3M2, E3M3u.

All four formats follow the sign/exponent/mantissa layout with IEEE-style
subnormals and no infinities:

  E2M1   4-bit signed element format, bias 1, max 6
  E4M3   8-bit signed scale format (OCP FP8), bias 7, max 448,
         NaN at s.1111.111 (the only non-finite pattern in any format here)
  E3M2   6-bit signed format (OCP FP6), bias 3, max 28
  E3M3u  6-bit unsigned scale-magnitude format, bias 3, max 30,
         min positive subnormal 2^-5

E3M3u has no published bit definition; the bias-3 + subnormal choice above
is this library's documented convention (decode range [2^-5, 30] covers
typical per-block scales).

Rounding is round-to-nearest with ties to even mantissa everywhere.
Values above the top finite value saturate and are flagged, never wrapped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import EncodingError

__all__ = [
    "LowBitFormat",
    "E2M1",
    "E4M3",
    "E3M2",
    "E3M3U",
    "FORMATS",
    "EncodeResult",
    "decode_table",
    "format_values",
    "round_to_format",
    "encode_format",
    "decode_format",
]


@dataclass(frozen=True)
class LowBitFormat:
    """Static description of one minifloat format."""

    kind: str
    exp_bits: int
    mant_bits: int
    bias: int
    signed: bool
    has_nan: bool

    @property
    def width(self) -> int:
        return (1 if self.signed else 0) + self.exp_bits + self.mant_bits

    @property
    def n_codes(self) -> int:
        return 1 << self.width

    @property
    def min_normal(self) -> float:
        return 2.0 ** (1 - self.bias)

    @property
    def sub_step(self) -> float:
        # spacing of subnormal values
        return 2.0 ** (1 - self.bias - self.mant_bits)

    @property
    def max_finite(self) -> float:
        max_exp = (1 << self.exp_bits) - 1
        max_mant = (1 << self.mant_bits) - 1
        if self.has_nan:
            # top mantissa pattern at top exponent is NaN, not a value
            max_mant -= 1
        return (1.0 + max_mant / (1 << self.mant_bits)) * 2.0 ** (
            max_exp - self.bias
        )


E2M1 = LowBitFormat("E2M1", exp_bits=2, mant_bits=1, bias=1, signed=True, has_nan=False)
E4M3 = LowBitFormat("E4M3", exp_bits=4, mant_bits=3, bias=7, signed=True, has_nan=True)
E3M2 = LowBitFormat("E3M2", exp_bits=3, mant_bits=2, bias=3, signed=True, has_nan=False)
E3M3U = LowBitFormat("E3M3u", exp_bits=3, mant_bits=3, bias=3, signed=False, has_nan=False)

FORMATS = {f.kind: f for f in (E2M1, E4M3, E3M2, E3M3U)}


class EncodeResult(NamedTuple):
    code: int
    saturated: bool


def _decode_magnitude(exp: int, mant: int, fmt: LowBitFormat) -> float:
    if exp == 0:
        return (mant / (1 << fmt.mant_bits)) * fmt.min_normal
    return (1.0 + mant / (1 << fmt.mant_bits)) * 2.0 ** (exp - fmt.bias)


@lru_cache(maxsize=None)
def decode_table(fmt: LowBitFormat) -> np.ndarray:
    """Decoded value of every code, in code order. NaN where applicable."""
    out = np.empty(fmt.n_codes, dtype=np.float64)
    mant_mask = (1 << fmt.mant_bits) - 1
    exp_mask = (1 << fmt.exp_bits) - 1
    for code in range(fmt.n_codes):
        mant = code & mant_mask
        exp = (code >> fmt.mant_bits) & exp_mask
        sign = (code >> (fmt.mant_bits + fmt.exp_bits)) & 1 if fmt.signed else 0
        if fmt.has_nan and exp == exp_mask and mant == mant_mask:
            out[code] = -math.nan if sign else math.nan
            continue
        v = _decode_magnitude(exp, mant, fmt)
        out[code] = -v if sign else v
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def format_values(fmt: LowBitFormat) -> np.ndarray:
    """Sorted distinct finite values of the format (one zero)."""
    t = decode_table(fmt)
    vals = np.unique(t[np.isfinite(t)])
    vals.setflags(write=False)
    return vals


def round_to_format(x, fmt: LowBitFormat):
    """Nearest representable value of `x`, ties to even mantissa.

    Saturates at the top finite value. Accepts scalars or arrays;
    NaN input raises EncodingError (no format here encodes signed NaN
    payloads usefully for grid work).
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise EncodingError(f"non-finite value cannot be rounded to {fmt.kind}")
    sign = np.sign(arr)
    v = np.abs(arr)
    out = np.zeros_like(v)
    nz = v > 0
    if nz.any():
        m, e = np.frexp(v[nz])
        # normals: mantissa lives on a 2^(mant_bits+1) lattice within a binade
        lattice = 1 << (fmt.mant_bits + 1)
        y = np.ldexp(np.round(m * lattice) / lattice, e)
        sub = v[nz] < fmt.min_normal
        if sub.any():
            y[sub] = np.round(v[nz][sub] / fmt.sub_step) * fmt.sub_step
        out[nz] = np.minimum(y, fmt.max_finite)
    result = sign * out
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(result)
    return result


def encode_format(x: float, fmt: LowBitFormat) -> EncodeResult:
    """Encode a real number to its code; nearest-value rounding.

    Values beyond the top finite value saturate with the flag set.
    NaN encodes only in E4M3 (its NaN pattern); elsewhere it is an error,
    as is any negative input to an unsigned format.
    """
    if math.isnan(x):
        if not fmt.has_nan:
            raise EncodingError(f"{fmt.kind} has no NaN representation")
        nan_code = (1 << (fmt.exp_bits + fmt.mant_bits)) - 1
        if math.copysign(1.0, x) < 0:
            nan_code |= 1 << (fmt.exp_bits + fmt.mant_bits)
        return EncodeResult(nan_code, False)
    if math.isinf(x):
        raise EncodingError(f"infinite value cannot be encoded in {fmt.kind}")
    negative = x < 0 or (x == 0 and math.copysign(1.0, x) < 0)
    if negative and not fmt.signed:
        raise EncodingError(f"{fmt.kind} is unsigned; got {x}")
    v = abs(x)
    saturated = v > fmt.max_finite
    y = round_to_format(v, fmt)
    code = _magnitude_code(y, fmt)
    if negative:
        code |= 1 << (fmt.exp_bits + fmt.mant_bits)
    return EncodeResult(code, bool(saturated))


def _magnitude_code(y: float, fmt: LowBitFormat) -> int:
    if y < fmt.min_normal:
        mant = round(y / fmt.sub_step)
        return int(mant)
    m, e = math.frexp(y)  # y = m * 2^e, m in [0.5, 1)
    exp = e - 1 + fmt.bias
    mant = round((2 * m - 1) * (1 << fmt.mant_bits))
    return (exp << fmt.mant_bits) | mant


def decode_format(code: int, fmt: LowBitFormat) -> float:
    """Decoded value of one code."""
    if not 0 <= code < fmt.n_codes:
        raise EncodingError(f"code {code} out of range for {fmt.kind}")
    return float(decode_table(fmt)[code])
