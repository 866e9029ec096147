"""Shifted-FP4 encoder/decoder and the exact two-GEMM matmul decomposition.

SFP4 extends the plain E2M1-times-scale block format with two shifted
companions -- grid A decodes as w = s*g(c), grid B+ as w = s*(g(c)+c_shift),
grid B- as w = s*(g(c)-c_shift).  The per-block choice and the scale both
live in a single byte: bits 7:6 hold the grid selector (0 = A, 1 = B+,
2 = B-; 3 is invalid), bits 5:0 hold the scale magnitude in E3M3u.

Because the shift enters the decode rule affinely, a matmul against an
SFP4 tensor splits exactly into a base GEMM over the unshifted decode plus
a rank-style correction driven by activation block sums:

    y[m, n] = base[m, n] - c * sum_b sigma[m, b] * s[m, b] * X_sum[b, n]

with sigma = -1 for B+, +1 for B- and 0 for A.  The sign convention is
pinned by requiring the decomposition to equal the dense-decode product
exactly; both reference paths use compensated (Kahan) accumulation in the
same fixed index order.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptBlockError, InputError, ParameterError, ShapeError
from .formats import E2M1, E3M3U, decode_format, decode_table, format_values, round_to_format
from .grids import SFP4_SHIFT_C

__all__ = [
    "Sfp4Block",
    "Sfp4Tensor",
    "CorrectionMatrix",
    "pack_scale_byte",
    "unpack_scale_byte",
    "sfp4_encode",
    "sfp4_decode",
    "sfp4_encode_tensor",
    "sfp4_decode_tensor",
    "sfp4_pool_mse",
    "calibrate_shift",
    "correction_matrix",
    "sfp4_matmul_paths",
    "sfp4_matmul_reference",
    "write_sfp4",
    "read_sfp4",
]

logger = logging.getLogger(__name__)

_SELECTOR_OFFSET_SIGN = ((0, 0.0), (1, 1.0), (2, -1.0))  # (selector, offset sign)
_E3M3U_TABLE = decode_table(E3M3U)
_E2M1_TABLE = decode_table(E2M1)
_E2M1_MAGNITUDES = format_values(E2M1)[format_values(E2M1) >= 0.0]  # code order 0..7


# ── containers ──


@dataclass(frozen=True, eq=False)
class Sfp4Block:
    """One encoded block: g four-bit element codes plus the packed scale byte.

    `scale_overflow` flags that the raw scale exceeded the top E3M3u value
    and was saturated at encode time; it is advisory only and not part of
    the bit format.
    """

    e2m1_codes: np.ndarray
    scale_byte: int
    shift_c: float = SFP4_SHIFT_C
    scale_overflow: bool = False

    def __post_init__(self) -> None:
        codes = np.ascontiguousarray(self.e2m1_codes, dtype=np.uint8)
        if codes.ndim != 1 or codes.size == 0:
            raise ShapeError("e2m1_codes must be a nonempty 1-D code array")
        if (codes > 15).any():
            raise CorruptBlockError("e2m1 code exceeds 4 bits")
        if not 0 <= int(self.scale_byte) <= 255:
            raise CorruptBlockError(f"scale byte {self.scale_byte} out of range")
        if not (np.isfinite(self.shift_c) and self.shift_c >= 0.0):
            raise ParameterError(f"shift_c must be finite and >= 0, got {self.shift_c}")
        codes.setflags(write=False)
        object.__setattr__(self, "e2m1_codes", codes)
        object.__setattr__(self, "scale_byte", int(self.scale_byte))

    @property
    def g(self) -> int:
        return int(self.e2m1_codes.size)


@dataclass(frozen=True, eq=False)
class Sfp4Tensor:
    """Row-major matrix of encoded blocks sharing one shift constant."""

    blocks: tuple
    shape: tuple
    g: int
    shift_c: float

    def __post_init__(self) -> None:
        m, k = self.shape
        if m <= 0 or k <= 0 or self.g <= 0 or k % self.g:
            raise ShapeError(f"bad tensor geometry shape={self.shape} g={self.g}")
        rows = tuple(tuple(r) for r in self.blocks)
        if len(rows) != m or any(len(r) != k // self.g for r in rows):
            raise ShapeError("block grid does not match shape")
        for row in rows:
            for b in row:
                if b.g != self.g or b.shift_c != self.shift_c:
                    raise ShapeError("block geometry disagrees with tensor header")
        object.__setattr__(self, "blocks", rows)
        object.__setattr__(self, "shape", (int(m), int(k)))

    @property
    def n_blocks_per_row(self) -> int:
        return self.shape[1] // self.g


@dataclass(frozen=True, eq=False)
class CorrectionMatrix:
    """Signed per-block scales sigma[m,b] * s[m,b]; zero where grid A was chosen."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        e = np.ascontiguousarray(self.entries, dtype=np.float64)
        if e.ndim != 2:
            raise ShapeError("correction matrix must be 2-D")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)


# ── scale byte ──


def pack_scale_byte(selector: int, scale_code: int) -> int:
    """bits 7:6 <- selector, bits 5:0 <- E3M3u scale code."""
    if selector not in (0, 1, 2):
        raise CorruptBlockError(f"selector {selector} invalid (3 is reserved)")
    if not 0 <= scale_code < 64:
        raise CorruptBlockError(f"scale code {scale_code} does not fit 6 bits")
    return (selector << 6) | scale_code


def unpack_scale_byte(byte: int) -> tuple:
    """Inverse of pack_scale_byte; selector 3 is a corrupt byte."""
    if not 0 <= byte <= 255:
        raise CorruptBlockError(f"scale byte {byte} out of range")
    selector = byte >> 6
    if selector == 3:
        raise CorruptBlockError("selector bits 11 are invalid")
    return selector, byte & 0x3F


# ── element/scale code helpers ──


def _e2m1_codes_from_rounded(r: np.ndarray) -> np.ndarray:
    # r holds exact E2M1 values; magnitude index == magnitude code
    codes = np.searchsorted(_E2M1_MAGNITUDES, np.abs(r)).astype(np.uint8)
    codes[np.signbit(r)] |= 8
    return codes


def _encode_scales(raw: np.ndarray) -> tuple:
    """Vectorized E3M3u encode: (codes, decoded values, saturation mask)."""
    rounded = round_to_format(raw, E3M3U)
    codes = np.searchsorted(_E3M3U_TABLE, rounded).astype(np.uint8)
    return codes, _E3M3U_TABLE[codes], raw > E3M3U.max_finite


# ── encoding ──


def _check_blocks_2d(blocks) -> np.ndarray:
    arr = np.asarray(blocks, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ShapeError(f"expected a nonempty (n, g) block array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise InputError("blocks contain non-finite values")
    return arr


def _encode_pool(blocks: np.ndarray, shift_c: float, divisors) -> tuple:
    """Shared candidate search: divisor-major, selector order A, B+, B-.

    Returns (mse, selector, divisor index, scale codes, saturation) per
    block, strict-< improvement so the earliest candidate wins ties.  MSE
    is computed against the E3M3u-quantized scale -- the value hardware
    would decode -- per the stored-scale semantics of the format.
    """
    if not np.isfinite(shift_c) or shift_c < 0.0:
        raise ParameterError(f"shift_c must be finite and >= 0, got {shift_c}")
    divisors = tuple(float(d) for d in divisors)
    if not divisors or any(d <= 0 for d in divisors):
        raise ParameterError("divisors must be a nonempty sequence of positive reals")
    n = blocks.shape[0]
    absmax = np.abs(blocks).max(axis=1)
    best_mse = np.full(n, np.inf)
    best_sel = np.zeros(n, dtype=np.uint8)
    best_div = np.zeros(n, dtype=np.intp)
    best_code = np.zeros(n, dtype=np.uint8)
    best_sat = np.zeros(n, dtype=bool)
    for di, d in enumerate(divisors):
        codes6, s, sat = _encode_scales(absmax / d)
        safe = np.where(s > 0.0, s, 1.0)
        for sel, osign in _SELECTOR_OFFSET_SIGN:
            offset = osign * shift_c
            r = round_to_format(blocks / safe[:, None] - offset, E2M1)
            rec = s[:, None] * (r + offset)
            mse = np.mean((blocks - rec) ** 2, axis=1)
            win = mse < best_mse
            best_mse[win] = mse[win]
            best_sel[win] = sel
            best_div[win] = di
            best_code[win] = codes6[win]
            best_sat[win] = sat[win]
    return best_mse, best_sel, best_div, best_code, best_sat, divisors


def _codes_for_choice(block_rows: np.ndarray, s: np.ndarray, offset: float) -> np.ndarray:
    safe = np.where(s > 0.0, s, 1.0)
    r = round_to_format(block_rows / safe[:, None] - offset, E2M1)
    return _e2m1_codes_from_rounded(r)


def sfp4_encode(x, shift_c: float = SFP4_SHIFT_C, divisors=(6.0,)) -> Sfp4Block:
    """Encode one block, searching (divisor, grid) candidates by exact MSE.

    Pass divisors={6} to disable the scale search and isolate grid effects.
    An over-range scale saturates to the top E3M3u value and sets
    `scale_overflow` on the result.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ShapeError(f"expected a nonempty 1-D block, got shape {arr.shape}")
    blocks = _check_blocks_2d(arr[None, :])
    _, sel, _, code6, sat, _ = _encode_pool(blocks, shift_c, divisors)
    s = _E3M3U_TABLE[code6]
    osign = {0: 0.0, 1: 1.0, 2: -1.0}[int(sel[0])]
    codes = _codes_for_choice(blocks, s, osign * shift_c)[0]
    if sat[0]:
        logger.warning(
            "raw scale from absmax %.6g exceeds E3M3u max %.6g; saturated",
            float(np.abs(arr).max()),
            E3M3U.max_finite,
        )
    return Sfp4Block(
        e2m1_codes=codes,
        scale_byte=pack_scale_byte(int(sel[0]), int(code6[0])),
        shift_c=float(shift_c),
        scale_overflow=bool(sat[0]),
    )


def sfp4_decode(b: Sfp4Block) -> np.ndarray:
    """w = s * (g(c) + offset), offset in {0, +c, -c} by selector."""
    selector, code6 = unpack_scale_byte(b.scale_byte)
    s = decode_format(code6, E3M3U)
    offset = (0.0, b.shift_c, -b.shift_c)[selector]
    return s * (_E2M1_TABLE[b.e2m1_codes] + offset)


def sfp4_pool_mse(blocks, shift_c: float = SFP4_SHIFT_C, divisors=(6.0,)) -> float:
    """Mean per-block encode MSE over a pool (quantized-scale semantics)."""
    arr = _check_blocks_2d(blocks)
    mse, *_ = _encode_pool(arr, shift_c, divisors)
    return float(np.mean(mse))


def calibrate_shift(blocks, candidates=(0.25, 0.5, 0.75, 1.0), divisors=(6.0,)) -> tuple:
    """Sweep the shift constant, minimizing pooled MSE.

    Returns (best shift, {shift: pooled mse}); ties keep the earliest
    candidate.
    """
    arr = _check_blocks_2d(blocks)
    if not len(tuple(candidates)):
        raise ParameterError("candidates must be nonempty")
    table = {}
    best_c, best_mse = None, np.inf
    for c in candidates:
        mse, *_ = _encode_pool(arr, float(c), divisors)
        pooled = float(np.mean(mse))
        table[float(c)] = pooled
        if pooled < best_mse:
            best_c, best_mse = float(c), pooled
    return best_c, table


def sfp4_encode_tensor(w, *, g: int = 16, shift_c: float = SFP4_SHIFT_C, divisors=(6.0,)) -> Sfp4Tensor:
    """Encode a dense (M, K) matrix block-row-wise; K must be a multiple of g."""
    arr = np.asarray(w, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ShapeError(f"expected a nonempty (M, K) matrix, got shape {arr.shape}")
    m, k = arr.shape
    if g <= 0 or k % g:
        raise ShapeError(f"K={k} is not a multiple of g={g}")
    blocks = _check_blocks_2d(arr.reshape(m * (k // g), g))
    _, sel, _, code6, sat, _ = _encode_pool(blocks, shift_c, divisors)
    s = _E3M3U_TABLE[code6]
    codes = np.empty_like(blocks, dtype=np.uint8)
    for sv, osign in _SELECTOR_OFFSET_SIGN:
        mask = sel == sv
        if mask.any():
            codes[mask] = _codes_for_choice(blocks[mask], s[mask], osign * shift_c)
    if sat.any():
        logger.warning("%d block scales saturated at the E3M3u max", int(sat.sum()))
    bpr = k // g
    rows = tuple(
        tuple(
            Sfp4Block(
                e2m1_codes=codes[i * bpr + j],
                scale_byte=pack_scale_byte(int(sel[i * bpr + j]), int(code6[i * bpr + j])),
                shift_c=float(shift_c),
                scale_overflow=bool(sat[i * bpr + j]),
            )
            for j in range(bpr)
        )
        for i in range(m)
    )
    return Sfp4Tensor(blocks=rows, shape=(m, k), g=g, shift_c=float(shift_c))


def sfp4_decode_tensor(t: Sfp4Tensor) -> np.ndarray:
    dense, _, _ = _tensor_arrays(t)
    return dense


# ── matmul decomposition ──


def _as_tensor(w_enc) -> Sfp4Tensor:
    if isinstance(w_enc, Sfp4Tensor):
        return w_enc
    rows = tuple(tuple(r) for r in w_enc)
    if not rows or not rows[0]:
        raise ShapeError("empty block matrix")
    g = rows[0][0].g
    c = rows[0][0].shift_c
    return Sfp4Tensor(blocks=rows, shape=(len(rows), len(rows[0]) * g), g=g, shift_c=c)


def _tensor_arrays(t: Sfp4Tensor) -> tuple:
    """(dense decode, unshifted base decode, signed correction) as arrays."""
    m, k = t.shape
    g, c = t.g, t.shift_c
    dense = np.empty((m, k))
    base = np.empty((m, k))
    corr = np.zeros((m, k // g))
    for i, row in enumerate(t.blocks):
        for j, b in enumerate(row):
            selector, code6 = unpack_scale_byte(b.scale_byte)
            s = float(_E3M3U_TABLE[code6])
            vals = _E2M1_TABLE[b.e2m1_codes]
            offset = (0.0, c, -c)[selector]
            sigma = (0.0, -1.0, 1.0)[selector]  # pinned by decomposition exactness
            base[i, j * g : (j + 1) * g] = s * vals
            dense[i, j * g : (j + 1) * g] = s * (vals + offset)
            corr[i, j] = sigma * s
    return dense, base, corr


def correction_matrix(w_enc) -> CorrectionMatrix:
    """sigma[m,b] * s[m,b] per block -- 0 for A, -s for B+, +s for B-."""
    _, _, corr = _tensor_arrays(_as_tensor(w_enc))
    return CorrectionMatrix(entries=corr)


def _kahan_gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b with Kahan-compensated accumulation over k, in fixed k order."""
    m, k = a.shape
    _, n = b.shape
    total = np.zeros((m, n))
    comp = np.zeros((m, n))
    for kk in range(k):
        term = a[:, kk, None] * b[None, kk, :]
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


def _block_sums(x: np.ndarray, g: int) -> np.ndarray:
    """X_sum[b, n] = sum over the g rows of block b, compensated."""
    k, n = x.shape
    out = np.zeros((k // g, n))
    comp = np.zeros(n)
    for b in range(k // g):
        total = np.zeros(n)
        comp[:] = 0.0
        for kk in range(b * g, (b + 1) * g):
            y = x[kk] - comp
            t = total + y
            comp = (t - total) - y
            total = t
        out[b] = total
    return out


def sfp4_matmul_paths(w_enc, x) -> tuple:
    """(dense-decode product, decomposed product) for exactness testing.

    dense:      decode W fully, multiply.
    decomposed: base GEMM over the unshifted decode, minus
                c * correction @ block-sums of X.
    """
    t = _as_tensor(w_enc)
    xa = np.asarray(x, dtype=np.float64)
    if xa.ndim != 2:
        raise ShapeError(f"X must be 2-D, got shape {xa.shape}")
    if xa.shape[0] != t.shape[1]:
        raise ShapeError(f"inner dimensions disagree: W is {t.shape}, X is {xa.shape}")
    if not np.isfinite(xa).all():
        raise InputError("X contains non-finite values")
    dense_w, base_w, corr = _tensor_arrays(t)
    dense = _kahan_gemm(dense_w, xa)
    decomposed = _kahan_gemm(base_w, xa) - t.shift_c * _kahan_gemm(corr, _block_sums(xa, t.g))
    return dense, decomposed


def sfp4_matmul_reference(w_enc, x) -> np.ndarray:
    """The decomposed product; see sfp4_matmul_paths for the dense twin."""
    return sfp4_matmul_paths(w_enc, x)[1]


# ── packed tensor file ──

_MAGIC = b"SFP4"
_VERSION = 1
_HEADER = struct.Struct("<4sHIIId")


def write_sfp4(path, t: Sfp4Tensor) -> None:
    """Header {magic, version, M, K, g, shift_c}, 4-bit codes two per byte
    (low nibble first, row-major), then one scale byte per block.  All
    little-endian, bit-exact."""
    m, k = t.shape
    flat = np.concatenate([b.e2m1_codes for row in t.blocks for b in row])
    if flat.size % 2:
        flat = np.concatenate([flat, np.zeros(1, dtype=np.uint8)])
    packed = (flat[0::2] | (flat[1::2] << 4)).astype(np.uint8)
    scales = bytes(b.scale_byte for row in t.blocks for b in row)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, m, k, t.g, t.shift_c))
        f.write(packed.tobytes())
        f.write(scales)


def read_sfp4(path) -> Sfp4Tensor:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise CorruptBlockError("file shorter than the fixed header")
    magic, version, m, k, g, shift_c = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise CorruptBlockError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise CorruptBlockError(f"unsupported version {version}")
    if m <= 0 or k <= 0 or g <= 0 or k % g:
        raise CorruptBlockError(f"inconsistent geometry M={m} K={k} g={g}")
    n_codes = m * k
    n_code_bytes = (n_codes + 1) // 2
    n_scale_bytes = m * (k // g)
    if len(raw) != _HEADER.size + n_code_bytes + n_scale_bytes:
        raise CorruptBlockError("payload length disagrees with the header geometry")
    body = np.frombuffer(raw, dtype=np.uint8, count=n_code_bytes, offset=_HEADER.size)
    flat = np.empty(2 * n_code_bytes, dtype=np.uint8)
    flat[0::2] = body & 0x0F
    flat[1::2] = body >> 4
    flat = flat[:n_codes]
    scales = raw[_HEADER.size + n_code_bytes :]
    bpr = k // g
    rows = tuple(
        tuple(
            Sfp4Block(
                e2m1_codes=flat[(i * bpr + j) * g : (i * bpr + j + 1) * g],
                scale_byte=scales[i * bpr + j],
                shift_c=shift_c,
            )
            for j in range(bpr)
        )
        for i in range(m)
    )
    return Sfp4Tensor(blocks=rows, shape=(m, k), g=g, shift_c=shift_c)
