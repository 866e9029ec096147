"""Blockwise absmax quantization against normalized low-bit grids.

A block X = (X_1, ..., X_g) is normalized by M = max_i |X_i|, every element
is rounded to the nearest grid point, and the reported loss is the
de-normalized per-element squared error M^2 * (1/g) * sum_i psi(A_i).
Multi-grid families resolve the per-block choice through their selector and
carry the winning index as metadata next to the codes.

Scale handling follows the deployed convention: the raw scale is M / d for a
divisor d (default: the grid's raw maximum, i.e. plain absmax), optionally
quantized to a low-bit scale format *before* any value is rounded.  Values
that land outside the grid range after that saturate to the nearest extreme
point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CorruptBlockError, DegenerateBlockError, InputError, ShapeError
from .formats import LowBitFormat, encode_format, round_to_format
from .grids import MIN_MSE, SIGN_OF_MAX, Grid, GridFamily

# A block is a nonempty 1-D float array; a pool stacks blocks row-wise.
Block = np.ndarray


@dataclass(frozen=True)
class BlockLoss:
    """De-normalized per-element squared error of one quantized block."""

    mse: float


@dataclass(frozen=True, eq=False)
class QuantizedBlock:
    """Quantized form of one block.

    ``scale`` is the effective multiplier applied to normalized grid points
    at reconstruction (absmax M when no divisor search or scale format is in
    play).  ``scale_code`` holds the raw per-block scale (M / divisor)
    encoded in the scale format, when one was requested.
    """

    scale: float
    codes: np.ndarray
    grid_index: int
    scale_code: int | None = None


# ── validation ──────────────────────────────────────────────────────────────


def _check_block(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ShapeError("block must be a nonempty 1-D array")
    if not np.all(np.isfinite(x)):
        raise InputError("block contains non-finite values")
    return x


def _as_family(fam) -> GridFamily:
    if isinstance(fam, Grid):
        return GridFamily(grids=(fam,), name=fam.name)
    if not isinstance(fam, GridFamily):
        raise TypeError(f"expected Grid or GridFamily, got {type(fam).__name__}")
    return fam


# ── nearest point ───────────────────────────────────────────────────────────


def _nearest_idx(a: np.ndarray, levels: np.ndarray) -> np.ndarray:
    # searchsorted on midpoints finds the cell; comparing the clipped
    # neighbour candidates keeps the argmin exact and lets the lower index
    # win ties regardless of how the midpoints rounded.
    k = len(levels)
    flat = a.ravel()
    mids = (levels[:-1] + levels[1:]) / 2.0
    j = np.searchsorted(mids, flat, side="left")
    cand = np.stack([np.clip(j - 1, 0, k - 1), j, np.clip(j + 1, 0, k - 1)])
    err = (levels[cand] - flat) ** 2
    pick = cand[err.argmin(axis=0), np.arange(flat.size)]
    return pick.reshape(a.shape)


def nearest_point(a, grid: Grid):
    """Index of the nearest grid point and its squared error.

    Ties (a exactly midway between two adjacent points) break to the lower
    index so runs are bit-reproducible.  Accepts scalars or arrays; values
    outside the grid range resolve to the nearest extreme point.
    """
    arr = np.asarray(a, dtype=np.float64)
    idx = _nearest_idx(arr, grid.levels)
    err = (arr - grid.levels[idx]) ** 2
    if arr.ndim == 0:
        return int(idx), float(err)
    return idx, err


# ── single-block quantization ───────────────────────────────────────────────


def _scale_candidates(M, grid: Grid, scale_divisors, scale_format):
    """Yield (effective_scale, scale_code) for each divisor candidate."""
    for d in scale_divisors or (grid.raw_max,):
        raw = M / float(d)
        code = None
        if scale_format is not None:
            raw = round_to_format(raw, scale_format)
            code = encode_format(raw, scale_format).code
        yield raw * grid.raw_max, code


def quantize_block(
    x,
    fam,
    *,
    scale_divisors=None,
    scale_format: LowBitFormat | None = None,
) -> tuple[QuantizedBlock, BlockLoss]:
    """Quantize one block against a grid or family.

    The family selector picks the grid: MinMSE takes the grid (and divisor,
    when ``scale_divisors`` is given) with the lowest de-normalized MSE,
    breaking ties toward the lower grid index and the earlier divisor;
    sign-of-max dispatches on the sign of the block's max-magnitude entry.
    All-zero blocks quantize to scale 0 with all-zero codes and loss 0.
    """
    x = _check_block(x)
    fam = _as_family(fam)
    g = x.size
    M = float(np.abs(x).max())
    if M == 0.0:
        code = encode_format(0.0, scale_format).code if scale_format else None
        qb = QuantizedBlock(0.0, np.zeros(g, dtype=np.uint8), 0, code)
        return qb, BlockLoss(0.0)

    sign_pick = None
    if fam.selector == SIGN_OF_MAX:
        sign_pick = 0 if x[int(np.abs(x).argmax())] >= 0 else 1

    best = None
    for k, grid in enumerate(fam.grids):
        if sign_pick is not None and k != sign_pick:
            continue
        offset = fam.shift_offsets[k] if fam.shift_offsets else 0.0
        for s, code in _scale_candidates(M, grid, scale_divisors, scale_format):
            if s == 0.0:
                codes = np.zeros(g, dtype=np.uint8)
                rec = np.zeros(g)
            else:
                idx = _nearest_idx(x / s - offset, grid.levels)
                codes = idx.astype(np.uint8)
                rec = s * (grid.levels[idx] + offset)
            mse = float(((x - rec) ** 2).mean())
            if best is None or mse < best[0]:
                best = (mse, k, float(s), codes, code)
    mse, k, s, codes, code = best
    return QuantizedBlock(s, codes, k, code), BlockLoss(mse)


def dequantize_block(qb: QuantizedBlock, fam) -> np.ndarray:
    """Reconstruct a block: scale * (points[codes] + shift offset)."""
    fam = _as_family(fam)
    if not 0 <= qb.grid_index < len(fam.grids):
        raise CorruptBlockError(f"grid index {qb.grid_index} out of range")
    grid = fam.grids[qb.grid_index]
    codes = np.asarray(qb.codes, dtype=np.int64)
    if codes.size == 0:
        raise CorruptBlockError("quantized block has no codes")
    if codes.min() < 0 or codes.max() >= len(grid.points):
        raise CorruptBlockError("code index out of range for grid")
    offset = fam.shift_offsets[qb.grid_index] if fam.shift_offsets else 0.0
    return qb.scale * (grid.levels[codes] + offset)


# ── block statistics ────────────────────────────────────────────────────────


def mu_statistic(x) -> float:
    """Average normalized magnitude of a block: mean_i |x_i| / max_i |x_i|.

    Lies in (0, 1]; equals 1 exactly when all magnitudes agree.  Spiky
    blocks (energy concentrated in few entries) score low, flat blocks
    score high.
    """
    x = _check_block(x)
    mags = np.abs(x)
    M = float(mags.max())
    if M == 0.0:
        raise DegenerateBlockError("mu statistic undefined for an all-zero block")
    return float(mags.mean() / M)


def pool_mu(blocks) -> np.ndarray:
    """Vectorized mu_statistic over rows; all-zero rows raise."""
    blocks = _check_pool(blocks)
    mags = np.abs(blocks)
    M = mags.max(axis=1)
    if np.any(M == 0):
        raise DegenerateBlockError("mu statistic undefined for all-zero blocks")
    return mags.mean(axis=1) / M


# ── pool kernels ────────────────────────────────────────────────────────────


def _check_pool(blocks) -> np.ndarray:
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim != 2 or blocks.size == 0:
        raise ShapeError("pool must be a nonempty 2-D array of shape (blocks, g)")
    if not np.all(np.isfinite(blocks)):
        raise InputError("pool contains non-finite values")
    return blocks


def pool_losses(
    blocks,
    fam,
    *,
    scale_divisors=None,
    scale_format: LowBitFormat | None = None,
    return_grid_index: bool = False,
):
    """Per-block losses for a stack of blocks, matching quantize_block row by row.

    Returns the (n,) loss vector, or (losses, grid_index) when
    ``return_grid_index`` is set.
    """
    blocks = _check_pool(blocks)
    fam = _as_family(fam)
    n, _ = blocks.shape
    absb = np.abs(blocks)
    M = absb.max(axis=1)

    if fam.selector == SIGN_OF_MAX:
        lead = blocks[np.arange(n), absb.argmax(axis=1)]
        want_first = lead >= 0

    best = np.full(n, np.inf)
    gidx = np.zeros(n, dtype=np.uint8)
    for k, grid in enumerate(fam.grids):
        offset = fam.shift_offsets[k] if fam.shift_offsets else 0.0
        for d in scale_divisors or (grid.raw_max,):
            raw = M / float(d)
            if scale_format is not None:
                raw = round_to_format(raw, scale_format)
            s = raw * grid.raw_max
            safe = np.where(s > 0, s, 1.0)
            idx = _nearest_idx(blocks / safe[:, None] - offset, grid.levels)
            rec = safe[:, None] * (grid.levels[idx] + offset)
            rec[s == 0.0] = 0.0
            mse = ((blocks - rec) ** 2).mean(axis=1)
            if fam.selector == SIGN_OF_MAX:
                better = (want_first if k == 0 else ~want_first) & (mse < best)
            else:
                better = mse < best
            best[better] = mse[better]
            gidx[better] = k
    if return_grid_index:
        return best, gidx
    return best
