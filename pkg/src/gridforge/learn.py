"""Grid learning: weighted Lloyd-Max and residual pair training.

All learners operate on absmax-normalized samples. With the default
Msquared weighting each sample carries its block's M^2, so the pooled
objective matches the de-normalized per-element MSE the quantizer reports;
Uniform weighting optimizes the normalized error instead.

The residual pair learner follows the generic recipe: score every block
under the primary grid, collect the blocks whose loss exceeds the residual
quantile (median by default), initialize the partner grid on that residual
pool, then alternate per-block argmin assignment with one Lloyd sweep per
updatable grid until the pooled objective stalls.  Constraint handling
(pins, sign structure) always projects onto a set containing the previous
iterate, which keeps every trace non-increasing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import (
    InputError,
    InsufficientDataError,
    ParameterError,
    ResidualEmptyError,
    ShapeError,
)
from .formats import LowBitFormat
from .grids import MIN_MSE, SIGN_OF_MAX, Grid, GridFamily, snap_to_format
from .quant import _nearest_idx, pool_losses

logger = logging.getLogger(__name__)

WEIGHT_MSQUARED = "Msquared"
WEIGHT_UNIFORM = "Uniform"


@dataclass(frozen=True)
class TrainConfig:
    max_iters: int = 200
    rel_tol: float = 1e-7
    seed: int = 0
    residual_quantile: float = 0.5
    weight_mode: str = WEIGHT_MSQUARED

    def __post_init__(self):
        if self.max_iters < 1:
            raise ParameterError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ParameterError("rel_tol must be > 0")
        if not 0.0 < self.residual_quantile < 1.0:
            raise ParameterError("residual_quantile must lie in (0, 1)")
        if self.weight_mode not in (WEIGHT_MSQUARED, WEIGHT_UNIFORM):
            raise ParameterError(f"unknown weight_mode {self.weight_mode!r}")


@dataclass
class LearnReport:
    """Objective trace and final assignment of one learning run."""

    objective_trace: list
    assignments_final: np.ndarray
    converged: bool
    snap_mse_delta: float | None = None


# ── pools and weights ────────────────────────────────────────────────────────


def _as_blocks(pool) -> np.ndarray:
    blocks = np.asarray(getattr(pool, "blocks", pool), dtype=np.float64)
    if blocks.ndim != 2 or blocks.size == 0:
        raise ShapeError("training pool must be a nonempty 2-D array (blocks, g)")
    if not np.all(np.isfinite(blocks)):
        raise InputError("training pool contains non-finite values")
    return blocks


def _flatten_weighted(blocks: np.ndarray, weight_mode: str):
    """Absmax-normalized samples and their per-sample weights."""
    M = np.abs(blocks).max(axis=1)
    safe = np.where(M > 0, M, 1.0)
    a = (blocks / safe[:, None]).ravel()
    if weight_mode == WEIGHT_MSQUARED:
        w = np.repeat(M * M, blocks.shape[1])
    else:
        w = np.ones(a.size)
    return a, w


def _weighted_sse(samples, weights, levels) -> float:
    q = levels[_nearest_idx(samples, levels)]
    return float((weights * (samples - q) ** 2).sum())


# ── Lloyd-Max ────────────────────────────────────────────────────────────────


def _weighted_quantile_levels(samples, weights, k) -> np.ndarray:
    order = np.argsort(samples, kind="stable")
    s = samples[order]
    cw = np.cumsum(weights[order])
    targets = (np.arange(k) + 0.5) / k * cw[-1]
    levels = np.sort(s[np.minimum(np.searchsorted(cw, targets), s.size - 1)])
    # spread exact duplicates into the widest gap so all k levels are distinct
    for _ in range(k):
        dup = np.flatnonzero(np.diff(levels) <= 0)
        if dup.size == 0:
            break
        gaps = np.diff(levels)
        j = int(np.argmax(gaps))
        levels[dup[0] + 1] = levels[j] + gaps[j] / 2
        levels = np.sort(levels)
    return levels


def _gap_reseed(levels, samples, weights, empty, protected) -> np.ndarray:
    """Move empty levels to the midpoint of the largest-error neighbor gap."""
    levels = levels.copy()
    for idx in np.flatnonzero(empty & ~protected):
        pos = np.searchsorted(levels, samples)  # samples in gap (j-1, j) -> pos j
        q = levels[_nearest_idx(samples, levels)]
        err = weights * (samples - q) ** 2
        gap_err = np.bincount(pos, weights=err, minlength=len(levels) + 1)[1:-1]
        sign_lo = np.sign(levels[idx])
        if sign_lo != 0:
            # keep sign-structured grids sign-structured: only reseed into
            # gaps lying on the same side of zero
            lo, hi = levels[:-1], levels[1:]
            same = np.sign((lo + hi) / 2) == sign_lo
            gap_err = np.where(same, gap_err, -1.0)
        j = int(np.argmax(gap_err))
        levels[idx] = (levels[j] + levels[j + 1]) / 2
        levels = np.sort(levels)
    return levels


def _apply_pins(levels: np.ndarray, pins) -> np.ndarray:
    for p in pins:
        levels[int(np.argmin(np.abs(levels - p)))] = p
    return levels


def _lloyd_sweep(levels, samples, weights, pins=(), sign_counts=None):
    """One assignment + weighted-centroid update, constraints reapplied."""
    k = len(levels)
    labels = _nearest_idx(samples, levels)
    wsum = np.bincount(labels, weights=weights, minlength=k)
    xsum = np.bincount(labels, weights=weights * samples, minlength=k)
    new = np.where(wsum > 0, xsum / np.where(wsum > 0, wsum, 1.0), levels)
    if sign_counts is not None:
        nn, _ = sign_counts
        new[:nn] = np.minimum(new[:nn], -1e-12)
        new[k - sign_counts[1]:] = np.maximum(new[k - sign_counts[1]:], 1e-12)
    new = _apply_pins(new, pins)
    protected = np.zeros(k, dtype=bool)
    for p in pins:
        protected[int(np.argmin(np.abs(new - p)))] = True
    if np.any((wsum == 0) & ~protected):
        new = _gap_reseed(np.sort(new), samples, weights, wsum == 0, protected)
    return np.sort(new)


def lloyd_fit(
    pool,
    k_levels: int,
    cfg: TrainConfig = TrainConfig(),
    *,
    fixed_zero: bool = False,
    fixed_endpoints: bool = False,
    neg_pos_split: tuple | None = None,
    block_weights=None,
) -> tuple[Grid, LearnReport]:
    """Weighted Lloyd-Max fit of k_levels on absmax-normalized samples.

    Constraints: fixed_zero pins a level at 0; fixed_endpoints pins the
    extreme levels (at -1/+1 for signed pools, 0/+1 for nonnegative ones);
    neg_pos_split = (n_neg, n_pos) enforces the count of negative/positive
    levels.  Empty cells re-seed at the midpoint of the largest-error gap.
    block_weights, when given, multiplies each block's sample weights --
    the hook mixture experiments use to reweight block classes.
    """
    blocks = _as_blocks(pool)
    if k_levels < 2:
        raise ParameterError("k_levels must be >= 2")
    samples, weights = _flatten_weighted(blocks, cfg.weight_mode)
    if block_weights is not None:
        bw = np.asarray(block_weights, dtype=np.float64)
        if bw.shape != (blocks.shape[0],):
            raise ParameterError("block_weights must have one entry per block")
        if not np.isfinite(bw).all() or (bw < 0).any() or bw.sum() <= 0:
            raise ParameterError("block_weights must be nonnegative with positive total")
        weights = weights * np.repeat(bw, blocks.shape[1])
    if np.unique(samples).size < k_levels:
        raise InsufficientDataError(
            f"pool has fewer than k_levels={k_levels} distinct normalized values"
        )
    half = bool(samples.min() >= 0.0)

    pins = []
    if fixed_endpoints:
        pins += [0.0 if half else -1.0, 1.0]
    if fixed_zero:
        pins.append(0.0)
    pins = sorted(set(pins))

    if neg_pos_split is not None:
        nn, npos = neg_pos_split
        if nn + npos + (1 if fixed_zero else 0) != k_levels:
            raise ParameterError("neg_pos_split counts must sum to k_levels")
        neg, pos = samples < 0, samples > 0
        if np.unique(samples[neg]).size < nn or np.unique(samples[pos]).size < npos:
            raise InsufficientDataError("pool too thin for the requested sign split")
        parts = [_weighted_quantile_levels(samples[neg], weights[neg], nn)]
        if fixed_zero:
            parts.append(np.array([0.0]))
        parts.append(_weighted_quantile_levels(samples[pos], weights[pos], npos))
        levels = np.concatenate(parts)
        sign_counts = (nn, npos)
    else:
        levels = _weighted_quantile_levels(samples, weights, k_levels)
        sign_counts = None
    levels = np.sort(_apply_pins(levels, pins))

    n_g = samples.size
    trace: list = []
    prev = None
    converged = False
    for _ in range(cfg.max_iters):
        obj = _weighted_sse(samples, weights, levels) / n_g
        trace.append(obj)
        if prev is not None and prev - obj <= cfg.rel_tol * max(prev, 1e-300):
            converged = True
            break
        prev = obj
        levels = _lloyd_sweep(levels, samples, weights, pins, sign_counts)
    else:
        trace.append(_weighted_sse(samples, weights, levels) / n_g)

    grid = Grid(tuple(levels), name=f"lloyd{k_levels}", half=half)
    report = LearnReport(trace, np.zeros(len(blocks), dtype=np.uint8), converged)
    return grid, report


# ── residual pair learning ───────────────────────────────────────────────────


def _family_losses(blocks, grids, weight_mode):
    """Stacked per-block losses (n_grids, n) in objective units."""
    per = np.stack([pool_losses(blocks, g) for g in grids])
    if weight_mode == WEIGHT_UNIFORM:
        M = np.abs(blocks).max(axis=1)
        per = per / np.where(M > 0, M * M, 1.0)[None, :]
    return per


def learn_residual_pair(
    primary: Grid,
    primary_fixed: bool,
    pool,
    cfg: TrainConfig = TrainConfig(),
    snap: LowBitFormat | None = None,
    *,
    half_mode: bool = False,
) -> tuple[GridFamily, LearnReport]:
    """Learn a two-grid family around `primary` by residual specialization.

    Steps: (1) score blocks under the primary; (2) residual pool = blocks
    with loss strictly above the residual quantile; (3) initialize the
    partner on the residual pool via lloyd_fit; (4) alternate argmin
    assignment with one Lloyd sweep per updatable grid; (5) snap updatable
    grids to `snap` when given.  With primary_fixed only the partner
    updates; otherwise both grids do.  half_mode keeps every updatable
    grid in the endpoint-pinned nonnegative parameterization (levels 0 and
    1 fixed), the form the asymptotic experiments compare against.
    """
    blocks = _as_blocks(pool)
    pins = (0.0, 1.0) if half_mode else ()
    if half_mode and (not primary.half or blocks.min() < 0):
        raise ParameterError("half_mode needs a half-grid primary and nonnegative blocks")
    loss1 = pool_losses(blocks, primary)
    thresh = float(np.quantile(loss1, cfg.residual_quantile))
    residual = blocks[loss1 > thresh]
    if residual.shape[0] == 0:
        if loss1.max() == 0.0:
            # the primary already represents every block exactly; nothing to
            # learn, so the pair degenerates to two copies of the primary
            partner = Grid(primary.points, name=f"{primary.name}_partner")
            fam = GridFamily((primary, partner), MIN_MSE, name=f"po2_{primary.name}")
            report = LearnReport([0.0], np.zeros(len(blocks), dtype=np.uint8), True)
            return fam, report
        raise ResidualEmptyError(
            "no block's loss exceeds the residual quantile; "
            "loss distribution is degenerate"
        )

    partner, _ = lloyd_fit(residual, len(primary), cfg, fixed_endpoints=half_mode)
    grids = [primary, Grid(partner.points, name=f"{primary.name}_partner",
                           half=half_mode)]
    updatable = (1,) if primary_fixed else (0, 1)

    trace: list = []
    prev = None
    converged = False
    assign = np.zeros(len(blocks), dtype=np.uint8)
    for _ in range(cfg.max_iters):
        per = _family_losses(blocks, grids, cfg.weight_mode)
        assign = per.argmin(axis=0).astype(np.uint8)
        obj = float(per.min(axis=0).mean())
        trace.append(obj)
        if prev is not None and prev - obj <= cfg.rel_tol * max(prev, 1e-300):
            converged = True
            break
        prev = obj
        for k in updatable:
            part = blocks[assign == k]
            if part.shape[0] == 0:
                continue
            samples, weights = _flatten_weighted(part, cfg.weight_mode)
            levels = _lloyd_sweep(grids[k].levels, samples, weights, pins)
            grids[k] = Grid(tuple(levels), name=grids[k].name, half=half_mode)
    else:
        per = _family_losses(blocks, grids, cfg.weight_mode)
        assign = per.argmin(axis=0).astype(np.uint8)
        trace.append(float(per.min(axis=0).mean()))

    snap_delta = None
    if snap is not None:
        pre = trace[-1]
        for k in updatable:
            grids[k] = snap_to_format(grids[k], snap)
        post = float(_family_losses(blocks, grids, cfg.weight_mode).min(axis=0).mean())
        snap_delta = (post - pre) / pre if pre > 0 else 0.0
        logger.info("snap to %s changed pooled MSE by %+.2f%%", snap.kind,
                    100.0 * snap_delta)

    name = f"po2_{primary.name}" if primary_fixed else "learned_pair"
    fam = GridFamily(tuple(grids), MIN_MSE, name=name)
    return fam, LearnReport(trace, assign, converged, snap_delta)


# ── Split87-style coordinate descent ─────────────────────────────────────────


def learn_split87(
    pool,
    cfg: TrainConfig = TrainConfig(),
    *,
    split: tuple = (8, 7),
) -> tuple[Grid, LearnReport]:
    """Asymmetric 16-level grid learned by per-level coordinate descent.

    Structure: `split` = (negative, positive) nonzero level counts, plus an
    explicit zero.  The minimum level is pinned to -1 and zero is pinned;
    the 14 remaining levels update one at a time, each solved to a local
    weighted-centroid fixed point with its neighbors held fixed.  Returns
    the pre-snap grid (snap separately if a format is required).
    """
    blocks = _as_blocks(pool)
    nn, npos = split
    k = nn + 1 + npos
    samples, weights = _flatten_weighted(blocks, cfg.weight_mode)
    if np.unique(samples).size < k:
        raise InsufficientDataError(
            f"pool has fewer than {k} distinct normalized values"
        )
    neg, pos = samples < 0, samples > 0
    if np.unique(samples[neg]).size < nn or np.unique(samples[pos]).size < npos:
        raise InsufficientDataError("pool too thin for the requested sign split")

    levels = np.concatenate([
        _weighted_quantile_levels(samples[neg], weights[neg], nn),
        [0.0],
        _weighted_quantile_levels(samples[pos], weights[pos], npos),
    ])
    levels[0] = -1.0
    free = [j for j in range(k) if j not in (0, nn)]

    n_g = samples.size
    trace: list = []
    prev = None
    converged = False
    for _ in range(cfg.max_iters):
        obj = _weighted_sse(samples, weights, levels) / n_g
        trace.append(obj)
        if prev is not None and prev - obj <= cfg.rel_tol * max(prev, 1e-300):
            converged = True
            break
        prev = obj
        for j in free:
            lo = levels[j - 1] if j > 0 else -np.inf
            hi = levels[j + 1] if j < k - 1 else np.inf
            b = levels[j]
            for _ in range(8):  # fixed point of the moving cell boundary
                left = (lo + b) / 2 if np.isfinite(lo) else -np.inf
                right = (b + hi) / 2 if np.isfinite(hi) else np.inf
                cell = (samples > left) & (samples <= right)
                wsum = weights[cell].sum()
                if wsum == 0:
                    break
                new = float((weights[cell] * samples[cell]).sum() / wsum)
                if abs(new - b) <= 1e-15:
                    b = new
                    break
                b = new
            levels[j] = b
    else:
        trace.append(_weighted_sse(samples, weights, levels) / n_g)

    grid = Grid(tuple(levels), name=f"split{nn}{npos}")
    report = LearnReport(trace, np.zeros(len(blocks), dtype=np.uint8), converged)
    return grid, report


# ── sign-normalized single grid ──────────────────────────────────────────────


def learn_bof4s(
    pool,
    cfg: TrainConfig = TrainConfig(),
    *,
    k_levels: int = 16,
) -> tuple[GridFamily, LearnReport]:
    """Learn one asymmetric grid G on sign-normalized blocks; use (G, -G).

    Every block is flipped so its max-magnitude entry is positive, a single
    k-level grid is Lloyd-fit on the flipped pool, and the returned family
    pairs it with its negation under the sign-of-max selector (no spare
    metadata bit needed at deployment).
    """
    blocks = _as_blocks(pool)
    lead = blocks[np.arange(len(blocks)), np.abs(blocks).argmax(axis=1)]
    flipped = np.where((lead < 0)[:, None], -blocks, blocks)
    grid, report = lloyd_fit(flipped, k_levels, cfg)
    G = Grid(grid.points, name="bof4s")
    neg = Grid(tuple(-p for p in reversed(G.points)), name="bof4s_neg")
    fam = GridFamily((G, neg), SIGN_OF_MAX, name="bof4s")
    return fam, report
