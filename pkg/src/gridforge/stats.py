"""Distribution samplers, Monte-Carlo risk estimation, and experiments.

Four experiment families live here, all seeded and single-threaded by
default so reports are byte-reproducible:

- estimate_risk -- distributional MSE of a grid family on a block pool,
  the machinery behind the g=16 comparison table.
- competitive_analysis -- the two-class (spiky/flat) competitive factors
  alpha_S, alpha_F and beta = max of the two, against per-class
  Lloyd-learned conditional optima on deployed magnitude half-grids.
- asymptotic_gap -- the no-asymptotic-advantage experiment: the gap
  between the best single grid and the best pair vanishes as g grows.
- concavity_check -- midpoint concavity of the mixture value function
  V(p) = inf over grids of the p-weighted two-class risk.
- fit_student_t -- profile-likelihood MLE for the tail index of observed
  scalar samples, with the scale profiled out per candidate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln
from scipy.stats import truncnorm as _truncnorm

from .errors import InputError, InsufficientDataError, ParameterError
from .grids import Grid, positive_half
from .learn import TrainConfig, WEIGHT_MSQUARED, WEIGHT_UNIFORM, learn_residual_pair, lloyd_fit
from .pools import BlockPool
from .quant import _as_family, _nearest_idx, pool_losses, pool_mu

__all__ = [
    "DistributionSpec",
    "RiskReport",
    "CompetitiveReport",
    "TFit",
    "NU_BOUND",
    "sample_pool",
    "estimate_risk",
    "competitive_analysis",
    "asymptotic_gap",
    "concavity_check",
    "fit_student_t",
]

logger = logging.getLogger(__name__)

_KINDS = ("normal", "student_t", "uniform", "truncated_normal")


# ── distributions ──


@dataclass(frozen=True)
class DistributionSpec:
    """Sampling law for synthetic pools.

    kinds: normal, student_t (nu > 2 so the variance exists), uniform on
    [-1, 1], truncated_normal on [-bound, bound].  `standardized` rescales
    to unit variance -- for Student-t that divides by sqrt(nu/(nu-2)).
    """

    kind: str
    nu: float = None
    bound: float = None
    standardized: bool = False

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ParameterError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if self.kind == "student_t":
            if self.nu is None or not (np.isfinite(self.nu) and self.nu > 2.0):
                raise ParameterError(
                    f"student_t needs degrees of freedom > 2, got {self.nu}"
                )
        elif self.nu is not None:
            raise ParameterError(f"{self.kind} takes no degrees of freedom")
        if self.kind == "truncated_normal":
            if self.bound is None or not (np.isfinite(self.bound) and self.bound > 0):
                raise ParameterError(f"truncated_normal needs bound > 0, got {self.bound}")
        elif self.bound is not None:
            raise ParameterError(f"{self.kind} takes no truncation bound")

    @property
    def name(self) -> str:
        if self.kind == "student_t":
            base = f"t{self.nu:g}"
        elif self.kind == "truncated_normal":
            base = f"truncnorm{self.bound:g}"
        else:
            base = self.kind
        return base + ("_std" if self.standardized else "")

    @property
    def bounded_support(self) -> bool:
        return self.kind in ("uniform", "truncated_normal")

    def std(self) -> float:
        if self.kind == "normal":
            return 1.0
        if self.kind == "student_t":
            return math.sqrt(self.nu / (self.nu - 2.0))
        if self.kind == "uniform":
            return math.sqrt(1.0 / 3.0)
        return float(_truncnorm.std(-self.bound, self.bound))

    @staticmethod
    def parse(text: str, standardized: bool = False) -> "DistributionSpec":
        """normal | uniform | t<nu> | truncnorm<bound>, e.g. "t5"."""
        t = text.strip().lower()
        try:
            if t == "normal":
                return DistributionSpec("normal", standardized=standardized)
            if t == "uniform":
                return DistributionSpec("uniform", standardized=standardized)
            if t.startswith("truncnorm"):
                return DistributionSpec(
                    "truncated_normal", bound=float(t[len("truncnorm"):]),
                    standardized=standardized,
                )
            if t.startswith("t"):
                return DistributionSpec(
                    "student_t", nu=float(t[1:]), standardized=standardized
                )
        except ValueError:
            pass
        raise ParameterError(f"cannot parse distribution {text!r}")


def sample_pool(spec: DistributionSpec, g: int, n_blocks: int, seed) -> BlockPool:
    """i.i.d. coordinates; Student-t drawn as normal / sqrt(chi2_nu / nu)."""
    if n_blocks < 1:
        raise ParameterError(f"n_blocks must be >= 1, got {n_blocks}")
    if g < 1:
        raise ParameterError(f"block size must be >= 1, got {g}")
    rng = np.random.default_rng(seed)
    shape = (n_blocks, g)
    if spec.kind == "normal":
        x = rng.standard_normal(shape)
    elif spec.kind == "student_t":
        x = rng.standard_normal(shape) / np.sqrt(rng.chisquare(spec.nu, shape) / spec.nu)
    elif spec.kind == "uniform":
        x = rng.uniform(-1.0, 1.0, shape)
    else:
        x = _truncnorm.rvs(-spec.bound, spec.bound, size=shape, random_state=rng)
    if spec.standardized:
        x = x / spec.std()
    return BlockPool(blocks=x, tags="synthetic")


# ── risk estimation ──


@dataclass(frozen=True)
class RiskReport:
    name: str
    mse_mean: float
    stderr: float
    n_blocks: int
    g: int

    def __post_init__(self) -> None:
        if self.mse_mean < 0 or self.stderr < 0:
            raise ParameterError("risk estimates must be nonnegative")


def estimate_risk(pool: BlockPool, fam) -> RiskReport:
    """Mean over blocks of the min-over-grids de-normalized block MSE."""
    losses = pool_losses(pool.blocks, fam)
    n = losses.size
    stderr = float(losses.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return RiskReport(
        name=getattr(fam, "name", "family"),
        mse_mean=float(losses.mean()),
        stderr=stderr,
        n_blocks=n,
        g=pool.g,
    )


# ── competitive analysis ──


@dataclass(frozen=True)
class CompetitiveReport:
    tau: float
    p_spiky: float
    alpha_S: float
    alpha_F: float
    beta: float
    designation: dict
    sweep: tuple

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_spiky <= 1.0:
            raise ParameterError(f"p_spiky must lie in [0,1], got {self.p_spiky}")
        if self.beta != max(self.alpha_S, self.alpha_F):
            raise ParameterError("beta must equal max(alpha_S, alpha_F)")


def _half_psi(blocks: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Per-block mean squared distance of normalized magnitudes to a half grid."""
    m = np.abs(blocks).max(axis=1)
    a = np.abs(blocks) / np.where(m > 0.0, m, 1.0)[:, None]
    idx = _nearest_idx(a, levels)
    return ((a - levels[idx]) ** 2).mean(axis=1)


def _class_risk(blocks: np.ndarray, levels: np.ndarray, weight_mode: str) -> float:
    psi = _half_psi(blocks, levels)
    if weight_mode == WEIGHT_MSQUARED:
        m = np.abs(blocks).max(axis=1)
        psi = psi * m * m
    return float(psi.mean())


def competitive_analysis(
    spec: DistributionSpec,
    g: int,
    fam,
    tau_grid=None,
    n_train: int = 30000,
    n_val: int = 60000,
    seed=0,
    *,
    weight_mode: str = WEIGHT_UNIFORM,
    cfg: TrainConfig = None,
) -> CompetitiveReport:
    """Spiky/flat competitive factors against per-class conditional optima.

    Protocol: the family's grids enter as their deployed magnitude halves;
    the conditional optimum per class is an equal-size half grid learned by
    Lloyd with the {0, 1} endpoints pinned on that class's training blocks.
    Blocks are spiky when mu <= tau; the family grid "designated" for a
    class is the one the min-MSE rule selects most often on that class's
    training blocks.  For each tau, alpha_class = (validation risk of the
    designated grid) / (validation risk of the conditional optimum); the
    reported tau minimizes beta = max(alpha_S, alpha_F).  Risks are plain
    normalized block MSE by default (weight_mode Uniform); the M^2-weighted
    variant is the ablation flag.
    """
    fam = _as_family(fam)
    if tau_grid is None:
        tau_grid = np.linspace(0.20, 0.80, 25)
    tau_grid = [float(t) for t in tau_grid]
    if not tau_grid or any(not 0.0 < t < 1.0 for t in tau_grid):
        raise ParameterError("tau_grid must be a nonempty subset of (0, 1)")
    if weight_mode not in (WEIGHT_UNIFORM, WEIGHT_MSQUARED):
        raise ParameterError(f"unknown weight_mode {weight_mode!r}")
    cfg = cfg if cfg is not None else TrainConfig()
    lloyd_cfg = replace(cfg, weight_mode=weight_mode)

    tr_seed, va_seed = np.random.SeedSequence(seed).spawn(2)
    train = sample_pool(spec, g, n_train, tr_seed)
    val = sample_pool(spec, g, n_val, va_seed)

    halves = [positive_half(gr, renormalize=False) for gr in fam.grids]
    k = len(halves[0])
    psi_train = np.stack([_half_psi(train.blocks, h.levels) for h in halves])
    winner_train = psi_train.argmin(axis=0)
    mu_train = pool_mu(train.blocks)
    mu_val = pool_mu(val.blocks)

    best = None
    sweep = []
    designation_best = None
    for tau in tau_grid:
        spiky_tr = mu_train <= tau
        spiky_va = mu_val <= tau
        parts = {
            "spiky": (spiky_tr, spiky_va),
            "flat": (~spiky_tr, ~spiky_va),
        }
        if any(m.sum() == 0 for pair in parts.values() for m in pair):
            logger.warning("tau=%.4f leaves an empty class; skipped", tau)
            continue
        alphas = {}
        desig = {}
        try:
            for cls, (m_tr, m_va) in parts.items():
                counts = np.bincount(winner_train[m_tr], minlength=len(halves))
                d = int(counts.argmax())
                desig[cls] = halves[d].name
                opt, _ = lloyd_fit(
                    np.abs(train.blocks[m_tr]), k, lloyd_cfg, fixed_endpoints=True
                )
                num = _class_risk(val.blocks[m_va], halves[d].levels, weight_mode)
                den = _class_risk(val.blocks[m_va], opt.levels, weight_mode)
                alphas[cls] = num / den if den > 0 else 1.0
        except InsufficientDataError:
            logger.warning("tau=%.4f class too thin for Lloyd; skipped", tau)
            continue
        beta = max(alphas["spiky"], alphas["flat"])
        sweep.append((tau, alphas["spiky"], alphas["flat"], beta))
        if best is None or beta < best[3]:
            best = sweep[-1]
            designation_best = desig
    if best is None:
        raise ParameterError("every tau produced an empty or degenerate class")
    tau, alpha_s, alpha_f, beta = best
    logger.info(
        "competitive designation at tau=%.4f: spiky->%s flat->%s",
        tau, designation_best["spiky"], designation_best["flat"],
    )
    return CompetitiveReport(
        tau=tau,
        p_spiky=float((mu_val <= tau).mean()),
        alpha_S=alpha_s,
        alpha_F=alpha_f,
        beta=beta,
        designation=designation_best,
        sweep=tuple(sweep),
    )


# ── asymptotic gap ──


def asymptotic_gap(
    spec: DistributionSpec,
    g_list,
    budget: int = 2**21,
    seed=0,
    cfg: TrainConfig = None,
    k_half: int = 8,
) -> list:
    """Paired estimates of R*_g - R*_PO2,g on a bounded-support law.

    For each g: a train pool of ~budget scalars fits (a) the best single
    half grid (Lloyd, {0,1} pinned) and (b) a residual-learned pair seeded
    by it; the gap is the paired mean of per-block loss differences on a
    fresh validation pool, with its stderr.  Degenerate pools (g=1, point
    mass) have zero risk under any endpoint grid and report gap 0.
    """
    if not spec.bounded_support:
        raise ParameterError("asymptotic gap experiment needs bounded support")
    g_list = [int(g) for g in g_list]
    if not g_list or any(g < 1 for g in g_list):
        raise ParameterError("g_list must be nonempty positive integers")
    cfg = cfg if cfg is not None else TrainConfig()
    children = np.random.SeedSequence(seed).spawn(2 * len(g_list))

    out = []
    for i, g in enumerate(g_list):
        n_blocks = max(budget // g, 2)
        train = sample_pool(spec, g, n_blocks, children[2 * i])
        val = sample_pool(spec, g, n_blocks, children[2 * i + 1])
        mag = np.abs(train.blocks)
        a = mag / np.where(train.absmax > 0, train.absmax, 1.0)[:, None]
        if np.unique(a).size < k_half:
            # point-mass / g=1 pools: every magnitude normalizes to 1, which
            # any endpoint-pinned grid represents exactly
            levels = np.linspace(0.0, 1.0, k_half)
            single = Grid(tuple(levels), name=f"uniform{k_half}", half=True)
            pair_grids = (single, single)
        else:
            single, _ = lloyd_fit(mag, k_half, cfg, fixed_endpoints=True)
            pair, _ = learn_residual_pair(single, False, mag, cfg, half_mode=True)
            pair_grids = pair.grids
        loss_single = _half_psi(val.blocks, single.levels)
        loss_pair = np.minimum.reduce(
            [_half_psi(val.blocks, gr.levels) for gr in pair_grids]
        )
        diff = loss_single - loss_pair
        gap = float(diff.mean())
        stderr = float(diff.std(ddof=1) / math.sqrt(diff.size))
        out.append((g, gap, stderr))
    return out


# ── concavity of the mixture value function ──


def concavity_check(
    pool_S: BlockPool,
    pool_F: BlockPool,
    family_class=None,
    p_grid=(0.0, 0.25, 0.5, 0.75, 1.0),
    cfg: TrainConfig = None,
) -> tuple:
    """Midpoint concavity of V(p) = inf_B (p R_S(B) + (1-p) R_F(B)).

    For each p the single best grid is learned on the p-weighted mixture
    (class weights p/n_S and (1-p)/n_F so the objective is exactly the
    mixture risk); V(p) is recorded with its stderr.  Every pair of grid
    points whose midpoint is also a grid point must satisfy
    V(mid) >= (V(lo) + V(hi))/2 - eps with eps = 2x the max stderr
    involved.  Returns (ok, table) with table rows (p, V, stderr).
    """
    p_grid = [float(p) for p in p_grid]
    if not p_grid or any(not 0.0 <= p <= 1.0 for p in p_grid):
        raise ParameterError("p_grid must be a nonempty subset of [0, 1]")
    if sorted(p_grid) != p_grid:
        raise ParameterError("p_grid must be sorted")
    cfg = cfg if cfg is not None else TrainConfig()
    if family_class is None:
        def family_class(blocks, block_weights, c):
            grid, _ = lloyd_fit(blocks, 16, c, block_weights=block_weights)
            return grid

    blocks = np.concatenate([pool_S.blocks, pool_F.blocks], axis=0)
    n_s, n_f = len(pool_S), len(pool_F)

    table = []
    for p in p_grid:
        w = np.concatenate([np.full(n_s, p / n_s), np.full(n_f, (1.0 - p) / n_f)])
        grid = family_class(blocks, w, cfg)
        ls = pool_losses(pool_S.blocks, grid)
        lf = pool_losses(pool_F.blocks, grid)
        v = p * ls.mean() + (1.0 - p) * lf.mean()
        se = math.sqrt(
            (p * ls.std(ddof=1) / math.sqrt(n_s)) ** 2
            + ((1.0 - p) * lf.std(ddof=1) / math.sqrt(n_f)) ** 2
        )
        table.append((p, float(v), float(se)))

    ok = True
    for i in range(len(p_grid)):
        for j in range(i + 2, len(p_grid)):
            mid = (p_grid[i] + p_grid[j]) / 2.0
            hits = [m for m in range(len(p_grid)) if abs(p_grid[m] - mid) <= 1e-12]
            if not hits:
                continue
            m = hits[0]
            eps = 2.0 * max(table[i][2], table[j][2], table[m][2])
            if table[m][1] < (table[i][1] + table[j][1]) / 2.0 - eps:
                ok = False
    return ok, table


# ── Student-t tail fitting ──


NU_BOUND = 100.0


class TFit(NamedTuple):
    nu: float
    loglik: float
    at_bound: bool


def _profile_loglik(x2: np.ndarray, nu: float) -> float:
    """Student-t log-likelihood at nu with the scale profiled out by EM."""
    sigma2 = float(x2.mean())
    for _ in range(200):
        w = (nu + 1.0) / (nu + x2 / sigma2)
        new = float((w * x2).mean())
        done = abs(new - sigma2) <= 1e-12 * sigma2
        sigma2 = new
        if done:
            break
    n = x2.size
    return float(
        n * (gammaln((nu + 1.0) / 2.0) - gammaln(nu / 2.0)
             - 0.5 * math.log(nu * math.pi * sigma2))
        - (nu + 1.0) / 2.0 * np.log1p(x2 / (nu * sigma2)).sum()
    )


def fit_student_t(samples) -> TFit:
    """Profile-likelihood MLE of the tail index over a log-spaced grid
    with golden-section refinement; nu at the upper bound means the data
    look Normal (t with nu >= the bound)."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 1000:
        raise InsufficientDataError(f"need >= 1000 samples, got {x.size}")
    if not np.isfinite(x).all():
        raise InputError("samples contain non-finite values")
    x2 = x * x
    if x2.mean() == 0.0:
        raise InputError("samples are identically zero")

    grid = np.geomspace(2.05, NU_BOUND, 41)
    lls = [_profile_loglik(x2, nu) for nu in grid]
    b = int(np.argmax(lls))
    if b == len(grid) - 1:
        return TFit(nu=float(grid[b]), loglik=float(lls[b]), at_bound=True)

    lo = math.log(grid[max(b - 1, 0)])
    hi = math.log(grid[b + 1])
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - inv_phi * (hi - lo)
    d = lo + inv_phi * (hi - lo)
    fc = _profile_loglik(x2, math.exp(c))
    fd = _profile_loglik(x2, math.exp(d))
    while hi - lo > 1e-6:
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - inv_phi * (hi - lo)
            fc = _profile_loglik(x2, math.exp(c))
        else:
            lo, c, fc = c, d, fd
            d = lo + inv_phi * (hi - lo)
            fd = _profile_loglik(x2, math.exp(d))
    nu = math.exp((lo + hi) / 2.0)
    return TFit(nu=float(nu), loglik=_profile_loglik(x2, nu), at_bound=False)
