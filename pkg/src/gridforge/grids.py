"""Grid and grid-family types, built-in grids, and format snapping.

A Grid is a sorted table of normalized code levels. Signed grids are
16-level tables used by the quantizer (the FP4 table stores 15 levels --
one zero, not two). Half grids are the 8-level nonnegative tables used by
the theory experiments (b_0 = 0, b_7 = 1).

Published tables (Split87 and the MPO2 pair) are hard-coded; derived
grids (NF4, learned pair partners) are constructed by their documented
procedures and cached as JSON golden files under the package data
directory, overridable via the GRIDFORGE_DATA environment variable.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import DegenerateGridError, SnapCollapseWarning, UnknownGridError
from .formats import LowBitFormat, round_to_format

__all__ = [
    "Grid",
    "GridFamily",
    "MIN_MSE",
    "SIGN_OF_MAX",
    "builtin_grid",
    "builtin_names",
    "nf4_construct",
    "snap_to_format",
    "positive_half",
    "mirror_half",
    "grid_to_json",
    "grid_from_json",
    "family_to_json",
    "family_from_json",
    "load_grid_file",
    "save_grid_file",
    "data_dir",
]

MIN_MSE = "min_mse"
SIGN_OF_MAX = "sign_of_max"


@dataclass(frozen=True)
class Grid:
    """One codebook of normalized levels.

    raw_max records the lattice maximum in raw (pre-normalization) units:
    6.0 for E2M1-derived tables, 7.5 for the INT4 table, 1.0 for learned
    and quantile grids whose stored scale is the block absmax itself.
    It drives divisor and scale-format semantics in the quantizer.
    """

    points: tuple
    name: str = ""
    half: bool = False
    raw_max: float = 1.0
    fmt: str | None = None

    def __post_init__(self):
        pts = tuple(float(p) for p in self.points)
        if len(pts) < 2:
            raise DegenerateGridError(f"grid {self.name!r}: fewer than 2 levels")
        if any(not math.isfinite(p) for p in pts):
            raise DegenerateGridError(f"grid {self.name!r}: non-finite level")
        if any(a >= b for a, b in zip(pts, pts[1:])):
            raise DegenerateGridError(
                f"grid {self.name!r}: levels must be strictly increasing"
            )
        if self.half and pts[0] < 0:
            raise DegenerateGridError(f"half grid {self.name!r} has negative level")
        object.__setattr__(self, "points", pts)

    @property
    def levels(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class GridFamily:
    """Ordered set of 1-3 grids plus the per-block selector policy."""

    grids: tuple
    selector: str = MIN_MSE
    shift_offsets: tuple | None = None
    name: str = ""

    def __post_init__(self):
        gs = tuple(self.grids)
        if not 1 <= len(gs) <= 3:
            raise DegenerateGridError("family must hold 1-3 grids")
        if self.selector not in (MIN_MSE, SIGN_OF_MAX):
            raise DegenerateGridError(f"unknown selector {self.selector!r}")
        if self.selector == SIGN_OF_MAX:
            if len(gs) != 2:
                raise DegenerateGridError("sign selector requires exactly 2 grids")
            a = gs[0].levels
            b = gs[1].levels
            if len(a) != len(b) or not np.allclose(a, -b[::-1], atol=1e-12):
                raise DegenerateGridError("sign selector grids must be negations")
        if self.shift_offsets is not None:
            offs = tuple(float(o) for o in self.shift_offsets)
            if len(offs) != len(gs):
                raise DegenerateGridError("one shift offset per grid required")
            object.__setattr__(self, "shift_offsets", offs)
        object.__setattr__(self, "grids", gs)

    def __len__(self) -> int:
        return len(self.grids)


# ── published tables ─────────────────────────────────────────────

_E2M1_LEVELS = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0)

# Asymmetric learned grid: 8 negative, zero, 7 positive levels.
_SPLIT87 = (
    -1.0, -0.8125, -0.625, -0.46875, -0.34375, -0.234375, -0.140625,
    -0.0546875, 0.0, 0.0625, 0.171875, 0.28125, 0.40625, 0.5625, 0.75, 1.0,
)

# Jointly learned pair, FP8-snapped.
_MPO2_B1 = (
    -1.0, -0.8125, -0.625, -0.5, -0.375, -0.28125, -0.171875, -0.0703125,
    0.015625, 0.109375, 0.21875, 0.34375, 0.46875, 0.625, 0.75, 1.0,
)
_MPO2_B2 = (
    -1.0, -0.75, -0.5625, -0.4375, -0.3125, -0.203125, -0.109375, -0.015625,
    0.0703125, 0.171875, 0.28125, 0.40625, 0.5, 0.6875, 0.875, 1.0,
)

SFP4_SHIFT_C = 0.5  # grid-center shift in E2M1 scale units


def _int4_grid() -> Grid:
    # symmetric integer lattice {-8..7}, absmax mapped to 7.5: both extremes
    # sit one half-step off the lattice, splitting the endpoint error evenly
    pts = tuple(k / 7.5 for k in range(-8, 8))
    return Grid(pts, name="int4", raw_max=7.5)


def _nvfp4_grid() -> Grid:
    pos = [v / 6.0 for v in _E2M1_LEVELS]
    pts = tuple(sorted(set([-v for v in pos] + pos)))
    return Grid(pts, name="nvfp4", raw_max=6.0, fmt="E2M1")


def nf4_construct() -> Grid:
    """Quantile-derived 16-level grid for Normal data.

    Evenly spaced quantile midpoints of N(0,1), 8 on the positive side and
    7 on the negative, plus an exact zero, normalized to max magnitude 1.
    """
    offset = 1 - 0.5 * (1 / 30 + 1 / 32)
    pos = norm.ppf(np.linspace(offset, 0.5, 9))[:-1]
    neg = -norm.ppf(np.linspace(offset, 0.5, 8))[:-1]
    v = np.sort(np.concatenate([neg, [0.0], pos]))
    v = v / np.abs(v).max()
    return Grid(tuple(v), name="nf4")


def snap_to_format(g: Grid, fmt: LowBitFormat) -> Grid:
    """Replace each level by its nearest representable value.

    Ties round to even mantissa. Collapsed duplicates are reported via
    SnapCollapseWarning (the returned grid keeps the reduced level count);
    a collapse below 2 distinct levels raises DegenerateGridError.
    """
    snapped = round_to_format(g.levels, fmt)
    uniq = np.unique(snapped)
    if len(uniq) < 2:
        raise DegenerateGridError(
            f"snapping {g.name!r} to {fmt.kind} left {len(uniq)} level(s)"
        )
    if len(uniq) < len(g):
        warnings.warn(
            f"snapping {g.name!r} to {fmt.kind} collapsed "
            f"{len(g) - len(uniq)} duplicate level(s)",
            SnapCollapseWarning,
            stacklevel=2,
        )
    return Grid(
        tuple(uniq),
        name=f"{g.name}_{fmt.kind.lower()}" if g.name else fmt.kind.lower(),
        half=g.half,
        raw_max=g.raw_max,
        fmt=fmt.kind,
    )


def positive_half(g: Grid, renormalize: bool = True) -> Grid:
    """Nonnegative levels of a signed grid as a half grid.

    With renormalize the top level is rescaled to exactly 1, giving the
    theory-facing representation 0 = b_0 <= ... <= b_k = 1.
    """
    pts = np.asarray([p for p in g.points if p >= 0.0])
    if renormalize and pts[-1] != 1.0:
        pts = pts / pts[-1]
    return Grid(tuple(pts), name=f"{g.name}_half", half=True)


def mirror_half(g: Grid) -> Grid:
    """Signed grid obtained by mirroring a half grid about zero."""
    pos = [p for p in g.points if p > 0]
    pts = tuple(sorted([-p for p in pos] + list(g.points)))
    return Grid(pts, name=f"{g.name}_full")


# ── JSON serialization ───────────────────────────────────────────


def grid_to_json(g: Grid) -> dict:
    return {
        "name": g.name,
        "format": g.fmt,
        "points": list(g.points),
        "half": g.half,
        "raw_max": g.raw_max,
    }


def grid_from_json(doc: dict) -> Grid:
    return Grid(
        tuple(doc["points"]),
        name=doc.get("name", ""),
        half=doc.get("half", False),
        raw_max=doc.get("raw_max", 1.0),
        fmt=doc.get("format"),
    )


def family_to_json(fam: GridFamily) -> dict:
    doc = {
        "name": fam.name,
        "selector": fam.selector,
        "grids": [grid_to_json(g) for g in fam.grids],
    }
    if fam.shift_offsets is not None:
        doc["shift_offsets"] = list(fam.shift_offsets)
    return doc


def family_from_json(doc: dict) -> GridFamily:
    return GridFamily(
        tuple(grid_from_json(d) for d in doc["grids"]),
        selector=doc.get("selector", MIN_MSE),
        shift_offsets=tuple(doc["shift_offsets"]) if "shift_offsets" in doc else None,
        name=doc.get("name", ""),
    )


def save_grid_file(path, obj) -> None:
    doc = family_to_json(obj) if isinstance(obj, GridFamily) else grid_to_json(obj)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_grid_file(path):
    doc = json.loads(Path(path).read_text())
    if "grids" in doc:
        return family_from_json(doc)
    return grid_from_json(doc)


def data_dir() -> Path:
    override = os.environ.get("GRIDFORGE_DATA")
    if override:
        return Path(override)
    return Path(__file__).parent / "data" / "grids"


def _load_golden(stem: str):
    path = data_dir() / f"{stem}.json"
    if not path.exists():
        raise UnknownGridError(
            f"golden grid file {path} is missing; run scripts/gen_golden_grids.py"
        )
    return load_grid_file(path)


# ── built-in registry ────────────────────────────────────────────


def _if4_family() -> GridFamily:
    return GridFamily((_int4_grid(), _nvfp4_grid()), MIN_MSE, name="if4")


def _mpo2_family() -> GridFamily:
    return GridFamily(
        (
            Grid(_MPO2_B1, name="mpo2_b1", fmt="E4M3"),
            Grid(_MPO2_B2, name="mpo2_b2", fmt="E4M3"),
        ),
        MIN_MSE,
        name="mpo2",
    )


def _sfp4_family() -> GridFamily:
    base = _nvfp4_grid()
    c = SFP4_SHIFT_C / 6.0  # normalized-grid units
    return GridFamily(
        (base, base, base),
        MIN_MSE,
        shift_offsets=(0.0, +c, -c),
        name="sfp4",
    )


def _po2_family(primary: Grid, partner_stem: str, name: str) -> GridFamily:
    partner = _load_golden(partner_stem)
    return GridFamily((primary, partner), MIN_MSE, name=name)


_BUILTINS = {
    "INT4": _int4_grid,
    "FP4": _nvfp4_grid,
    "NVFP4": _nvfp4_grid,
    "NF4": nf4_construct,
    "SPLIT87": lambda: Grid(_SPLIT87, name="split87", fmt="E4M3"),
    "MPO2": _mpo2_family,
    "IF4": _if4_family,
    "SFP4": _sfp4_family,
    "BOF4S": lambda: _load_golden("bof4s_normal"),
    "PO2NF4": lambda: _po2_family(
        _load_golden("nf4_e4m3"), "po2_nf4_partner", "po2_nf4"
    ),
    "PO2SPLIT87": lambda: _po2_family(
        Grid(_SPLIT87, name="split87", fmt="E4M3"), "po2_split87_partner",
        "po2_split87",
    ),
}


def _canon(name: str) -> str:
    return "".join(ch for ch in name.upper() if ch.isalnum())


def builtin_names() -> list:
    names = ["INT4", "FP4", "NVFP4", "NF4", "Split87", "MPO2", "BOF4S",
             "IF4", "PO2_NF4", "PO2_Split87", "SFP4"]
    return names


def builtin_grid(name: str):
    """Built-in grid or grid family by name (case-insensitive).

    Published tables return exact values; derived tables (NF4, learned
    partners) come from the documented construction or the golden files.
    """
    key = _canon(name)
    try:
        factory = _BUILTINS[key]
    except KeyError:
        raise UnknownGridError(
            f"unknown grid {name!r}; known: {', '.join(builtin_names())}"
        ) from None
    return factory()
