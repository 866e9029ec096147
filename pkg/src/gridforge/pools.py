"""Block-pool ingestion: raw tensor files, manifests, and pooled sampling.

A pool is an immutable (n, g) array of blocks with a per-block absmax
cache and a provenance tag per block.  Pools are built either directly
from arrays, from raw little-endian float files, or from a JSON manifest
that mixes several tagged sources under a balance ratio -- the plumbing
behind "pooled weight and activation groups".
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import (
    InputError,
    InsufficientDataError,
    ParameterError,
    ShapeError,
)

__all__ = [
    "BlockPool",
    "PoolSource",
    "PoolManifest",
    "load_raw_tensor",
    "build_pool",
    "manifest_from_json",
    "manifest_to_json",
    "load_manifest",
]

logger = logging.getLogger(__name__)

POOL_TAGS = ("weight", "activation", "synthetic")
_DTYPES = {"f32le": "<f4", "f64le": "<f8"}


# ── pool container ──


@dataclass(frozen=True, eq=False)
class BlockPool:
    """Contiguous (n, g) blocks + absmax cache + per-block provenance."""

    blocks: np.ndarray
    absmax: np.ndarray = None
    tags: object = "synthetic"

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.blocks, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ShapeError(f"expected a nonempty (n, g) array, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise InputError("pool contains non-finite values")
        cache = np.abs(arr).max(axis=1)
        if self.absmax is not None and not np.array_equal(
            np.asarray(self.absmax, dtype=np.float64), cache
        ):
            raise InputError("absmax cache disagrees with block values")
        tags = self.tags
        if isinstance(tags, str):
            names, codes = (tags,), np.zeros(arr.shape[0], dtype=np.uint8)
        else:
            tag_arr = np.asarray(tags)
            if tag_arr.shape != (arr.shape[0],):
                raise ShapeError("tags must be one string or one per block")
            names, codes = np.unique(tag_arr, return_inverse=True)
            names = tuple(str(t) for t in names)
            codes = codes.astype(np.uint8)
        unknown = set(names) - set(POOL_TAGS)
        if unknown:
            raise ParameterError(f"unknown provenance tags {sorted(unknown)}")
        arr.setflags(write=False)
        cache.setflags(write=False)
        codes.setflags(write=False)
        object.__setattr__(self, "blocks", arr)
        object.__setattr__(self, "absmax", cache)
        object.__setattr__(self, "tags", names)
        object.__setattr__(self, "_tag_codes", codes)

    def __len__(self) -> int:
        return self.blocks.shape[0]

    @property
    def g(self) -> int:
        return self.blocks.shape[1]

    @property
    def tag_per_block(self) -> np.ndarray:
        return np.asarray(self.tags)[self._tag_codes]

    def tag_counts(self) -> dict:
        counts = np.bincount(self._tag_codes, minlength=len(self.tags))
        return {t: int(c) for t, c in zip(self.tags, counts)}

    def audit(self) -> dict:
        """Header-style pool statistics; rebuilt pools reproduce these exactly."""
        return {
            "n_blocks": len(self),
            "g": self.g,
            "tag_counts": self.tag_counts(),
            "mean_absmax": float(self.absmax.mean()),
        }


# ── raw tensor files ──


def load_raw_tensor(path, dtype: str = "f32le", g: int = 16, tag: str = "weight") -> BlockPool:
    """Consecutive g-element blocks from a raw little-endian float file.

    A trailing partial block is dropped with a warning; any non-finite
    value is an error, reported with its element and byte offset.
    """
    if dtype not in _DTYPES:
        raise ParameterError(f"dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    if g < 1:
        raise ParameterError(f"block size must be >= 1, got {g}")
    np_dtype = np.dtype(_DTYPES[dtype])
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) % np_dtype.itemsize:
        raise InputError(
            f"{path}: file length {len(raw)} is not a multiple of the "
            f"{np_dtype.itemsize}-byte element size"
        )
    data = np.frombuffer(raw, dtype=np_dtype).astype(np.float64)
    bad = np.nonzero(~np.isfinite(data))[0]
    if bad.size:
        i = int(bad[0])
        raise InputError(
            f"{path}: non-finite value at element {i} (byte offset {i * np_dtype.itemsize})"
        )
    n_full, rem = divmod(data.size, g)
    if n_full == 0:
        raise InsufficientDataError(f"{path}: no full {g}-element block")
    if rem:
        logger.warning("%s: dropping trailing partial block of %d values", path, rem)
        data = data[: n_full * g]
    return BlockPool(blocks=data.reshape(n_full, g), tags=tag)


# ── manifests ──


@dataclass(frozen=True)
class PoolSource:
    path: str
    tag: str
    count: int
    dtype: str = "f32le"

    def __post_init__(self) -> None:
        if self.tag not in POOL_TAGS:
            raise ParameterError(f"tag must be one of {POOL_TAGS}, got {self.tag!r}")
        if self.count < 1:
            raise ParameterError(f"source count must be positive, got {self.count}")
        if self.dtype not in _DTYPES:
            raise ParameterError(f"dtype must be one of {sorted(_DTYPES)}")


@dataclass(frozen=True)
class PoolManifest:
    sources: tuple
    g: int
    balance: tuple = None

    def __post_init__(self) -> None:
        srcs = tuple(self.sources)
        if not srcs:
            raise ParameterError("manifest needs at least one source")
        if self.g < 1:
            raise ParameterError(f"block size must be >= 1, got {self.g}")
        if self.balance is not None:
            bal = tuple(int(b) for b in self.balance)
            if any(b < 1 for b in bal):
                raise ParameterError("balance ratio entries must be positive")
            object.__setattr__(self, "balance", bal)
        object.__setattr__(self, "sources", srcs)

    def ordered_tags(self) -> tuple:
        seen = []
        for s in self.sources:
            if s.tag not in seen:
                seen.append(s.tag)
        return tuple(seen)


_MANIFEST_KEYS = {"sources", "g", "balance"}
_SOURCE_KEYS = {"path", "tag", "count", "dtype"}


def manifest_from_json(doc: dict) -> PoolManifest:
    unknown = set(doc) - _MANIFEST_KEYS
    if unknown:
        raise ParameterError(f"unknown manifest keys {sorted(unknown)}")
    if "sources" not in doc or "g" not in doc:
        raise ParameterError("manifest requires 'sources' and 'g'")
    sources = []
    for s in doc["sources"]:
        unknown = set(s) - _SOURCE_KEYS
        if unknown:
            raise ParameterError(f"unknown source keys {sorted(unknown)}")
        sources.append(PoolSource(**s))
    balance = doc.get("balance")
    return PoolManifest(
        sources=tuple(sources),
        g=int(doc["g"]),
        balance=tuple(balance) if balance is not None else None,
    )


def manifest_to_json(m: PoolManifest) -> dict:
    return {
        "g": m.g,
        "balance": list(m.balance) if m.balance is not None else None,
        "sources": [
            {"path": s.path, "tag": s.tag, "count": s.count, "dtype": s.dtype}
            for s in m.sources
        ],
    }


def load_manifest(path) -> PoolManifest:
    with open(path, "r", encoding="utf-8") as f:
        return manifest_from_json(json.load(f))


# ── pooled sampling ──


def build_pool(manifest: PoolManifest, seed: int = 0) -> BlockPool:
    """Subsample each source without replacement, interleave per the
    balance ratio, then shuffle.  A source shorter than its count, or tag
    totals that cannot honor the ratio, are errors -- never silent
    truncation."""
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(len(manifest.sources) + 1)

    picked = {}  # tag -> list of block arrays
    for src, child in zip(manifest.sources, children):
        pool = load_raw_tensor(src.path, src.dtype, manifest.g, src.tag)
        if len(pool) < src.count:
            raise InsufficientDataError(
                f"{src.path}: wanted {src.count} blocks, file has {len(pool)}"
            )
        rng = np.random.default_rng(child)
        idx = rng.choice(len(pool), size=src.count, replace=False)
        picked.setdefault(src.tag, []).append(pool.blocks[np.sort(idx)])

    tags_in_order = manifest.ordered_tags()
    per_tag = {t: np.concatenate(picked[t], axis=0) for t in tags_in_order}

    if manifest.balance is not None:
        bal = manifest.balance
        if len(bal) != len(tags_in_order):
            raise ParameterError(
                f"balance ratio has {len(bal)} entries for {len(tags_in_order)} tags"
            )
        totals = [per_tag[t].shape[0] for t in tags_in_order]
        cycles = {tot // r for tot, r in zip(totals, bal)}
        if len(cycles) != 1 or any(tot % r for tot, r in zip(totals, bal)):
            raise ParameterError(
                f"tag totals {dict(zip(tags_in_order, totals))} cannot honor "
                f"balance ratio {bal}"
            )
        n_cycles = cycles.pop()
        rows, tag_rows = [], []
        for c in range(n_cycles):
            for t, r in zip(tags_in_order, bal):
                rows.append(per_tag[t][c * r : (c + 1) * r])
                tag_rows.extend([t] * r)
        blocks = np.concatenate(rows, axis=0)
        tags = np.array(tag_rows)
    else:
        blocks = np.concatenate([per_tag[t] for t in tags_in_order], axis=0)
        tags = np.concatenate(
            [np.full(per_tag[t].shape[0], t) for t in tags_in_order]
        )

    rng = np.random.default_rng(children[-1])
    perm = rng.permutation(blocks.shape[0])
    return BlockPool(blocks=blocks[perm], tags=tags[perm])
