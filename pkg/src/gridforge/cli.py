"""Command-line driver for grid benchmarks, learning, and experiments.

Exit codes: 0 full success; 2 usage errors (unknown family, bad sample
counts, missing files); 3 learning finished without convergence (the
grids are still written).  Every command draws all of its randomness
from one --seed via spawned child sequences, and any multi-threaded
reduction runs over fixed-size chunks combined in deterministic order,
so a repeated invocation yields byte-identical reports.
"""

from __future__ import annotations

import functools
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import click
import numpy as np

from .errors import GridforgeError, ParameterError, UnknownGridError
from .formats import FORMATS
from .grids import (
    Grid,
    GridFamily,
    builtin_grid,
    builtin_names,
    family_to_json,
    grid_to_json,
    load_grid_file,
    save_grid_file,
    snap_to_format,
)
from .learn import (
    TrainConfig,
    WEIGHT_MSQUARED,
    WEIGHT_UNIFORM,
    learn_bof4s,
    learn_residual_pair,
    learn_split87,
    lloyd_fit,
)
from .pools import build_pool, load_manifest, load_raw_tensor
from .quant import dequantize_block, pool_losses, quantize_block
from .reports import ReportRow, learn_report_to_json, rows_to_csv, write_json
from .sfp4 import (
    read_sfp4,
    sfp4_decode_tensor,
    sfp4_encode_tensor,
    sfp4_matmul_paths,
    write_sfp4,
)
from .stats import (
    DistributionSpec,
    asymptotic_gap,
    competitive_analysis,
    concavity_check,
    estimate_risk,
    fit_student_t,
    sample_pool,
)

_CHUNK = 8192
_BENCH_TRAIN_BLOCKS = 30000  # training pool for freshly learned bench grids


def _friendly(fn):
    """Map library errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ParameterError, UnknownGridError, FileNotFoundError) as e:
            raise click.UsageError(str(e)) from e
        except GridforgeError as e:
            raise click.ClickException(str(e)) from e

    return wrapper


def _resolve_family(name: str):
    """Built-in name first, then a grid JSON file path."""
    try:
        return builtin_grid(name)
    except UnknownGridError:
        pass
    if name.endswith(".json"):
        return load_grid_file(name)
    raise ParameterError(f"unknown family {name!r} (not a built-in or .json path)")


def _parse_pool_spec(spec: str):
    """dist:gN:scalars, e.g. normal:g16:500000."""
    parts = spec.split(":")
    if len(parts) != 3 or not parts[1].startswith("g"):
        raise ParameterError(f"pool spec must look like normal:g16:500000, got {spec!r}")
    dist = DistributionSpec.parse(parts[0])
    g = int(parts[1][1:])
    scalars = int(parts[2])
    if scalars < g:
        raise ParameterError(f"pool spec asks for fewer than one block: {spec!r}")
    return dist, g, scalars // g


def _chunked_risk(blocks: np.ndarray, fam, threads: int):
    """Mean/stderr of per-block losses via fixed chunks reduced in order;
    the arithmetic is identical for every thread count."""
    chunks = [blocks[i : i + _CHUNK] for i in range(0, len(blocks), _CHUNK)]

    def one(chunk):
        losses = pool_losses(chunk, fam)
        return float(losses.sum()), float((losses * losses).sum()), losses.size

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(one, chunks))
    else:
        parts = [one(c) for c in chunks]
    n = sum(p[2] for p in parts)
    total = sum(p[0] for p in parts)
    sq = sum(p[1] for p in parts)
    mean = total / n
    var = max(sq - n * mean * mean, 0.0) / (n - 1) if n > 1 else 0.0
    return mean, (var / n) ** 0.5, n


def _write_or_echo_csv(rows, out):
    text = rows_to_csv(rows)
    if out:
        with open(out, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


@click.group()
@click.version_option(package_name="gridforge")
def main() -> None:
    """Blockwise low-bit quantization grids: benchmarks and experiments."""


# ── bench-mse ──


@main.command("bench-mse")
@click.option("--families", default="INT4,FP4,NF4,IF4,BOF4S,SFP4,MPO2",
              show_default=True, help="Comma list of built-ins or grid JSON paths.")
@click.option("--dists", default="normal,t5,t7,t10", show_default=True)
@click.option("--g", default=16, show_default=True)
@click.option("--samples", default=2_000_000, show_default=True,
              help="Scalar samples per distribution (blocks = samples // g).")
@click.option("--seed", default=0, show_default=True)
@click.option("--threads", default=1, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="CSV path (stdout if omitted).")
@_friendly
def bench_mse(families, dists, g, samples, seed, threads, out) -> None:
    """Monte-Carlo distributional MSE per (family x distribution) cell.

    BOF4S is learned fresh on a Normal training pool before evaluation;
    every other family uses its fixed (built-in or file) grids.
    """
    if samples < g:
        raise ParameterError(f"--samples {samples} yields no full block at g={g}")
    if threads < 1:
        raise ParameterError("--threads must be >= 1")
    fam_names = [f.strip() for f in families.split(",") if f.strip()]
    dist_specs = [DistributionSpec.parse(d) for d in dists.split(",") if d.strip()]
    if not fam_names or not dist_specs:
        raise ParameterError("need at least one family and one distribution")

    train_seed, *dist_seeds = np.random.SeedSequence(seed).spawn(1 + len(dist_specs))
    fams = {}
    for name in fam_names:
        if name.upper() == "BOF4S":
            train = sample_pool(DistributionSpec("normal"), g, _BENCH_TRAIN_BLOCKS,
                                train_seed)
            fams[name], _ = learn_bof4s(train, TrainConfig(seed=seed))
        else:
            fams[name] = _resolve_family(name)

    rows = []
    for spec, child in zip(dist_specs, dist_seeds):
        pool = sample_pool(spec, g, samples // g, child)
        for name in fam_names:
            mse, stderr, n_blocks = _chunked_risk(pool.blocks, fams[name], threads)
            rows.append(ReportRow("bench-mse", name, spec.name, g, n_blocks, mse, stderr))
            click.echo(f"{spec.name:<10} {name:<12} mse = {mse * 1e3:7.3f} x1e-3",
                       err=True)
    _write_or_echo_csv(rows, out)


# ── learn ──


@main.command("learn")
@click.option("--mode", type=click.Choice(["lloyd", "po2", "mpo2", "split87", "bof4s"]),
              required=True)
@click.option("--primary", default=None,
              help="Primary grid (built-in or JSON) for po2; optional init for mpo2.")
@click.option("--pool", "pool_spec", default=None, help="Synthetic pool, e.g. normal:g16:500000.")
@click.option("--manifest", type=click.Path(), default=None, help="Pool manifest JSON.")
@click.option("--k", default=16, show_default=True, help="Levels for lloyd/bof4s.")
@click.option("--snap", type=click.Choice(["none", "E4M3", "E3M2"]), default="none",
              show_default=True)
@click.option("--max-iters", default=200, show_default=True)
@click.option("--rel-tol", default=1e-7, show_default=True)
@click.option("--weight-mode", type=click.Choice([WEIGHT_MSQUARED, WEIGHT_UNIFORM]),
              default=WEIGHT_MSQUARED, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), default="grids.json", show_default=True)
@click.option("--report", "report_path", type=click.Path(), default=None)
@_friendly
def learn(mode, primary, pool_spec, manifest, k, snap, max_iters, rel_tol,
          weight_mode, seed, out, report_path) -> None:
    """Fit a grid or grid pair and write it as JSON.

    Exits 3 when the objective was still improving at --max-iters; the
    grids are written either way.
    """
    if (pool_spec is None) == (manifest is None):
        raise ParameterError("give exactly one of --pool or --manifest")
    if pool_spec is not None:
        dist, g, n_blocks = _parse_pool_spec(pool_spec)
        pool = sample_pool(dist, g, n_blocks, seed)
    else:
        pool = build_pool(load_manifest(manifest), seed=seed)

    cfg = TrainConfig(max_iters=max_iters, rel_tol=rel_tol, seed=seed,
                      weight_mode=weight_mode)
    fmt = FORMATS[snap] if snap != "none" else None

    if mode == "po2":
        if primary is None:
            raise ParameterError("--mode po2 requires --primary")
        base = _resolve_family(primary)
        if isinstance(base, GridFamily):
            raise ParameterError("--primary must name a single grid, not a family")
        result, rep = learn_residual_pair(base, True, pool, cfg, snap=fmt)
    elif mode == "mpo2":
        if primary is not None:
            base = _resolve_family(primary)
        else:
            base, _ = lloyd_fit(pool, k, cfg)
        result, rep = learn_residual_pair(base, False, pool, cfg, snap=fmt)
    elif mode == "split87":
        result, rep = learn_split87(pool, cfg)
        if fmt is not None:
            result = snap_to_format(result, fmt)
    elif mode == "bof4s":
        result, rep = learn_bof4s(pool, cfg, k_levels=k)
    else:
        result, rep = lloyd_fit(pool, k, cfg)
        if fmt is not None:
            result = snap_to_format(result, fmt)

    save_grid_file(out, result)
    click.echo(f"wrote {out} (converged={rep.converged}, "
               f"final objective {rep.objective_trace[-1]:.6e})")
    if report_path:
        grids = result.grids if isinstance(result, GridFamily) else (result,)
        write_json(report_path, learn_report_to_json(rep, grids))
        click.echo(f"wrote {report_path}")
    if not rep.converged:
        sys.exit(3)


# ── quantize ──


@main.command("quantize")
@click.option("--input", "in_path", type=click.Path(), required=True,
              help="Raw little-endian float tensor.")
@click.option("--dtype", type=click.Choice(["f32le", "f64le"]), default="f32le",
              show_default=True)
@click.option("--g", default=16, show_default=True)
@click.option("--family", default="NVFP4", show_default=True)
@click.option("--scale-format", type=click.Choice(["none", "E4M3", "E3M3u"]),
              default="none", show_default=True)
@click.option("--divisors", default=None,
              help="Comma list for scale search, e.g. 4,4.5,5,5.5,6.")
@click.option("--out", type=click.Path(), default=None, help="Reconstructed raw output.")
@click.option("--stats", "stats_path", type=click.Path(), default=None)
@_friendly
def quantize(in_path, dtype, g, family, scale_format, divisors, out, stats_path) -> None:
    """Quantize+dequantize a tensor blockwise and report the loss."""
    fam = _resolve_family(family)
    pool = load_raw_tensor(in_path, dtype, g=g, tag="weight")
    divs = [float(d) for d in divisors.split(",")] if divisors else None
    fmt = FORMATS[scale_format] if scale_format != "none" else None

    recon = np.empty_like(pool.blocks)
    total = 0.0
    for i, block in enumerate(pool.blocks):
        qb, loss = quantize_block(block, fam, scale_divisors=divs, scale_format=fmt)
        recon[i] = dequantize_block(qb, fam)
        total += loss.mse
    mse = total / len(pool)
    click.echo(f"{len(pool)} blocks at g={g}: mean mse = {mse:.6e}")

    if out:
        recon.astype("<f4" if dtype == "f32le" else "<f8").tofile(out)
        click.echo(f"wrote {out}")
    if stats_path:
        write_json(stats_path, {"n_blocks": len(pool), "g": g, "family": family,
                                "mse_mean": mse})
        click.echo(f"wrote {stats_path}")


# ── experiments ──


@main.command("competitive")
@click.option("--family", default="IF4", show_default=True)
@click.option("--dist", default="normal", show_default=True)
@click.option("--g", default=16, show_default=True)
@click.option("--train-blocks", default=30000, show_default=True)
@click.option("--val-blocks", default=60000, show_default=True)
@click.option("--tau-points", default=25, show_default=True)
@click.option("--weight-mode", type=click.Choice([WEIGHT_UNIFORM, WEIGHT_MSQUARED]),
              default=WEIGHT_UNIFORM, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="JSON report path.")
@_friendly
def competitive(family, dist, g, train_blocks, val_blocks, tau_points, weight_mode,
                seed, out) -> None:
    """Spiky/flat competitive factor beta for a two-grid family."""
    fam = _resolve_family(family)
    spec = DistributionSpec.parse(dist)
    rep = competitive_analysis(
        spec, g, fam, tau_grid=np.linspace(0.20, 0.80, tau_points),
        n_train=train_blocks, n_val=val_blocks, seed=seed, weight_mode=weight_mode,
    )
    click.echo(
        f"beta = {rep.beta:.4f} at tau = {rep.tau:.3f} "
        f"(alpha_S {rep.alpha_S:.4f}, alpha_F {rep.alpha_F:.4f}, "
        f"p_spiky {rep.p_spiky:.3f})"
    )
    if out:
        write_json(out, {
            "family": family, "distribution": spec.name, "g": g,
            "tau": rep.tau, "p_spiky": rep.p_spiky, "alpha_S": rep.alpha_S,
            "alpha_F": rep.alpha_F, "beta": rep.beta,
            "designation": rep.designation,
            "sweep": [list(row) for row in rep.sweep],
        })
        click.echo(f"wrote {out}")


@main.command("asymptotic")
@click.option("--dist", default="uniform", show_default=True)
@click.option("--g", "g_csv", default="4,16,64,256", show_default=True)
@click.option("--budget", default=2**21, show_default=True,
              help="Scalar samples per block size.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="CSV path.")
@_friendly
def asymptotic(dist, g_csv, budget, seed, out) -> None:
    """Best-single vs best-pair risk gap as the block size grows."""
    spec = DistributionSpec.parse(dist)
    g_list = [int(v) for v in g_csv.split(",") if v.strip()]
    seq = asymptotic_gap(spec, g_list, budget=budget, seed=seed)
    rows = []
    for g, gap, se in seq:
        click.echo(f"g={g:<5d} gap = {gap:.4e} (stderr {se:.1e})")
        rows.append(ReportRow("asymptotic", "single_minus_pair", spec.name, g,
                              max(budget // g, 2), gap, se))
    if out:
        _write_or_echo_csv(rows, out)


@main.command("concavity")
@click.option("--dist-s", default="t5", show_default=True, help="Spiky-class law.")
@click.option("--dist-f", default="normal", show_default=True, help="Flat-class law.")
@click.option("--g", default=16, show_default=True)
@click.option("--blocks", default=4000, show_default=True, help="Blocks per class.")
@click.option("--p-grid", default="0,0.25,0.5,0.75,1", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="CSV path.")
@_friendly
def concavity(dist_s, dist_f, g, blocks, p_grid, seed, out) -> None:
    """Midpoint-concavity check of the mixture value function V(p)."""
    spec_s = DistributionSpec.parse(dist_s)
    spec_f = DistributionSpec.parse(dist_f)
    s_seed, f_seed = np.random.SeedSequence(seed).spawn(2)
    pool_s = sample_pool(spec_s, g, blocks, s_seed)
    pool_f = sample_pool(spec_f, g, blocks, f_seed)
    ps = [float(p) for p in p_grid.split(",") if p.strip()]
    ok, table = concavity_check(pool_s, pool_f, p_grid=ps)

    rows = []
    for p, v, se in table:
        click.echo(f"p={p:<5g} V = {v:.6e} (stderr {se:.1e})")
        rows.append(ReportRow("concavity", "lloyd16",
                              f"{spec_s.name}+{spec_f.name}@p={p:g}", g,
                              2 * blocks, v, se))
    if out:
        _write_or_echo_csv(rows, out)
    click.echo(f"midpoint concavity: {'PASS' if ok else 'FAIL'}")
    if not ok:
        sys.exit(1)


@main.command("tfit")
@click.option("--dist", default=None, help="Synthetic source, e.g. t7.")
@click.option("--samples", default=1_000_000, show_default=True)
@click.option("--input", "in_path", type=click.Path(), default=None,
              help="Raw float file to fit instead of synthetic samples.")
@click.option("--dtype", type=click.Choice(["f32le", "f64le"]), default="f32le",
              show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="JSON path.")
@_friendly
def tfit(dist, samples, in_path, dtype, seed, out) -> None:
    """Profile-likelihood Student-t tail-index fit."""
    if (dist is None) == (in_path is None):
        raise ParameterError("give exactly one of --dist or --input")
    if dist is not None:
        spec = DistributionSpec.parse(dist)
        x = sample_pool(spec, 1, samples, seed).blocks.ravel()
        source = spec.name
    else:
        x = load_raw_tensor(in_path, dtype, g=1, tag="weight").blocks.ravel()
        source = in_path
    fit = fit_student_t(x)
    if fit.at_bound:
        click.echo(f"nu_hat >= {fit.nu:g} (grid bound; tails consistent with Normal)")
    else:
        click.echo(f"nu_hat = {fit.nu:.3f} (loglik {fit.loglik:.1f})")
    if out:
        write_json(out, {"source": source, "n": int(x.size), "nu": fit.nu,
                         "loglik": fit.loglik, "at_bound": fit.at_bound})
        click.echo(f"wrote {out}")


# ── sfp4 ──


@main.group()
def sfp4() -> None:
    """Shifted-grid FP4 encode/decode and the matmul decomposition check."""


@sfp4.command("encode")
@click.option("--input", "in_path", type=click.Path(), required=True)
@click.option("--dtype", type=click.Choice(["f32le", "f64le"]), default="f32le",
              show_default=True)
@click.option("--g", default=16, show_default=True)
@click.option("--shift-c", default=0.5, show_default=True)
@click.option("--divisors", default="6", show_default=True)
@click.option("--out", type=click.Path(), required=True)
@_friendly
def sfp4_encode_cmd(in_path, dtype, g, shift_c, divisors, out) -> None:
    """Encode a raw tensor into the packed SFP4 container."""
    pool = load_raw_tensor(in_path, dtype, g=g, tag="weight")
    divs = tuple(float(d) for d in divisors.split(","))
    enc = sfp4_encode_tensor(pool.blocks, g=g, shift_c=shift_c, divisors=divs)
    write_sfp4(out, enc)
    flat = [b for row in enc.blocks for b in row]
    sel = np.bincount([b.scale_byte >> 6 for b in flat], minlength=3)
    click.echo(f"encoded {len(flat)} blocks "
               f"(selector counts A={sel[0]} B+={sel[1]} B-={sel[2]}); wrote {out}")


@sfp4.command("decode")
@click.option("--input", "in_path", type=click.Path(), required=True)
@click.option("--dtype", type=click.Choice(["f32le", "f64le"]), default="f32le",
              show_default=True)
@click.option("--out", type=click.Path(), required=True)
@_friendly
def sfp4_decode_cmd(in_path, dtype, out) -> None:
    """Decode a packed SFP4 container back to a raw float tensor."""
    tensor = read_sfp4(in_path)
    dense = sfp4_decode_tensor(tensor)
    dense.astype("<f4" if dtype == "f32le" else "<f8").tofile(out)
    click.echo(f"decoded {dense.shape[0]}x{dense.shape[1]} values; wrote {out}")


@sfp4.command("matmul-check")
@click.option("--m", default=64, show_default=True)
@click.option("--n", default=128, show_default=True)
@click.option("--k", default=96, show_default=True)
@click.option("--g", default=16, show_default=True)
@click.option("--seed", default=1, show_default=True)
@_friendly
def sfp4_matmul_check(m, n, k, g, seed) -> None:
    """Dense-decode GEMM vs base-plus-correction decomposition."""
    if k % g:
        raise ParameterError(f"--k {k} must be a multiple of --g {g}")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((m, k))
    x = rng.standard_normal((k, n))
    enc = sfp4_encode_tensor(w, g=g)
    dense, decomposed = sfp4_matmul_paths(enc, x)
    rel = float(np.abs(dense - decomposed).max() / np.abs(dense).max())
    ok = rel <= 1e-10
    click.echo(f"max rel err = {rel:.3e} (tolerance 1e-10): {'PASS' if ok else 'FAIL'}")
    if not ok:
        sys.exit(1)


# ── grids ──


@main.group()
def grids() -> None:
    """Inspect and snap the built-in grid tables."""


@grids.command("list")
@_friendly
def grids_list() -> None:
    for name in builtin_names():
        click.echo(name)


@grids.command("show")
@click.argument("name")
@_friendly
def grids_show(name) -> None:
    obj = _resolve_family(name)
    doc = family_to_json(obj) if isinstance(obj, GridFamily) else grid_to_json(obj)
    click.echo(json.dumps(doc, indent=2))


@grids.command("snap")
@click.argument("name")
@click.option("--fmt", type=click.Choice(["E4M3", "E3M2", "E2M1"]), default="E4M3",
              show_default=True)
@click.option("--out", type=click.Path(), default=None)
@_friendly
def grids_snap(name, fmt, out) -> None:
    obj = _resolve_family(name)
    if isinstance(obj, GridFamily):
        raise ParameterError("snap operates on single grids; pick one member")
    snapped = snap_to_format(obj, FORMATS[fmt])
    click.echo(json.dumps(grid_to_json(snapped), indent=2))
    if out:
        save_grid_file(out, snapped)
        click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
