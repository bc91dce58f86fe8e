#!/usr/bin/env python3
"""
VFDM command-line entry point.
Dataset generation, training, mitigation, evaluation, rendering, single-scene
comparison and schedule inspection.

Run: python scripts/vfdm_cli.py gen --config pipeline_config.json
"""
import sys
import json
import logging
import argparse
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pandas as pd
import torch

from config.config import (
    EVAL_METHODS, SAMPLERS, archive_resolved_config, get_worker_count, load_run_config,
)
from scripts.errors import ConfigError, DatasetIOError, IntegrityError, VfdmError
from scripts.dataset_io import (
    dataset_inputs, generate_dataset, load_manifest, read_pair_file, read_pairs, read_single_pair, verify_pairs,
    write_single_pair,
)
from scripts.metrics import EvalRegion, evaluate, method_estimator, rmse, ssim, tre, write_reports
from scripts.render import render, render_panel
from scripts.signal_model import AntennaPattern, GridSpec, VisibilityGrid, inverse_bt, reconstruct_scene
from scripts.unet_backbone import load_checkpoint
from scripts.vfdm_diffusion import build_schedule, latest_checkpoint, mitigate, schedule_from_config, train

logger = logging.getLogger("vfdm")

DEFAULT_CONFIG = Path(__file__).parent.parent / "pipeline_config.json"


def _print_header(title):
    print(f"🚀 {title}")
    print("=" * 80)


def _config(args, overrides=None):
    """Resolved run config with command-line flags applied on top"""
    return load_run_config(getattr(args, "config", None), overrides)


def _pattern(cfg, grid):
    return AntennaPattern(grid, cfg.simulate.pattern, cfg.simulate.pattern_sigma)


def _data_dir(args, cfg):
    return Path(args.data or cfg.paths.data_dir)


def _run_inputs(args, *paths):
    """Files whose content hashes are archived with a run"""
    config = getattr(args, "config", None)
    return ([config] if config else []) + [str(p) for p in paths]


def _parse_ids(raw, manifest):
    if raw is None:
        return manifest.split["test"]
    ids = [int(x) for x in raw.split(",") if x.strip()]
    unknown = [i for i in ids if not 0 <= i < manifest.pair_count]
    if unknown:
        raise ConfigError(f"Pair ids not in the dataset: {unknown}")
    return ids


def _load_model(checkpoint, manifest=None, grid=None):
    """(model, schedule, meta) from a checkpoint, checked against the dataset"""
    if checkpoint is None:
        raise ConfigError("This command needs --checkpoint (or paths.checkpoint in the config)")
    path = Path(checkpoint)
    if path.is_dir():
        path = latest_checkpoint(path) or path
    expect = dict(manifest.grid) if manifest is not None else (grid.as_dict() if grid is not None else None)
    model, _, meta = load_checkpoint(path, expect_grid=expect)
    if manifest is not None and not np.isclose(meta["scale"], manifest.scale, rtol=1e-12, atol=0.0):
        raise ConfigError(f"Checkpoint scale {meta['scale']} does not match dataset scale {manifest.scale}")
    s = meta["schedule"]
    sched = build_schedule(s["steps"], s["bsq_min"], s["bsq_max"])
    model.eval()
    meta["path"] = str(path)
    return model, sched, meta


# ============================================================================
# Commands
# ============================================================================
def cmd_gen(args):
    cfg = _config(args, {"dataset.seed": args.seed, "dataset.pairs": args.pairs})
    out_dir = Path(args.out or cfg.dataset.output_dir)
    _print_header("VFDM Dataset Generation")
    print(f"\n📊 Simulating {cfg.dataset.pairs} pairs on a {cfg.grid.n}x{cfg.grid.n} grid (seed {cfg.dataset.seed})...")

    manifest = generate_dataset(cfg, out_dir, force=args.force, progress=not args.quiet)
    archive_resolved_config(cfg, out_dir, inputs=_run_inputs(args))
    print(f"✅ Wrote {len(manifest.shards)} shard(s) to {out_dir}")
    print(f"   Pairs: {manifest.pair_count}  (train {len(manifest.split['train'])} / test {len(manifest.split['test'])})")
    print(f"   Scale s: {manifest.scale:.6g}")
    for mode, count in manifest.mode_counts.items():
        print(f"   {mode:<12} {count}")

    if args.verify:
        rng = np.random.default_rng(manifest.master_seed)
        count = max(1, manifest.pair_count // 100)
        ids = sorted(int(i) for i in rng.choice(manifest.pair_count, size=count, replace=False))
        print(f"\n🔍 Regenerating RFI for {count} pair(s)...")
        failures = verify_pairs(load_manifest(out_dir), ids)
        if failures:
            raise IntegrityError(f"Stored dirty grids do not match their scenarios: {failures}")
        print("✅ Spot check passed")
    return 0


def cmd_train(args):
    cfg = _config(args, {"train.steps": args.steps, "train.seed": args.seed})
    manifest = load_manifest(_data_dir(args, cfg))
    run_dir = Path(args.out or Path(cfg.paths.runs_dir) / "train")
    _print_header("VFDM Training")
    print(f"\n📊 {len(manifest.split['train'])} training pairs, T = {cfg.diffusion.steps}, "
          f"{cfg.train.steps} steps, batch {cfg.train.batch_size}")

    _, _, loss = train(cfg, manifest, run_dir, resume=not args.fresh, progress=not args.quiet,
                       inputs=_run_inputs(args))
    ckpt = latest_checkpoint(run_dir)
    print(f"\n✅ Training complete")
    if loss is not None:
        print(f"   Final loss: {loss:.6f}")
    print(f"   Checkpoint: {ckpt}")
    print(f"   Loss log:   {run_dir / 'loss_log.csv'}")
    return 0


def cmd_mitigate(args):
    cfg = _config(args, {"diffusion.eta": args.eta, "diffusion.sampler": args.sampler,
                         "diffusion.sample_steps": args.sample_steps})
    out_dir = Path(args.out or Path(cfg.paths.runs_dir) / "mitigate")
    d = cfg.diffusion
    seed = 0 if args.seed is None else args.seed

    if args.input:
        grid = _grid(cfg)
        pairs = read_pair_file(args.input, grid)
        model, sched, meta = _load_model(args.checkpoint or cfg.paths.checkpoint, grid=grid)
        inputs = [args.input]
    else:
        manifest = load_manifest(_data_dir(args, cfg))
        pairs = list(read_pairs(manifest, _parse_ids(args.ids, manifest)))
        model, sched, meta = _load_model(args.checkpoint or cfg.paths.checkpoint, manifest)
        inputs = dataset_inputs(manifest)

    _print_header("VFDM Mitigation")
    print(f"\n📊 {len(pairs)} pair(s), T = {sched.T}, eta = {d.eta}, sampler = {d.sampler}, seed = {seed}")
    grid = pairs[0].clean.grid
    pattern = _pattern(cfg, grid)
    residuals = {}
    for pair in pairs:
        estimate = mitigate(pair.dirty, model, sched, meta["scale"], d.eta, seed + pair.id, d.sampler,
                            min(d.sample_steps, sched.T))
        write_single_pair(out_dir / f"estimate_{pair.id}.bin", pair, first=estimate)
        residuals[pair.id] = inverse_bt(estimate).imag_residual
        np.save(out_dir / f"estimate_{pair.id}_bt.npy", reconstruct_scene(estimate, pattern).values)
        print(f"   ✅ pair {pair.id} ({pair.mode})")

    sidecar = {
        "checkpoint": meta["path"],
        "eta": d.eta,
        "seed": seed,
        "sampler": d.sampler,
        "sample_steps": min(d.sample_steps, sched.T),
        "T": sched.T,
        "ids": [p.id for p in pairs],
        "imag_residual": residuals,
    }
    (out_dir / "mitigate.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    archive_resolved_config(cfg, out_dir, inputs=_run_inputs(args, meta["path"], *inputs))
    print(f"\n✅ Estimates written to {out_dir}")
    return 0


def cmd_eval(args):
    cfg = _config(args, {"diffusion.eta": args.eta, "diffusion.sampler": args.sampler,
                         "diffusion.sample_steps": args.sample_steps})
    methods = [m.strip() for m in args.methods.split(",")] if args.methods else list(cfg.eval.methods)
    unknown = [m for m in methods if m not in EVAL_METHODS]
    if unknown:
        raise ConfigError(f"Unknown methods: {unknown}")
    manifest = load_manifest(_data_dir(args, cfg))
    out_dir = Path(args.out or Path(cfg.paths.runs_dir) / "eval")

    model = sched = scale = None
    inputs = dataset_inputs(manifest)
    if "vfdm" in methods:
        model, sched, meta = _load_model(args.checkpoint or cfg.paths.checkpoint, manifest)
        inputs.append(meta["path"])
        scale = meta["scale"]
        cfg.diffusion.sample_steps = min(cfg.diffusion.sample_steps, sched.T)

    ids = _parse_ids(args.ids, manifest) if args.ids else manifest.split[args.split]
    _print_header("VFDM Evaluation")
    print(f"\n📊 {len(ids)} {args.split} pairs x methods {methods}"
          f"{' (reference-free: TRE only)' if args.reference_free else ''}")
    seed = 0 if args.seed is None else args.seed
    per_sample, aggregate = evaluate(methods, read_pairs(manifest, ids), cfg, model=model, sched=sched,
                                     scale=scale, eta=cfg.diffusion.eta, seed=seed,
                                     reference_free=args.reference_free, progress=not args.quiet)
    per_path, agg_path = write_reports(per_sample, aggregate, out_dir)
    archive_resolved_config(cfg, out_dir, inputs=_run_inputs(args, *inputs))

    print("\n📋 Mean metrics per method and RFI mode:")
    print(aggregate.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print(f"\n✅ Reports: {per_path}, {agg_path}")
    return 0


def _grid(cfg, n=None):
    return GridSpec(n or cfg.grid.n, cfg.grid.du, cfg.grid.c0, cfg.grid.support_radius)


def _load_render_input(path, cfg, slot):
    path = Path(path)
    if path.suffix == ".bin":
        grid = _grid(cfg)
        pair = read_single_pair(path, grid)
        return reconstruct_scene(pair.clean if slot == "first" else pair.dirty, _pattern(cfg, grid)).values
    if path.suffix == ".npy":
        values = np.load(path)
        if np.iscomplexobj(values):
            grid = _grid(cfg, values.shape[0])
            return reconstruct_scene(VisibilityGrid(grid, values, "estimate"), _pattern(cfg, grid)).values
        return values
    raise DatasetIOError(f"Cannot render {path}: expected .npy or .bin")


def cmd_render(args):
    cfg = _config(args)
    values = _load_render_input(args.input, cfg, args.slot)
    out_path, limits = render(values, args.out, tuple(args.range) if args.range else None)
    print(f"✅ Rendered {args.input} -> {out_path} (limits in {limits.name})")
    return 0


def cmd_compare(args):
    cfg = _config(args, {"diffusion.eta": args.eta})
    manifest = load_manifest(_data_dir(args, cfg))
    pair = next(read_pairs(manifest, [args.id]))
    out_dir = Path(args.out or Path(cfg.paths.runs_dir) / f"compare_{args.id}")
    grid = pair.clean.grid
    pattern = _pattern(cfg, grid)
    region = EvalRegion(grid, cfg.eval.radius)

    checkpoint = args.checkpoint or cfg.paths.checkpoint
    model = sched = scale = None
    methods = ["none", "clean", "rpca"]
    inputs = dataset_inputs(manifest)
    if checkpoint:
        model, sched, meta = _load_model(checkpoint, manifest)
        inputs.append(meta["path"])
        scale = meta["scale"]
        cfg.diffusion.sample_steps = min(cfg.diffusion.sample_steps, sched.T)
        methods.append("vfdm")

    _print_header(f"VFDM Comparison: pair {pair.id} ({pair.mode}, {pair.source_count} sources)")
    clean_bt = reconstruct_scene(pair.clean, pattern).values
    dirty_bt = reconstruct_scene(pair.dirty, pattern).values
    panels = {"clean": clean_bt}
    rows = []
    seed = 0 if args.seed is None else args.seed
    for method in methods:
        estimator = method_estimator(method, cfg, model, sched, scale, cfg.diffusion.eta, seed)
        bt = reconstruct_scene(estimator(pair), pattern).values
        panels["dirty" if method == "none" else method] = bt
        rows.append({"method": method, "rmse_K": rmse(bt, clean_bt, region),
                     "ssim": ssim(bt, clean_bt, region), "tre_K": tre(bt, dirty_bt, pair.mask)})
    table = pd.DataFrame(rows)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / "comparison.csv", index=False)
    render_panel(panels, out_dir / "comparison.png", vrange=(float(clean_bt.min()), float(clean_bt.max())),
                 title=f"pair {pair.id}: {pair.mode}")
    archive_resolved_config(cfg, out_dir, inputs=_run_inputs(args, *inputs))
    print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print(f"\n✅ Wrote {out_dir / 'comparison.csv'} and {out_dir / 'comparison.png'}")
    return 0


def cmd_schedule(args):
    cfg = _config(args, {"diffusion.steps": args.steps})
    table = schedule_from_config(cfg).table()
    if args.out:
        table.to_csv(args.out, index=False)
        print(f"✅ Schedule table written to {args.out}")
    else:
        table.to_csv(sys.stdout, index=False)
    return 0


# ============================================================================
# Argument Parsing
# ============================================================================
def build_parser():
    parser = argparse.ArgumentParser(prog="vfdm", description="Diffusion-based RFI mitigation for SAIR visibilities")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run config (JSON or YAML)")
    common.add_argument("--seed", type=int, help="Seed override")
    common.add_argument("--out", help="Output path")
    common.add_argument("--verbose", action="store_true", help="Enable debug logging")
    common.add_argument("--quiet", action="store_true", help="Hide progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="Simulate the paired dataset")
    gen.add_argument("--pairs", type=int, help="Number of pairs (overrides dataset.pairs)")
    gen.add_argument("--force", action="store_true", help="Overwrite an existing dataset")
    gen.add_argument("--verify", action="store_true", help="Regenerate RFI for 1%% of pairs and compare")
    gen.set_defaults(func=cmd_gen)

    tr = sub.add_parser("train", parents=[common], help="Train the noise-prediction network")
    tr.add_argument("--data", help="Dataset directory")
    tr.add_argument("--steps", type=int, help="Training steps (overrides train.steps)")
    tr.add_argument("--fresh", action="store_true", help="Ignore existing checkpoints in the run directory")
    tr.set_defaults(func=cmd_train)

    sampling = argparse.ArgumentParser(add_help=False)
    sampling.add_argument("--checkpoint", help="Checkpoint file or training run directory")
    sampling.add_argument("--eta", type=float, help="Sampler eta in [0, 1] (0 = deterministic)")
    sampling.add_argument("--sampler", choices=SAMPLERS, help="Reverse-step form")
    sampling.add_argument("--sample-steps", type=int, dest="sample_steps", help="Visit only this many steps")
    sampling.add_argument("--data", help="Dataset directory")
    sampling.add_argument("--ids", help="Comma-separated pair ids (default: the test split)")

    mi = sub.add_parser("mitigate", parents=[common, sampling], help="Mitigate RFI in dirty pairs")
    mi.add_argument("--input", help="Single-pair .bin file instead of dataset ids")
    mi.set_defaults(func=cmd_mitigate)

    ev = sub.add_parser("eval", parents=[common, sampling], help="Evaluate methods on a split")
    ev.add_argument("--methods", help=f"Comma-separated subset of {','.join(EVAL_METHODS)}")
    ev.add_argument("--split", choices=["train", "test"], default="test")
    ev.add_argument("--reference-free", action="store_true", dest="reference_free",
                    help="Report TRE only (no clean reference)")
    ev.set_defaults(func=cmd_eval)

    rd = sub.add_parser("render", parents=[common], help="Render a BT map or visibility file")
    rd.add_argument("--input", required=True, help=".npy BT/visibility array or single-pair .bin")
    rd.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"), help="Fixed gray range in Kelvin")
    rd.add_argument("--slot", choices=["first", "second"], default="first", help="Which grid of a .bin pair")
    rd.set_defaults(func=cmd_render)

    co = sub.add_parser("compare", parents=[common], help="All methods on one pair, table + panel")
    co.add_argument("--data", help="Dataset directory")
    co.add_argument("--id", type=int, required=True, help="Pair id")
    co.add_argument("--checkpoint", help="Checkpoint (adds the vfdm column)")
    co.add_argument("--eta", type=float, help="Sampler eta")
    co.set_defaults(func=cmd_compare)

    sc = sub.add_parser("schedule", parents=[common], help="Print the noise schedule as CSV")
    sc.add_argument("--steps", type=int, help="Diffusion steps T")
    sc.set_defaults(func=cmd_schedule)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "render" and not args.out:
        parser.error("render needs --out (.png or .pgm)")
    torch.set_num_threads(get_worker_count())
    try:
        return args.func(args)
    except VfdmError as e:
        print(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception("unexpected failure")
        print(f"❌ Unexpected error: {e}")
        return 1


def run_phase(command, argv=None, next_hint=None):
    """Run one CLI command with the desk config unless --config is given"""
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--config" not in argv:
        argv = ["--config", str(DEFAULT_CONFIG)] + argv
    code = main([command] + argv)
    if code == 0 and next_hint:
        print(f"\n💡 {next_hint[0]}")
        print(f"   Run: {next_hint[1]}")
    return code


if __name__ == "__main__":
    sys.exit(main())
