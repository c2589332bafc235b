"""Command-line interface tying the toolkit together.

Subcommands: generate, split, train, eval, ablate, gradcheck, map,
score-map, export-features, export-attention. Report-producing commands
write delimited/JSON outputs alongside rendered figures.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np
import torch

from . import figures, synthetic, trainer
from .data_model import BucketSpec, bucket_categories, load_manifest, save_manifest, split_dataset
from .imgio import load_png
from .mapping import BlockMap, RemapTable, map_region, score_map
from .trainer import TrainConfig, load_model_from_checkpoint, load_split


def _read_config_file(path: str) -> dict:
    """Plain key=value config lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


_TRAIN_FIELD_TYPES = {f.name: f.type for f in dc_fields(TrainConfig)}


def _coerce(name: str, value: str):
    t = _TRAIN_FIELD_TYPES.get(name, "str")
    if "bool" in str(t):
        return value.lower() in ("1", "true", "yes", "on")
    if "int" in str(t):
        return None if value.lower() == "none" else int(value)
    if "float" in str(t):
        return float(value)
    return value


def _train_config_from_args(args) -> TrainConfig:
    kwargs = {}
    if getattr(args, "config", None):
        for k, v in _read_config_file(args.config).items():
            if k not in _TRAIN_FIELD_TYPES:
                raise ValueError(f"unknown config key {k!r}")
            kwargs[k] = _coerce(k, v)
    for f in _TRAIN_FIELD_TYPES:
        v = getattr(args, f, None)
        if v is not None:
            kwargs[f] = v
    if getattr(args, "no_acf", False):
        kwargs["acf"] = False
        kwargs["mls"] = False
    if getattr(args, "no_mls", False):
        kwargs["mls"] = False
    if getattr(args, "no_aft", False):
        kwargs["aft"] = False
    return TrainConfig(**kwargs)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file mirroring TrainConfig fields")
    p.add_argument("--fusion", choices=["cat", "input", "feature", "decision", "center-only"], default=None)
    p.add_argument("--no-acf", action="store_true", help="disable context fusion (implies no multi-level supervision)")
    p.add_argument("--no-mls", action="store_true", help="disable multi-level supervision")
    p.add_argument("--no-aft", action="store_true", help="disable adapters (frozen backbone only)")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps", dest="max_steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--input-resize", dest="input_resize", type=int)
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--num-heads", dest="num_heads", type=int)
    p.add_argument("--window-size", dest="window_size", type=int)
    p.add_argument("--adapter-bottleneck", dest="adapter_bottleneck", type=int)
    p.add_argument("--adapter-scale", dest="adapter_scale", type=float)


def _cmd_generate(args) -> int:
    if args.pairs is not None:
        groups = synthetic.pair_groups(args.classes)
        if args.pairs > 0 and args.pairs != len(groups):
            raise ValueError(f"{args.classes} classes form {len(groups)} pairs, not {args.pairs}")
    elif args.groups:
        groups = tuple(tuple(g) for g in json.loads(args.groups))
    else:
        groups = synthetic.singleton_groups(args.classes)
    c = args.center_size
    spec = synthetic.GeneratorSpec(
        num_classes=args.classes,
        ambiguity_groups=groups,
        class_prior=args.prior,
        zipf_exponent=args.zipf_exponent,
        motif_noise=args.noise,
        samples_per_class=args.samples_per_class,
        image_sizes=(c, 3 * c, 5 * c),
        context_mode=args.context_mode,
        seed=args.seed,
    )
    manifest, _prov = synthetic.generate_dataset(spec, args.out)
    print(
        json.dumps(
            {
                "out": str(args.out),
                "samples": len(manifest.samples),
                "classes": args.classes,
                "bayes_center_accuracy": synthetic.bayes_center_accuracy(spec),
            }
        )
    )
    return 0


def _cmd_split(args) -> int:
    manifest = load_manifest(args.manifest, check_files=False)
    ratios = tuple(float(x) for x in args.ratios.split(","))
    manifest = split_dataset(manifest, ratios, seed=args.seed)
    save_manifest(manifest, args.out or args.manifest)
    counts = {s: sum(1 for x in manifest.samples if x.split == s) for s in ("train", "val", "test")}
    print(json.dumps(counts))
    return 0


def _cmd_train(args) -> int:
    config = _train_config_from_args(args)
    manifest = load_manifest(args.manifest)
    out_dir = Path(args.out)
    result = trainer.train(config, manifest, out_dir)
    figures.plot_loss_curves(result.runlog.steps, out_dir / "loss_curves.png")
    print(
        json.dumps(
            {
                "checkpoint": str(result.checkpoint_path),
                "best_val_ba": result.best_val_ba,
                "steps": len(result.runlog.steps),
                "total_params": result.runlog.total_params,
                "trainable_params": result.runlog.trainable_params,
            }
        )
    )
    return 0


def _bucket_assignment(manifest) -> dict[int, str]:
    counts = {c: n for c, n in manifest.class_counts("train").items() if n > 0}
    return bucket_categories(counts, BucketSpec())


def _cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    buckets = _bucket_assignment(manifest) if args.buckets else None
    report, _extras = trainer.evaluate(args.checkpoint, manifest, args.split, buckets)
    print(report.to_json())
    print(report.format_table(), file=sys.stderr)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(report.to_json(indent=2))
        with (out / "metrics.csv").open("w") as fh:
            fh.write("class,accuracy\n")
            for cls, acc in sorted(report.per_class_acc.items()):
                fh.write(f"{cls},{acc:.6f}\n")
        figures.plot_confusion(report, out / "confusion.png")
    return 0


_ABLATIONS = (
    ("center-only", {"fusion": "cat", "acf": False, "mls": False, "aft": False}),
    ("acf", {"fusion": "cat", "acf": True, "mls": False, "aft": False}),
    ("acf+mls", {"fusion": "cat", "acf": True, "mls": True, "aft": False}),
    ("acf+mls+aft", {"fusion": "cat", "acf": True, "mls": True, "aft": True}),
)


def _cmd_ablate(args) -> int:
    manifest = load_manifest(args.manifest)
    base = _train_config_from_args(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    means: dict[str, float] = {}
    for name, flags in _ABLATIONS:
        bas = []
        for seed in seeds:
            cfg = TrainConfig(**{**base.__dict__, **flags, "seed": seed})
            result = trainer.train(cfg, manifest)
            data = load_split(manifest, "test", cfg.input_resize)
            report, _ = trainer.evaluate_model(result.best_model(), data, manifest.taxonomy.num_classes)
            rows.append({"config": name, "seed": seed, "ba": report.ba, "oa": report.oa})
            bas.append(report.ba)
        means[name] = float(np.mean(bas))
    with (out / "ablation.csv").open("w") as fh:
        fh.write("config,seed,ba,oa\n")
        for r in rows:
            fh.write(f"{r['config']},{r['seed']},{r['ba']:.6f},{r['oa']:.6f}\n")
    figures.plot_score_bars(means, out / "ablation.png")
    print(json.dumps(means))
    return 0


def _cmd_gradcheck(args) -> int:
    config = _train_config_from_args(args)
    torch.manual_seed(args.seed or 0)
    model = trainer.build_model(config.model_config(args.classes), seed=config.seed)
    r = config.input_resize
    batch = (
        torch.rand(args.batch, 3, r, r),
        torch.rand(args.batch, 3, r, r),
        torch.rand(args.batch, 3, r, r),
        torch.randint(0, args.classes, (args.batch,)),
    )
    report = trainer.gradient_check(
        model, batch, tolerance=args.tolerance, max_coords=args.max_coords
    )
    print(
        json.dumps(
            {
                "checked": len(report.entries),
                "max_rel_error": report.max_rel_error,
                "failures": len(report.failures),
                "tolerance": report.tolerance,
            }
        )
    )
    for e in report.failures[:20]:
        print(f"FAIL {e.name}[{e.index}] analytic={e.analytic:.3e} numeric={e.numeric:.3e}", file=sys.stderr)
    return 0 if report.ok else 1


def _cmd_map(args) -> int:
    raster = load_png(args.raster)
    model, meta = load_model_from_checkpoint(args.checkpoint)
    if args.remap:
        remap = RemapTable.from_json(args.remap)
    else:
        remap = RemapTable.identity(meta["model_config"]["num_classes"])
    block_map = map_region(
        raster, model, remap, args.block, meta["train_config"]["input_resize"]
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    block_map.save_json(out / "map.json")
    figures.plot_block_map(block_map, out / "map.png")
    print(json.dumps({"rows": block_map.rows, "cols": block_map.cols, "out": str(out)}))
    return 0


def _cmd_score_map(args) -> int:
    block_map = BlockMap.from_json(args.map)
    with open(args.annotations) as fh:
        ann_list = json.load(fh)
    annotations = {(int(a["row"]), int(a["col"])): int(a["category"]) for a in ann_list}
    report = score_map(block_map, annotations)
    print(report.to_json())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "map_metrics.json").write_text(report.to_json(indent=2))
        figures.plot_confusion(report, out / "map_confusion.png")
    return 0


def _cmd_export_features(args) -> int:
    model, meta = load_model_from_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    data = load_split(manifest, args.split, meta["train_config"]["input_resize"])
    rows = trainer.export_features(model, data, args.out)
    print(json.dumps({"rows": rows, "out": args.out}))
    return 0


def _cmd_export_attention(args) -> int:
    model, meta = load_model_from_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    data = load_split(manifest, args.split, meta["train_config"]["input_resize"])
    try:
        i = data.ids.index(args.sample_id) if args.sample_id else 0
    except ValueError:
        raise ValueError(f"sample id {args.sample_id!r} not in split {args.split!r}")
    weights = trainer.export_attention(model, (data.center[i], data.surrounding[i], data.global_[i]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(out.with_suffix(".npz"), **weights)
    grid = model.cfg.encoder.grid_size
    figures.plot_attention(weights, grid, out.with_suffix(".png"))
    print(json.dumps({"sample": data.ids[i], "levels": sorted(weights)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catscene", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic scene-in-scene dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument(
        "--pairs",
        nargs="?",
        const=-1,
        type=int,
        help="group classes into ambiguity pairs; optional value asserts the pair count",
    )
    p.add_argument("--groups", help="JSON list of class-id groups")
    p.add_argument("--prior", choices=["uniform", "zipf"], default="uniform")
    p.add_argument("--zipf-exponent", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--samples-per-class", type=int, default=100)
    p.add_argument("--center-size", type=int, default=32)
    p.add_argument("--context-mode", choices=list(synthetic.CONTEXT_MODES), default="class_motif")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("split", help="assign per-class train/val/test tags")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratios", default="0.6,0.2,0.2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train a model and checkpoint at best val BA")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint; writes metrics + confusion figure")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--buckets", action="store_true", help="report many/med/few bucketed BA")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the four-ablation ladder over seeds")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0,1,2")
    _add_train_flags(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check on a tiny profile")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--max-coords", type=int, default=None)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("map", help="block-tile a raster and classify every block")
    p.add_argument("--raster", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--block", type=int, default=256)
    p.add_argument("--remap", help="JSON remap table; identity if omitted")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_map)

    p = sub.add_parser("score-map", help="score a block map against sparse annotations")
    p.add_argument("--map", required=True)
    p.add_argument("--annotations", required=True, help='JSON list of {"row","col","category"}')
    p.add_argument("--out")
    p.set_defaults(func=_cmd_score_map)

    p = sub.add_parser("export-features", help="dump per-sample fused features as TSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_features)

    p = sub.add_parser("export-attention", help="dump fusion attention weights for one sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--sample-id")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_attention)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
