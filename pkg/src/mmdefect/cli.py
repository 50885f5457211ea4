"""Command-line surface: synthesize data, train, evaluate, ablate, export.

Exit codes: 0 success, 1 user error (bad flags, missing files, invalid
config), 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import ConfigError, RunConfig


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; remap to the user-error code
    def error(self, message):
        raise UserError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="mmdefect", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p):
        p.add_argument("--config", help="path to a key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config entry (repeatable)")
        p.add_argument("--seed", type=int, help="shortcut for --set run.seed=N")

    p = sub.add_parser("synth", help="generate a dataset directory")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--text-source", choices=("surrogate", "remote"),
                   help="shortcut for --set run.text_source=...")
    p.add_argument("--endpoint", help="remote text backend URL (or MMDEFECT_TEXT_ENDPOINT)")

    p = sub.add_parser("train", help="train on a dataset directory")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory from `synth`")
    p.add_argument("--out", required=True, help="run directory for checkpoints and logs")
    p.add_argument("--resume", action="store_true",
                   help="continue from the last completed phase checkpoint")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="directory for metrics.csv and summary.json")
    p.add_argument("--task", choices=("multi", "binary"),
                   help="shortcut for --set run.task=...")

    p = sub.add_parser("ablate", help="run the variant sweep and report medians")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=3, help="seeds per variant (default 3)")
    p.add_argument("--variants", help="comma-separated variant names (default: all)")

    p = sub.add_parser("embed", help="export pooled image embeddings to CSV")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("extract-stats", help="print the perceived record of one image")
    p.add_argument("--image", required=True, help="PGM image path")
    p.add_argument("--extent", type=float, default=16.0)
    p.add_argument("--rings", type=int, default=16)
    return parser


def _config(args) -> RunConfig:
    overrides = list(args.set)
    if getattr(args, "seed", None) is not None:
        overrides.append(f"run.seed={args.seed}")
    if getattr(args, "task", None):
        overrides.append(f"run.task={args.task}")
    if getattr(args, "text_source", None):
        overrides.append(f"run.text_source={args.text_source}")
    if args.config:
        return RunConfig.from_file(args.config, overrides)
    return RunConfig().with_overrides(overrides)


def _stamp(config: RunConfig) -> str:
    return f"# seed={config.seed} config={config.config_hash()}"


def _load_data(path: str):
    from .datasynth import load_dataset

    if not os.path.isdir(path):
        raise UserError(f"dataset directory not found: {path}\n"
                        f"run `mmdefect synth --out {path}` first")
    try:
        return load_dataset(path)
    except (OSError, KeyError, ValueError) as exc:
        raise UserError(f"could not read dataset at {path}: {exc}")


def _model_for(config: RunConfig, synth_config, classes: int):
    from .model import ModelConfig, MultimodalClassifier

    model_config = ModelConfig(d=config.d, m=config.m, heads=config.heads,
                               hidden=config.hidden, classes=classes,
                               canvas=synth_config.canvas, fusion=config.fusion)
    return MultimodalClassifier(model_config, seed=config.seed)


# -- subcommands -----------------------------------------------------------


def cmd_synth(args) -> int:
    from .datasynth import build_dataset, default_catalog
    from .textbridge import RemoteTextSource

    config = _config(args)
    source = None
    if config.text_source == "remote":
        endpoint = args.endpoint or os.environ.get("MMDEFECT_TEXT_ENDPOINT")
        if not endpoint:
            raise UserError("remote text source needs --endpoint or MMDEFECT_TEXT_ENDPOINT")
        source = RemoteTextSource(endpoint, seed=config.seed)
    catalog = default_catalog(config.correlation)
    samples = build_dataset(catalog, config.seed, config.synth_config(), args.out, source)
    train = sum(1 for s in samples if s.split == "train")
    print(f"{_stamp(config)}\nwrote {len(samples)} samples ({train} train) to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .alignment import (Batchable, StageLogger, rank_self_similarity,
                            run_fusion, run_pfa, warmup)
    from .model import load_params, save_params

    config = _config(args)
    samples, synth_config = _load_data(args.data)
    train = [s for s in samples if s.split == "train"]
    if not train:
        raise UserError(f"dataset at {args.data} has no training samples")
    classes = max(s.label for s in samples) + 1
    os.makedirs(args.out, exist_ok=True)

    final_ckpt = os.path.join(args.out, "model.ckpt")
    warm_ckpt = os.path.join(args.out, "phase_warmup.ckpt")
    align_ckpt = os.path.join(args.out, "phase_align.ckpt")
    log_path = os.path.join(args.out, "stages.csv")
    if args.resume and os.path.exists(final_ckpt):
        print(f"{_stamp(config)}\ntraining already complete: {final_ckpt}")
        return 0

    model = _model_for(config, synth_config, classes)
    data = Batchable.from_samples(train)
    settings = config.classifier()._settings()
    schedule = config.classifier()._schedule()

    done_align = args.resume and os.path.exists(align_ckpt)
    done_warm = done_align or (args.resume and os.path.exists(warm_ckpt))
    if not (args.resume and os.path.exists(log_path)):
        with open(log_path, "w") as fh:
            fh.write(_stamp(config) + "\n")
            fh.write(f"# adamw betas={config.betas} eps={config.eps:g} "
                     f"weight_decay={config.weight_decay:g} batch_size={config.batch_size}\n")
            fh.write(",".join(StageLogger.FIELDS) + "\n")
    logger = StageLogger(log_path)

    if done_align:
        load_params(model.store, align_ckpt)
        print(f"resuming after alignment phase ({align_ckpt})")
    elif done_warm:
        load_params(model.store, warm_ckpt)
        print(f"resuming after warm-up phase ({warm_ckpt})")

    if not done_warm:
        accuracy = warmup(model, data, settings, config.warmup_epochs, config.seed, logger)
        save_params(model.store, warm_ckpt)
        probes = " ".join(f"{k}={v:.3f}" for k, v in accuracy.items())
        print(f"warm-up done, probe accuracy: {probes}")
    if config.alignment != "none" and not done_align:
        ranked = rank_self_similarity(model, data)
        run_pfa(model, data, ranked, schedule, settings, config.seed, logger)
        save_params(model.store, align_ckpt)
        print("alignment done")
    run_fusion(model, data, settings, config.seed, logger=logger)
    save_params(model.store, final_ckpt)
    print(f"{_stamp(config)}\nwrote {final_ckpt}")
    return 0


def cmd_eval(args) -> int:
    from .alignment import Batchable, predict
    from .metrics import MetricsReport
    from .model import load_params
    from .pipeline import guard_test_split

    config = _config(args)
    samples, synth_config = _load_data(args.data)
    test = guard_test_split(samples)
    if not test:
        raise UserError(f"dataset at {args.data} has no test samples")
    classes = max(s.label for s in samples) + 1
    model = _model_for(config, synth_config, classes)
    load_params(model.store, args.ckpt)
    preds = predict(model, Batchable.from_samples(test))
    labels = [s.label for s in test]
    report = MetricsReport.from_predictions(labels, preds, classes, config.task)

    os.makedirs(args.out, exist_ok=True)
    stamp = _stamp(config)
    with open(os.path.join(args.out, "metrics.csv"), "w") as fh:
        fh.write(stamp + "\n")
        fh.write("task,class,precision,recall,f1\n")
        for row in report.rows():
            fh.write(f"{row['task']},{row['class']},{row['precision']:.6f},"
                     f"{row['recall']:.6f},{row['f1']:.6f}\n")
    summary = {"seed": config.seed, "config_hash": config.config_hash()}
    summary.update(report.summary())
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{stamp}\ntask={config.task} macro_f1={report.macro_f1:.4f}")
    return 0


def cmd_ablate(args) -> int:
    from .pipeline import ABLATION_VARIANTS, ablate

    config = _config(args)
    variants = args.variants.split(",") if args.variants else None
    if variants:
        unknown = [v for v in variants if v not in ABLATION_VARIANTS]
        if unknown:
            raise UserError(f"unknown variants: {', '.join(unknown)}; "
                            f"choose from {', '.join(ABLATION_VARIANTS)}")
    rows, directions = ablate(config, variants, seeds=args.seeds,
                              progress=lambda s: print(s, flush=True))
    os.makedirs(args.out, exist_ok=True)
    stamp = _stamp(config)
    with open(os.path.join(args.out, "ablation.csv"), "w") as fh:
        fh.write(stamp + "\n")
        fh.write("variant,seeds,median_multi,median_binary,error\n")
        for row in rows:
            fh.write(f"{row['variant']},{row['seeds']},{row['median_multi']:.6f},"
                     f"{row['median_binary']:.6f},{row['error']}\n")
    with open(os.path.join(args.out, "ablation.json"), "w") as fh:
        json.dump({"seed": config.seed, "config_hash": config.config_hash(),
                   "rows": rows, "directions": directions}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(stamp)
    for row in rows:
        note = f"  [{row['error']}]" if row["error"] else ""
        print(f"{row['variant']:10s} multi={row['median_multi']:.4f} "
              f"binary={row['median_binary']:.4f}{note}")
    for name, ok in directions.items():
        print(f"direction {name}: {'holds' if ok else 'VIOLATED'}")
    return 0


def cmd_embed(args) -> int:
    from .alignment import Batchable
    from .model import load_params

    config = _config(args)
    samples, synth_config = _load_data(args.data)
    classes = max(s.label for s in samples) + 1
    model = _model_for(config, synth_config, classes)
    load_params(model.store, args.ckpt)
    data = Batchable.from_samples(samples)
    with open(args.out, "w") as fh:
        fh.write(_stamp(config) + "\n")
        fh.write("id,label," + ",".join(f"z{i}" for i in range(config.d)) + "\n")
        for start in range(0, len(data), 64):
            sl = slice(start, start + 64)
            z = model.pooled(model.encode_image(data.images[sl])).data
            for row_id, label, vec in zip(data.ids[sl], data.labels[sl], z):
                coords = ",".join(f"{v:.6f}" for v in vec)
                fh.write(f"{row_id},{label},{coords}\n")
    print(f"wrote {len(data)} embeddings to {args.out}")
    return 0


def cmd_extract_stats(args) -> int:
    from .datasynth import RasterImage, read_pgm
    from .perception import extract_stats

    if not os.path.exists(args.image):
        raise UserError(f"image not found: {args.image}")
    pixels = read_pgm(args.image)
    image = RasterImage(pixels=pixels, extent=args.extent, dot_radius=0)
    edges = np.linspace(0.0, args.extent, args.rings + 1)
    stats = extract_stats(image, edges)
    print(json.dumps({
        "mean": [round(v, 6) for v in stats.mean],
        "std": [round(v, 6) for v in stats.std],
        "ring_counts": list(stats.ring_counts),
        "lit_pixels": stats.lit_pixels,
        "total_dots": stats.total_dots,
    }, sort_keys=True))
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "embed": cmd_embed,
    "extract-stats": cmd_extract_stats,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help()
            return 1
        return _COMMANDS[args.command](args)
    except (UserError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
