"""Command-line interface.

Exit codes are stable: 0 success, 2 usage/config problems, 3 runtime
failures. Report commands write their delimited output (CSV / PGM) and render
a matplotlib PNG next to it.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import figures, training
from .augment import DEFAULT_GRID_N, build_dataset, read_manifest, write_manifest
from .checkpoint import load_checkpoint, save_checkpoint
from .config import dump_config, load_config
from .errors import ConfigError, EvalError, LengthError, TextrecError
from .imgio import read_image, resize_bilinear, write_pgm
from .model import Recognizer

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

SWEEP_SETS = ["raw"] + [f"ha{s}" for s in range(1, 7)] + [f"ca{s}" for s in range(1, 7)]


def _read_config(path):
    text = Path(path).read_text(encoding="utf-8") if path else ""
    return load_config(text)


def load_model(ckpt_path):
    """Checkpoint -> (model, model_cfg, train_settings); mismatches are config errors."""
    config_text, arrays = load_checkpoint(ckpt_path)
    model_cfg, train_cfg = load_config(config_text)
    model = Recognizer(model_cfg)
    model.store.load_arrays(arrays)
    return model, model_cfg, train_cfg


def load_samples(manifest_path, cfg):
    """Manifest entries -> [(image resized to model dims, label)]."""
    entries = read_manifest(manifest_path)
    if not entries:
        raise EvalError(f"empty manifest: {manifest_path}")
    base = Path(manifest_path).parent
    samples = []
    for rel, label in entries:
        img = read_image(base / rel)
        samples.append((resize_bilinear(img, cfg.img_h, cfg.img_w), label))
    return samples


def _synth_corpus(cfg, train, seed):
    spec = training.SynthSpec.fit(cfg.charset, cfg.img_h, cfg.img_w,
                                  train.synth_max_len)
    return training.make_corpus(spec, train.synth_count, seed=seed)


def _write_history_csv(path, history):
    with open(path, "w", encoding="utf-8") as fh:
        for row in history:
            line = f"{row['step']},{row['lr']:.8g},{row['loss']:.8g}"
            if "acc" in row:
                line += f",{row['acc']:.6f}"
            fh.write(line + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_train(args):
    cfg, train = _read_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.steps is not None:
        train.steps = args.steps
    if args.data:
        samples = load_samples(args.data, cfg)
    else:
        samples = _synth_corpus(cfg, train, cfg.seed)
    model = Recognizer(cfg)
    schedule = training.LrSchedule(d_model=cfg.e_dim, warm_n=train.warm_n,
                                   scale=train.lr_scale)
    history = training.fit(
        model, samples, steps=train.steps, batch_size=train.batch_size,
        schedule=schedule, seed=cfg.seed, eval_every=train.eval_every,
    )
    if args.finetune:
        history += training.fit(
            model, samples, steps=train.finetune_steps, batch_size=train.batch_size,
            schedule=training.ConstantLr(train.finetune_lr), seed=cfg.seed + 1,
            start_step=train.steps + 1,
        )
    save_checkpoint(args.out, dump_config(cfg, train), model.store.arrays())
    log_path = args.log or f"{args.out}.log.csv"
    _write_history_csv(log_path, history)
    figures.save_loss_curve(history, f"{args.out}.train.png")
    print(f"checkpoint {args.out} final_loss {history[-1]['loss']:.6f} log {log_path}")
    return EXIT_OK


def cmd_recognize(args):
    model, cfg, _ = load_model(args.ckpt)
    img = resize_bilinear(read_image(args.image), cfg.img_h, cfg.img_w)
    if args.beam == 1:
        text, _ = model.decode_greedy(img)
    else:
        text = model.decode_beam(img, width=args.beam)
    print(text)
    return EXIT_OK


def cmd_augment(args):
    result = build_dataset(
        getattr(args, "in"), args.out, args.mode, args.intensity,
        n=args.n_fiducial, seed=args.seed,
    )
    for rel, message in result["errors"]:
        print(f"error: {rel}: {message}", file=sys.stderr)
    print(f"wrote {len(result['written'])} images, manifest {result['manifest']}")
    return EXIT_OK


def export_attention(model, image, out_dir):
    """Decode `image` and export per-step visual heatmaps + semantic affinity.

    Returns {"text", "heatmap_rows": [(P,) rows pre-quantization],
    "affinity": (t, t)} for the last decoder block.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text, steps = model.decode_greedy(image, return_steps=True)
    fh, fw = model.visual.feat_h, model.visual.feat_w
    rows, grids = [], []
    for record in steps:
        weights = record["vis_weights"]
        row = weights[0].mean(axis=0)[record["step"] - 1]
        rows.append(row)
        grid = row.reshape(fh, fw)
        grids.append(grid)
        peak = grid.max()
        write_pgm(out_dir / f"step_{record['step']:02d}.pgm",
                  grid / peak if peak > 0 else grid)
    last = steps[-1]
    affinity = last["sem_weights"][0].mean(axis=0) if last["sem_weights"] is not None else None
    if affinity is not None:
        with open(out_dir / "affinity.csv", "w", encoding="utf-8") as fh_out:
            writer = csv.writer(fh_out)
            for row in affinity:
                writer.writerow([f"{v:.8g}" for v in row])
        figures.save_attention_panel(text, grids, affinity, out_dir / "attention.png")
    return {"text": text, "heatmap_rows": rows, "affinity": affinity}


def cmd_export_attention(args):
    model, cfg, _ = load_model(args.ckpt)
    img = resize_bilinear(read_image(args.image), cfg.img_h, cfg.img_w)
    result = export_attention(model, img, args.out)
    print(f"decoded {result['text']!r}; {len(result['heatmap_rows'])} heatmaps in {args.out}")
    return EXIT_OK


def _eval_manifest(model, cfg, manifest, beam):
    samples = load_samples(manifest, cfg)
    report = training.evaluate(model, samples, beam_width=beam,
                               casefold=cfg.casefold_eval)
    return report


def cmd_eval(args):
    model, cfg, _ = load_model(args.ckpt)
    if args.sweep_root:
        root = Path(args.sweep_root)
        cells = {}
        for name in SWEEP_SETS:
            manifest = root / name / "manifest.txt"
            if not manifest.exists():
                raise ConfigError(f"sweep set missing: {manifest}")
            cells[name] = _eval_manifest(model, cfg, manifest, args.beam)["sequence_accuracy"]
        out_csv = args.out or str(root / "sweep.csv")
        with open(out_csv, "w", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(SWEEP_SETS)
            writer.writerow([f"{cells[name]:.4f}" for name in SWEEP_SETS])
        figures.save_sweep_curves(
            {"raw": cells["raw"],
             "ha": [cells[f"ha{s}"] for s in range(1, 7)],
             "ca": [cells[f"ca{s}"] for s in range(1, 7)]},
            str(Path(out_csv).with_suffix(".png")),
        )
        print(",".join(f"{cells[name]:.4f}" for name in SWEEP_SETS))
        print(f"sweep report {out_csv}")
        return EXIT_OK
    report = _eval_manifest(model, cfg, args.data, args.beam)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "prediction", "correct"])
            for row in report["results"]:
                writer.writerow([row["label"], row["prediction"], int(row["correct"])])
    print(f"{report['sequence_accuracy']:.4f}")
    return EXIT_OK


def cmd_ablate(args):
    cfg, train = _read_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    grid = training.parse_grid(args.grid) if args.grid else training.default_grid()
    corpus = _synth_corpus(cfg, train, cfg.seed)
    report = training.run_ablation(
        grid, base_cfg=cfg, corpus=corpus, steps=args.steps,
        batch_size=min(train.batch_size, len(corpus)), seed=cfg.seed,
        log=lambda row: print(f"{row['name']}: loss {row['final_loss']:.4f} "
                              f"acc {row['sequence_accuracy']:.3f}"),
    )
    fieldnames = ["name", "self_attn", "cross", "fusion", "layers", "steps",
                  "final_loss", "sequence_accuracy", "note"]
    with open(args.out, "w", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(report)
    figures.save_ablation_chart(report, str(Path(args.out).with_suffix(".png")))
    print(f"ablation report {args.out} ({len(report)} rows; desk-scale, "
          "not comparable to published results)")
    return EXIT_OK


def cmd_synth(args):
    cfg, train = _read_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = training.SynthSpec.fit(cfg.charset, cfg.img_h, cfg.img_w,
                                  train.synth_max_len)
    corpus = training.make_corpus(spec, args.count, seed=args.seed)
    entries = []
    for i, (img, label) in enumerate(corpus):
        name = f"synth_{i:04d}.pgm"
        write_pgm(out_dir / name, img)
        entries.append((name, label))
    write_manifest(out_dir / "manifest.txt", entries)
    print(f"wrote {len(entries)} samples, manifest {out_dir / 'manifest.txt'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="textrec",
        description="Scene-text recognizer with position-queried dual-branch "
                    "fusion, plus an elastic augmentation engine.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", help="flat key=value config file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="training manifest (path<TAB>label lines)")
    src.add_argument("--synthetic", action="store_true",
                     help="train on the built-in synthetic glyph corpus")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--steps", type=int, help="override train.steps")
    p.add_argument("--seed", type=int, help="override model.seed")
    p.add_argument("--finetune", action="store_true",
                   help="append a constant-lr fine-tune phase")
    p.add_argument("--log", help="CSV log path (default <out>.log.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recognize", help="decode one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--beam", type=int, default=10, help="beam width (default 10)")
    p.set_defaults(func=cmd_recognize)

    p = sub.add_parser("augment", help="build a deformed copy of a dataset")
    p.add_argument("--in", required=True, help="input manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", required=True, choices=["ha", "ca"])
    p.add_argument("--intensity", required=True, type=int, metavar="1..6")
    p.add_argument("--n-fiducial", type=int, default=DEFAULT_GRID_N)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("export-attention",
                       help="write per-step attention heatmaps and the affinity matrix")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("eval", help="sequence accuracy on a manifest or a sweep tree")
    p.add_argument("--ckpt", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="evaluation manifest")
    src.add_argument("--sweep-root",
                     help="directory with raw/ ha1..ha6/ ca1..ca6/ manifest sets")
    p.add_argument("--beam", type=int, default=1, help="beam width (1 = greedy)")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the configuration-grid harness")
    p.add_argument("--grid", help="grid file (defaults to the built-in 18-row grid)")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--config", help="base config file")
    p.add_argument("--steps", type=int, default=120, help="training budget per row")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="write a synthetic corpus as PGM + manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="config file for charset/canvas settings")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, LengthError, EvalError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TextrecError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
