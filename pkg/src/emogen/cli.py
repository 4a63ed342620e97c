"""Operator surface: pairing, pretraining, training, generation, metrics,
ablation sweeps, and gradient-check diagnostics.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import metrics as metrics_mod
from .config import RunConfig
from .data import load_training_samples
from .diagnostics import full_model_gradcheck, standard_gradchecks
from .errors import (ConfigError, CountMismatch, EmogenError,
                     MissingArtifacts)
from .midi_io import parse_midi, write_midi
from .model import EmoModel, load_va_predictor, save_va_predictor
from .pairing import (MAX_SIMILARITY, config_hash, load_catalog,
                      load_va_dictionary, pair_datasets, save_manifest, split)
from .tokenizer import decode, encode
from .training import fit, pretrain_va_predictor

VALIDATION_ERRORS = (ConfigError, CountMismatch, MissingArtifacts)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except VALIDATION_ERRORS as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1
    except EmogenError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emogen",
                                     description="Emotion-aligned image-to-MIDI toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pair", help="build the emotionally paired dataset manifest")
    p.add_argument("--images", required=True, help="image catalog CSV")
    p.add_argument("--midis", required=True, help="MIDI catalog CSV")
    p.add_argument("--dictionary", help="emotion-label -> VA dictionary CSV")
    p.add_argument("--out", required=True, help="output manifest path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", help="train,test,val counts, e.g. 2884,100,16")
    p.set_defaults(handler=cmd_pair)

    p = sub.add_parser("pretrain-va", help="pretrain the Valence-Arousal predictor")
    p.add_argument("--midis", required=True, help="VA-labeled MIDI catalog CSV")
    p.add_argument("--config", help="run config JSON (vocab + model settings)")
    p.add_argument("--out", required=True, help="output predictor weights path")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_pretrain_va)

    p = sub.add_parser("train", help="train the image-to-MIDI model")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("generate", help="generate a MIDI file from an image")
    p.add_argument("--image", required=True, help="image file or .emf feature file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output .mid path")
    p.add_argument("--strategy", choices=["greedy", "temperature"], default="greedy")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("metrics", help="evaluate music-quality metrics over MIDI files")
    p.add_argument("--midi-dir", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--summary", help="optional Markdown summary table path")
    p.add_argument("--steps-per-beat", type=int, default=4)
    p.add_argument("--steps-per-measure", type=int, default=16)
    p.add_argument("--polyphony-denominator", choices=["sounding", "total"],
                   default="sounding")
    p.set_defaults(handler=cmd_metrics)

    p = sub.add_parser("gradcheck", help="finite-difference check of all blocks")
    p.add_argument("--config", help="run config JSON (unused dims are fine)")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run an ablation grid of model variants")
    p.add_argument("--config-grid", required=True, help="grid JSON: base config + variants")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_ablate)

    return parser


# --- subcommand handlers ---

def cmd_pair(args) -> int:
    dictionary = load_va_dictionary(args.dictionary) if args.dictionary else None
    midis = load_catalog(args.midis, "midi", dictionary)
    images = load_catalog(args.images, "image", dictionary)
    manifest = pair_datasets(midis, images)
    manifest.config_hash = config_hash({"images": str(args.images),
                                        "midis": str(args.midis), "seed": args.seed})
    if args.split:
        try:
            counts = tuple(int(c) for c in args.split.split(","))
        except ValueError as exc:
            raise ConfigError(f"--split must be three integers: {exc}") from exc
        if len(counts) != 3:
            raise ConfigError("--split needs exactly three comma-separated counts")
        manifest = split(manifest, counts, args.seed)
    else:
        manifest.seed = args.seed
    save_manifest(manifest, args.out)

    finite = [p["similarity"] for p in manifest.pairs if p["similarity"] != MAX_SIMILARITY]
    print(f"pairs: {len(manifest.pairs)}")
    if finite:
        print(f"similarity: min {min(finite):.4f}  mean {sum(finite) / len(finite):.4f}  "
              f"max {max(finite):.4f}  (plus {len(manifest.pairs) - len(finite)} exact matches)")
    if args.split:
        print(f"split sizes: {manifest.split_counts()}")
    return 0


def cmd_pretrain_va(args) -> int:
    run_cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    model_cfg = run_cfg.model
    vocab = model_cfg.vocabulary()
    catalog = load_catalog(args.midis, "midi")
    samples = []
    for item in catalog:
        piece = parse_midi(Path(item.payload_path).read_bytes())
        tokens = encode(piece, vocab, model_cfg.steps_per_beat, model_cfg.max_len)
        samples.append((tokens.ids, (item.va.valence, item.va.arousal)))
    predictor, report = pretrain_va_predictor(
        samples, vocab.total_size, hidden=model_cfg.va_hidden,
        epochs=args.epochs, lr=args.lr, seed=args.seed)
    save_va_predictor(args.out, predictor, vocab.vocab_hash, extra={"report": report})
    print(f"pretrained on {report['n_train']} pieces; "
          f"train MAE {report['train_mae']:.4f}  holdout MAE {report['holdout_mae']:.4f}")
    return 0


def cmd_train(args) -> int:
    run_cfg = RunConfig.from_file(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_cfg.echo(out_dir)
    _train_one(run_cfg, out_dir)
    print(f"checkpoint: {out_dir / 'checkpoint.emc'}")
    print(f"loss curve: {out_dir / 'loss.csv'}")
    return 0


def _train_one(run_cfg: RunConfig, out_dir: Path) -> EmoModel:
    model = EmoModel(run_cfg.model)
    samples = load_training_samples(run_cfg.data, run_cfg.model)
    predictor = None
    needs_va = (run_cfg.train.va_loss_mode != "off"
                and run_cfg.train.loss_weights.lambda_va > 0)
    if needs_va:
        if not run_cfg.data.va_predictor:
            raise MissingArtifacts("train.va_loss_mode needs data.va_predictor weights")
        predictor = load_va_predictor(run_cfg.data.va_predictor,
                                      model.vocab.vocab_hash)
    fit(model, samples, run_cfg.train, predictor=predictor,
        loss_csv=out_dir / "loss.csv")
    model.save(out_dir / "checkpoint.emc",
               extra={"train": run_cfg.to_dict()["train"]})
    return model


def cmd_generate(args) -> int:
    model = EmoModel.load(args.checkpoint)
    tokens = model.generate(args.image, max_len=args.max_len,
                            strategy=args.strategy, temperature=args.temperature,
                            seed=args.seed)
    piece = decode(tokens, model.vocab, model.config.steps_per_beat)
    Path(args.out).write_bytes(write_midi(piece))
    print(f"{args.out}: {len(tokens)} tokens, {len(piece)} notes")
    return 0


def _metric_row(path: Path, steps_per_beat: int, steps_per_measure: int,
                denominator: str):
    piece = parse_midi(path.read_bytes())
    triple, loss = metrics_mod.evaluate_piece(
        piece, steps_per_beat=steps_per_beat, steps_per_measure=steps_per_measure,
        polyphony_denominator=denominator)
    return triple, loss


def cmd_metrics(args) -> int:
    midi_dir = Path(args.midi_dir)
    paths = sorted(midi_dir.rglob("*.mid")) + sorted(midi_dir.rglob("*.midi"))
    if not paths:
        raise MissingArtifacts(f"no .mid files under {midi_dir}")
    rows, errors = [], []
    for path in paths:
        try:
            triple, loss = _metric_row(path, args.steps_per_beat,
                                       args.steps_per_measure,
                                       args.polyphony_denominator)
            rows.append((str(path), triple, loss))
        except EmogenError as exc:
            errors.append((str(path), type(exc).__name__))

    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "polyphony_rate", "pitch_entropy",
                         "groove_consistency", "music_quality_loss"])
        for path, triple, loss in rows:
            writer.writerow([path, f"{triple.polyphony_rate:.6f}",
                             f"{triple.pitch_entropy:.6f}",
                             f"{triple.groove_consistency:.6f}", f"{loss:.6f}"])
        mean = metrics_mod.mean_triple([t for _, t, _ in rows])
        mean_loss = (sum(l for _, _, l in rows) / len(rows)) if rows else math.nan
        writer.writerow(["MEAN", f"{mean.polyphony_rate:.6f}",
                         f"{mean.pitch_entropy:.6f}",
                         f"{mean.groove_consistency:.6f}", f"{mean_loss:.6f}"])

    if args.summary:
        with open(args.summary, "w", encoding="utf-8") as fh:
            fh.write(_summary_table([("corpus_mean", mean_loss, mean)]))
    for path, error in errors:
        print(f"skipped {path}: {error}", file=sys.stderr)
    print(f"{len(rows)} pieces evaluated, {len(errors)} skipped -> {args.out}")
    return 0


def _summary_table(entries) -> str:
    lines = ["| Model | Music_Quality_Loss | Polyphony Rate | Pitch Entropy | Groove Consistency |",
             "|---|---|---|---|---|"]
    for name, loss, triple in entries:
        lines.append(f"| {name} | {loss:.4f} | {triple.polyphony_rate:.4f} "
                     f"| {triple.pitch_entropy:.4f} | {triple.groove_consistency:.4f} |")
    return "\n".join(lines) + "\n"


def cmd_gradcheck(args) -> int:
    reports = standard_gradchecks(tolerance=args.tolerance)
    reports["full_model"] = full_model_gradcheck(tolerance=args.tolerance)
    failed = False
    for name, report in reports.items():
        status = "ok" if report.passed else "FAIL"
        print(f"{name:16s} max rel err {report.worst:.3e}  {status}")
        failed = failed or not report.passed
    return 2 if failed else 0


def cmd_ablate(args) -> int:
    with open(args.config_grid, encoding="utf-8") as fh:
        try:
            grid = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config_grid}: {exc}") from exc
    unknown = set(grid) - {"base", "variants"}
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    base = RunConfig.from_dict(grid.get("base", {}))
    variants = grid.get("variants", [])
    if not variants:
        raise ConfigError("grid has no variants")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base.echo(out_dir, "base_config.json")

    results = []
    for variant in variants:
        unknown = set(variant) - {"name", "model", "train"}
        if unknown:
            raise ConfigError(f"unknown variant keys: {sorted(unknown)}")
        name = variant.get("name") or f"variant{len(results)}"
        try:
            run_cfg = RunConfig(
                model=replace(base.model, **variant.get("model", {})),
                train=base.train if "train" not in variant else
                _merge_train(base, variant["train"]),
                data=base.data, metrics=base.metrics)
            variant_dir = out_dir / name
            variant_dir.mkdir(parents=True, exist_ok=True)
            run_cfg.echo(variant_dir)
            model = _train_one(run_cfg, variant_dir)
            loss, triple, n_eval = _evaluate_variant(model, run_cfg, variant_dir)
            results.append({"name": name, "status": "ok", "loss": loss,
                            "triple": triple, "evaluated": n_eval})
            print(f"{name}: quality loss {loss:.4f} over {n_eval} generated pieces")
        except (EmogenError, OSError) as exc:
            results.append({"name": name, "status": f"failed: {type(exc).__name__}",
                            "loss": math.nan, "triple": None, "evaluated": 0})
            print(f"{name}: FAILED [{type(exc).__name__}] {exc}", file=sys.stderr)

    _write_ablation_tables(out_dir, results)
    print(f"ablation summary: {out_dir / 'ablation.md'}")
    return 0


def _merge_train(base: RunConfig, overrides: dict):
    merged = base.to_dict()["train"]
    merged.update(overrides)
    from .training import TrainConfig
    return TrainConfig.from_dict(merged)


def _evaluate_variant(model: EmoModel, run_cfg: RunConfig, variant_dir: Path):
    """Generate from the eval split's images and score the output corpus."""
    eval_split = "val"
    try:
        samples = load_training_samples(run_cfg.data, run_cfg.model, split=eval_split)
    except MissingArtifacts:
        samples = load_training_samples(run_cfg.data, run_cfg.model,
                                        split=run_cfg.data.split)
    gen_dir = variant_dir / "generated"
    gen_dir.mkdir(exist_ok=True)
    losses, triples = [], []
    for i, sample in enumerate(samples):
        tokens = model.generate(sample.image, strategy="greedy",
                                seed=run_cfg.train.seed)
        piece = decode(tokens, model.vocab, run_cfg.model.steps_per_beat)
        (gen_dir / f"gen_{i:03d}.mid").write_bytes(write_midi(piece))
        try:
            triple, loss = metrics_mod.evaluate_piece(
                piece, steps_per_beat=run_cfg.metrics.steps_per_beat,
                steps_per_measure=run_cfg.metrics.steps_per_measure,
                polyphony_denominator=run_cfg.metrics.polyphony_denominator)
        except EmogenError:
            continue  # degenerate output (empty or too short); skip this piece
        losses.append(loss)
        triples.append(triple)
    if not losses:
        return math.nan, metrics_mod.MetricTriple(math.nan, math.nan, math.nan), 0
    return sum(losses) / len(losses), metrics_mod.mean_triple(triples), len(losses)


def _write_ablation_tables(out_dir: Path, results) -> None:
    with open(out_dir / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "status", "music_quality_loss", "polyphony_rate",
                         "pitch_entropy", "groove_consistency", "evaluated_pieces"])
        for res in results:
            triple = res["triple"]
            writer.writerow([
                res["name"], res["status"], f"{res['loss']:.6f}",
                "" if triple is None else f"{triple.polyphony_rate:.6f}",
                "" if triple is None else f"{triple.pitch_entropy:.6f}",
                "" if triple is None else f"{triple.groove_consistency:.6f}",
                res["evaluated"]])
    entries = [(res["name"], res["loss"],
                res["triple"] or metrics_mod.MetricTriple(math.nan, math.nan, math.nan))
               for res in results]
    with open(out_dir / "ablation.md", "w", encoding="utf-8") as fh:
        fh.write(_summary_table(entries))


if __name__ == "__main__":
    sys.exit(main())
