"""Command-line entry points: ``bdn <command> ...``.

Every command exits 0 on success and 1 with a one-line ``error:`` diagnostic
on any rejected precondition (argparse itself exits 2 on unknown flags).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from . import arch
from .arch import N_STYLES, STYLE_NAMES, Head, Variant
from .augment import PIPELINES, augment_pipeline, parse_pipeline
from .bradley_terry import bt_fit, read_comparisons
from .checkpoint import (CheckpointError, load_model, load_pathway, load_scae, save_model,
                         save_pathway, save_scae)
from .data import (STYLE_COLUMNS, Dataset, ManifestError, SyntheticTaskSpec, generate_synthetic,
                   load_manifest, read_image, toy_spec, write_image)
from .metrics import Predictions, compute_metrics, predict
from .training import (TrainConfig, TrainLog, finetune_bdn, pretrain_scae,
                       train_composite_attributes, train_pathway, unsupervised_attributes)


class CliError(Exception):
    pass


def _config(args) -> TrainConfig:
    overrides = dict(seed=args.seed, profile=args.profile, delta=getattr(args, "delta", None))
    if args.config:
        return TrainConfig.from_file(args.config, **overrides)
    return TrainConfig(**{k: v for k, v in overrides.items() if v is not None})


def _dataset(path) -> Dataset:
    return Dataset.load(load_manifest(path))


def _write_log(log: TrainLog, path):
    if path:
        log.write(path)


def style_index(value: str) -> int:
    """Accept a 0-based index, a column name (``rule_of_thirds``) or a display name."""
    if value.isdigit():
        k = int(value)
    else:
        key = value.strip().lower().replace(" ", "_").replace("-", "_")
        if key not in STYLE_COLUMNS:
            raise CliError(f"unknown style {value!r}; choose an index 0-13 or one of {', '.join(STYLE_COLUMNS)}")
        k = STYLE_COLUMNS.index(key)
    if not 0 <= k < N_STYLES:
        raise CliError(f"style index {k} out of range 0-{N_STYLES - 1}")
    return k


def _styles(value) -> list[int]:
    if not value:
        return list(range(N_STYLES))
    return [style_index(v) for v in value.split(",") if v.strip()]


# -- commands ------------------------------------------------------------------

def cmd_gen_data(args):
    spec = toy_spec(size=args.size) if args.spec == "toy" else SyntheticTaskSpec(size=args.size)
    ds = generate_synthetic(spec, args.n, seed=args.seed if args.seed is not None else 0)
    path = ds.save(args.out_dir, ext=args.ext)
    print(f"wrote {len(ds)} images and {path}")


def cmd_pretrain(args):
    cfg = _config(args)
    log = TrainLog()
    scae = pretrain_scae(_dataset(args.manifest), cfg, log)
    save_scae(scae, args.out, cfg.profile)
    _write_log(log, args.log)
    first, last = log.records[0]["train_loss"], log.records[-1]["train_loss"]
    print(f"SCAE reconstruction loss {first:.5f} -> {last:.5f}; saved {args.out}")


def cmd_train_pathway(args):
    cfg = _config(args)
    scae = None
    if args.scae:
        scae, header = load_scae(args.scae)
        if header["profile"] != cfg.profile:
            raise CliError(f"SCAE profile {header['profile']} does not match config profile {cfg.profile}")
    k = style_index(args.style)
    log = TrainLog()
    net = train_pathway(_dataset(args.manifest), k, scae, cfg, log, return_head=True)
    save_pathway(net, args.out, k, cfg.profile)
    _write_log(log, args.log)
    acc = log.records[-1].get("val_accuracy")
    print(f"pathway {k} ({STYLE_NAMES[k]}) saved to {args.out}"
          + (f"; validation accuracy {acc:.4f}" if acc is not None else ""))


def cmd_train_bdn(args):
    cfg = _config(args)
    variant = Variant(args.variant)
    head = Head(args.head) if args.head else arch.default_head(variant)
    arch.check_head(variant, head)
    data = _dataset(args.manifest)
    log = TrainLog()
    warm = load_model(args.warm_start) if args.warm_start else None

    if warm is not None and not args.pathways:
        pathways, styles = warm.pathways, list(warm.style_indices)
    elif variant in (Variant.BFCN, Variant.BDN_WP):
        if not args.scae:
            raise CliError(f"variant {variant.value} builds its own attribute stage and needs --scae")
        scae, _ = load_scae(args.scae)
        styles = _styles(args.styles)
        if variant is Variant.BFCN:
            pathways = unsupervised_attributes(scae, len(styles), cfg)
        else:
            pathways = train_composite_attributes(data, styles, scae, cfg, log)
    else:
        if not args.pathways:
            raise CliError(f"variant {variant.value} needs --pathways checkpoints")
        loaded = [load_pathway(p) for p in args.pathways]
        pathways = [p for p, _ in loaded]
        styles = [h["style_index"] for _, h in loaded]
        if any(h["profile"] != cfg.profile for _, h in loaded):
            raise CliError(f"pathway checkpoints do not match the {cfg.profile} profile")

    model = finetune_bdn(data, pathways, cfg, head, variant, args.frozen_pathways, styles,
                         warm_start=warm, train_log=log)
    save_model(model, args.out)
    _write_log(log, args.log)
    fin = [r for r in log.records if r.get("stage") == "finetune" and "val_loss" in r]
    print(f"{variant.value} ({head.value} head) val loss {fin[0]['val_loss']:.5f} -> "
          f"{fin[-1]['val_loss']:.5f}, {len(log.anneal_events())} anneal(s); saved {args.out}")


def cmd_predict(args):
    model = load_model(args.model, args.variant, args.head)
    lines = predict(model, _dataset(args.manifest)).to_lines()
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_eval(args):
    manifest = load_manifest(args.manifest)
    delta = args.delta if args.delta is not None else 0.0
    if args.predictions:
        if not args.head:
            raise CliError("--predictions needs --head to know the file layout")
        pred = Predictions.from_lines(Path(args.predictions).read_text().splitlines(), args.head)
    else:
        if not args.model:
            raise CliError("eval needs a model checkpoint or --predictions")
        pred = predict(load_model(args.model, args.variant, args.head), Dataset.load(manifest))
    report = compute_metrics(pred, manifest, delta)
    print(report.summary())
    if args.report:
        Path(args.report).write_text("".join(r + "\n" for r in report.to_records()))


def cmd_bt_fit(args):
    lines = Path(args.comparisons).read_text().splitlines()
    res = bt_fit(read_comparisons(lines), reference=args.reference, virtual_ties=args.virtual_ties)
    for item, lp in res.ranking():
        print(f"{item},{lp!r}")
    if not res.converged:
        print(f"warning: not converged after {res.iterations} iterations", file=sys.stderr)


def cmd_augment(args):
    ops = parse_pipeline(args.pipeline)
    img = read_image(args.input)
    out = augment_pipeline(img, ops, args.seed)
    write_image(args.output, out)
    print(f"{args.input} {img.shape[1]}x{img.shape[0]} -> {args.output} {out.shape[1]}x{out.shape[0]}")


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bdn", description="Desk-scale brain-inspired aesthetics network.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every training epoch")
    sub = p.add_subparsers(dest="command", required=True)

    def training(sp):
        sp.add_argument("--config", help="key = value training config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--profile", choices=sorted(arch.PROFILES))
        sp.add_argument("--log", help="write the training log (JSON lines) here")

    def model_filters(sp):
        sp.add_argument("--variant", choices=[v.value for v in Variant])
        sp.add_argument("--head", choices=[h.value for h in Head])

    sp = sub.add_parser("gen-data", help="write a synthetic dataset (images + manifest.csv)")
    sp.add_argument("out_dir")
    sp.add_argument("--n", type=int, default=700)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--spec", choices=["toy", "default"], default="toy")
    sp.add_argument("--ext", choices=[".png", ".raw"], default=".png")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("pretrain", help="stage 1: SCAE reconstruction pretraining")
    sp.add_argument("manifest")
    sp.add_argument("out")
    training(sp)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("train-pathway", help="stage 2: one style pathway")
    sp.add_argument("manifest")
    sp.add_argument("out")
    sp.add_argument("--style", required=True, help="style index 0-13 or name such as rule_of_thirds")
    sp.add_argument("--scae", help="SCAE checkpoint for conv1/conv2 initialization")
    training(sp)
    sp.set_defaults(func=cmd_train_pathway)

    sp = sub.add_parser("train-bdn", help="stage 3: assemble and fine-tune")
    sp.add_argument("manifest")
    sp.add_argument("out")
    sp.add_argument("--pathways", nargs="+", help="pathway checkpoints (bdn and distribution variants)")
    sp.add_argument("--scae", help="SCAE checkpoint (bfcn, bdn-wp)")
    sp.add_argument("--styles", help="comma-separated styles for bfcn/bdn-wp (default: all 14)")
    sp.add_argument("--variant", choices=[v.value for v in Variant], default="bdn")
    sp.add_argument("--head", choices=[h.value for h in Head])
    sp.add_argument("--delta", type=float)
    sp.add_argument("--frozen-pathways", action="store_true")
    sp.add_argument("--warm-start", help="trained model whose weights initialize this run")
    training(sp)
    sp.set_defaults(func=cmd_train_bdn)

    sp = sub.add_parser("predict", help="write one prediction line per image")
    sp.add_argument("model")
    sp.add_argument("manifest")
    sp.add_argument("--out")
    model_filters(sp)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("eval", help="score a model (or a prediction file) against a manifest")
    sp.add_argument("model", nargs="?")
    sp.add_argument("manifest")
    sp.add_argument("--delta", type=float)
    sp.add_argument("--predictions")
    sp.add_argument("--report", help="also write key,value records here")
    model_filters(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bt-fit", help="Bradley-Terry LP factors from item_a,item_b,winner lines")
    sp.add_argument("comparisons")
    sp.add_argument("--reference")
    sp.add_argument("--virtual-ties", action="store_true")
    sp.set_defaults(func=cmd_bt_fit)

    sp = sub.add_parser("augment", help="apply an augmentation pipeline to one image")
    sp.add_argument("input")
    sp.add_argument("output")
    sp.add_argument("--pipeline", default="default",
                    help=f"{' | '.join(PIPELINES)} | comma list of op[:prob]")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_augment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (CliError, CheckpointError, ManifestError, ValueError, OSError, KeyError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
