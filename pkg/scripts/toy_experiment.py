"""Desk-scale toy experiment: SCAE, four pathways, BDN vs BFCN, Gaussian head.

    python3 scripts/toy_experiment.py [--epochs 20 30 30] [--seed 0] [--out runs/toy]
"""
import argparse
import json
import time
from pathlib import Path

from bdn import arch
from bdn.checkpoint import save_model
from bdn.data import generate_synthetic, toy_spec
from bdn.metrics import compute_metrics, predict
from bdn.training import (TrainConfig, TrainLog, finetune_bdn, pretrain_scae, reconstruction_loss,
                          style_accuracy, train_pathway, unsupervised_attributes)

STYLES = (0, 1, 2, 3)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--epochs", nargs=3, type=int, default=[20, 30, 30], metavar=("SCAE", "PATHWAY", "FINETUNE"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=500)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--out", default="runs/toy")
    args = p.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    ds = generate_synthetic(toy_spec(styles=STYLES), args.n_train + args.n_test, seed=args.seed)
    train, test = ds.subset(range(args.n_train)), ds.subset(range(args.n_train, len(ds)))
    cfg = TrainConfig(batch_size=8, seed=args.seed, epochs_scae=args.epochs[0],
                      epochs_pathway=args.epochs[1], epochs_finetune=args.epochs[2])
    log = TrainLog()

    scae = pretrain_scae(train, cfg, log)
    print(f"SCAE loss {log.records[0]['train_loss']:.4f} -> {reconstruction_loss(scae, train):.4f}", flush=True)

    pathways = []
    for s in STYLES:
        net = train_pathway(train, s, scae, cfg, log, return_head=True)
        print(f"pathway {s} ({arch.STYLE_NAMES[s]}): test accuracy {style_accuracy(net, test, s):.3f}", flush=True)
        pathways.append(arch.headless(net))

    results = {}
    bdn = finetune_bdn(train, pathways, cfg, "binary", "bdn", style_indices=STYLES, train_log=log)
    bfcn = finetune_bdn(train, unsupervised_attributes(scae, len(STYLES), cfg), cfg, "binary", "bfcn",
                        style_indices=STYLES, train_log=log)
    gauss = finetune_bdn(train, bdn.pathways, cfg, "gaussian", "bdn", style_indices=STYLES,
                         warm_start=bdn, train_log=log)
    for name, model in [("bdn", bdn), ("bfcn", bfcn), ("gauss", gauss)]:
        save_model(model, out / f"{name}.ckpt")
        report = compute_metrics(predict(model, test), test.manifest, 0.0)
        results[name] = report.to_records()
        print(f"== {name}\n{report.summary()}", flush=True)

    log.write(out / "train_log.jsonl")
    (out / "results.json").write_text(json.dumps(results, indent=1))
    print(f"total {time.perf_counter() - t0:.0f}s; outputs in {out}")


if __name__ == "__main__":
    main()
