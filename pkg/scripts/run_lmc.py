"""Train MNIST pairs per arm and record midpoint barriers, re-basin barriers and distances.

Writes one JSON file consumed by the acceptance suite (barrier ordering and distance checks).
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np

from asymnets.checkpoint import save_checkpoint
from asymnets.data import load_mnist
from asymnets.interp import barrier, distance_per_parameter
from asymnets.nn import ModelConfig, table4_config
from asymnets.rebasin import align
from asymnets.train import TrainConfig, evaluate, train_pair

ARMS = ("standard", "w_asym", "sigma_asym")


def arm_config(arm: str, width: int, asym_seed: int, figlu_scale: float | None = None) -> ModelConfig:
    if arm == "w_asym":
        return table4_config("w_asym", width=width, asym_seed=asym_seed)
    widths = [784, width, width, width, 10]
    if arm == "sigma_asym":
        return ModelConfig(widths, "sigma_asym", nonlinearity="figlu", asym_seed=asym_seed,
                           figlu_scale=figlu_scale)
    return ModelConfig(widths, "standard", asym_seed=asym_seed)


def run_pair(arm, k, args, tcfg, train_set, test_set) -> dict:
    t0 = time.perf_counter()
    mcfg = arm_config(arm, args.width, asym_seed=k, figlu_scale=args.figlu_scale)
    (a, ra), (b, rb) = train_pair(mcfg, train_set, tcfg, init_seeds=(2 * k + 1, 2 * k + 2))
    rec = {
        "arm": arm, "pair": k,
        "test": [evaluate(a.to_model(), test_set), evaluate(b.to_model(), test_set)],
        "final_train_loss": [ra.train_loss[-1], rb.train_loss[-1]],
        "barrier": barrier(a, b, test_set),
        "distance_per_parameter": distance_per_parameter(a, b),
        "n_trainable": int(a.n_trainable),
    }
    if arm == "standard":
        aligned, res = align(a, b)
        rec["rebasin_barrier"] = barrier(a, aligned, test_set)
        rec["rebasin_sweeps"] = res.sweeps
    if args.save_ckpts:
        d = args.out.parent / "ckpts"
        d.mkdir(parents=True, exist_ok=True)
        save_checkpoint(a, d / f"{arm}-{k}-a.json")
        save_checkpoint(b, d / f"{arm}-{k}-b.json")
    rec["seconds"] = time.perf_counter() - t0
    return rec


def summarize(records: list[dict]) -> dict:
    out = {}
    for arm in ARMS:
        rs = [r for r in records if r["arm"] == arm]
        if not rs:
            continue
        s = {"pairs": len(rs),
             "mean_barrier": float(np.mean([r["barrier"] for r in rs])),
             "mean_distance_per_parameter": float(np.mean([r["distance_per_parameter"] for r in rs])),
             "mean_test_acc": float(np.mean([acc for r in rs for _, acc in r["test"]]))}
        if arm == "standard":
            s["mean_rebasin_barrier"] = float(np.mean([r["rebasin_barrier"] for r in rs]))
        out[arm] = s
    return out


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", type=Path, default=Path("data/mnist"))
    p.add_argument("--out", type=Path, default=Path("results/lmc.json"))
    p.add_argument("--arms", nargs="+", choices=ARMS, default=list(ARMS))
    p.add_argument("--pairs", type=int, default=3)
    p.add_argument("--width", type=int, default=512)
    # tuned recipe; see README for the sweep that picked it
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--warmup-epochs", type=float, default=2)
    p.add_argument("--peak-lr", type=float, default=1e-2)
    p.add_argument("--figlu-scale", type=float, default=1.0, help="std of FiGLU F (default 1.0)")
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--save-ckpts", action="store_true")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    train_set, test_set = load_mnist(args.data, "train"), load_mnist(args.data, "test")
    tcfg = TrainConfig(epochs=args.epochs, warmup_epochs=args.warmup_epochs, peak_lr=args.peak_lr,
                       weight_decay=args.weight_decay)
    records = []
    args.out.parent.mkdir(parents=True, exist_ok=True)
    for arm in args.arms:
        for k in range(args.pairs):
            rec = run_pair(arm, k, args, tcfg, train_set, test_set)
            logging.info("%s pair %d barrier %.4f (%.0fs)", arm, k, rec["barrier"], rec["seconds"])
            records.append(rec)
            result = {"settings": {**vars(args), "train": tcfg.to_dict(), "n_train": len(train_set),
                                   "n_test": len(test_set)},
                      "records": records, "summary": summarize(records)}
            args.out.write_text(json.dumps(result, indent=2, default=str))


if __name__ == "__main__":
    main()
