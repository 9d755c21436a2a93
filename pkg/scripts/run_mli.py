"""Interpolate from initialization to the trained weights for many seeds and record MLI statistics.

Each seed draws its own peak learning rate (log-uniform over ``--lr-range``); both arms see the
same draw, so the comparison is paired.

Writes one JSON file consumed by the acceptance suite (monotonicity and convexity checks).
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from asymnets.checkpoint import ModelCheckpoint
from asymnets.data import load_mnist
from asymnets.interp import curve, mli_metrics
from asymnets.nn import ModelConfig, build_model
from asymnets.train import TrainConfig, train

from run_lmc import arm_config  # noqa: E402  (sibling script)

ARMS = ("standard", "w_asym")


def sampled_lr(seed: int, lo: float, hi: float) -> float:
    return float(10 ** np.random.default_rng([5, seed]).uniform(np.log10(lo), np.log10(hi)))


def run_one(arm: str, seed: int, args, tcfg: TrainConfig, train_set) -> dict:
    t0 = time.perf_counter()
    lr = sampled_lr(seed, *args.lr_range)
    base = arm_config(arm, args.width, asym_seed=seed)
    cfg = ModelConfig.from_dict({**base.to_dict(), "init_seed": seed})
    model = build_model(cfg)
    init = ModelCheckpoint.from_model(model)
    trained, rep = train(model, train_set, TrainConfig.from_dict({**tcfg.to_dict(), "shuffle_seed": seed, "peak_lr": lr}))
    c = curve(init, trained, train_set, args.points)
    m = mli_metrics(c)
    return {"arm": arm, "seed": seed, "peak_lr": lr, **asdict(m), "losses": [float(v) for v in c.losses],
            "final_train_loss": rep.train_loss[-1], "seconds": time.perf_counter() - t0}


def summarize(records: list[dict]) -> dict:
    out = {}
    for arm in ARMS:
        rs = [r for r in records if r["arm"] == arm]
        if rs:
            out[arm] = {"runs": len(rs),
                        "percent_monotone": 100.0 * float(np.mean([r["monotone"] for r in rs])),
                        "mean_delta": float(np.mean([r["delta"] for r in rs])),
                        "mean_local_convexity": float(np.mean([r["local_convexity"] for r in rs])),
                        "mean_global_convexity": float(np.mean([r["global_convexity"] for r in rs]))}
    return out


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", type=Path, default=Path("data/mnist"))
    p.add_argument("--out", type=Path, default=Path("results/mli.json"))
    p.add_argument("--arms", nargs="+", choices=ARMS, default=list(ARMS))
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--warmup-epochs", type=float, default=2)
    p.add_argument("--lr-range", type=float, nargs=2, default=(1e-4, 1e-2))
    p.add_argument("--points", type=int, default=25)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    train_set = load_mnist(args.data, "train")
    tcfg = TrainConfig(epochs=args.epochs, warmup_epochs=args.warmup_epochs)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    records = []
    for arm in args.arms:
        for seed in range(args.runs):
            rec = run_one(arm, seed, args, tcfg, train_set)
            logging.info("%s seed %d monotone %s global %.2f (%.0fs)", arm, seed, rec["monotone"],
                         rec["global_convexity"], rec["seconds"])
            records.append(rec)
            result = {"settings": {**vars(args), "train": tcfg.to_dict(), "n_train": len(train_set)},
                      "records": records, "summary": summarize(records)}
            args.out.write_text(json.dumps(result, indent=2, default=str))


if __name__ == "__main__":
    main()
