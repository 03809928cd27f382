#!/usr/bin/env python3
"""Train the reference SPN and its uniform-map ablation on the synthetic task and
print both evaluation reports as JSON.

    python3 scripts/run_experiment.py --epochs 30 --out results.json
"""

import argparse
import json
import logging
from dataclasses import asdict

from threadpoolctl import threadpool_limits

from spn.experiment import run
from spn.optim import OptimizerConfig
from spn.synthdata import SynthConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=7, help="dataset seed")
    ap.add_argument("--train", type=int, default=600)
    ap.add_argument("--test", type=int, default=150)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--batch", type=int, default=2)
    ap.add_argument("--tolerance-px", type=int, default=3)
    ap.add_argument("--no-ablation", action="store_true")
    ap.add_argument("--out", help="also write the result here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    synth = SynthConfig(train_count=args.train, test_count=args.test, seed=args.seed)
    opt = OptimizerConfig(epochs=args.epochs, batch_size=args.batch)
    with threadpool_limits(limits=1):
        res = run(synth, opt, tolerance_px=args.tolerance_px, ablation=not args.no_ablation)
    out = {
        "spn": res.spn,
        "no_sp": res.no_sp,
        "spn_history": [asdict(h) for h in res.spn_history],
        "no_sp_history": [asdict(h) for h in res.no_sp_history],
        "seconds": round(res.seconds, 1),
    }
    text = json.dumps(out, indent=1, default=str)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)


if __name__ == "__main__":
    main()
