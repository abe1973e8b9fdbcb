"""Labeled vs data-free temperature training at a matched epoch count, several seeds."""
import argparse
import json
import os

import numpy as np

from lmdpinn import desk


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--epochs", type=int, default=int(0.35 * desk.THERMAL_EPOCHS))
    p.add_argument("--window", type=float, default=0.7, help="labels cover t <= window * t_max")
    p.add_argument("--out", default="runs/data_acceleration")
    args = p.parse_args()
    os.makedirs(args.out, exist_ok=True)
    labels = desk.window_labels(desk.heat_oracle(), args.window)
    rows = []
    for seed in args.seeds:
        free = desk.thermal_run(seed=seed, epochs=args.epochs)
        lab = desk.thermal_run(seed=seed, epochs=args.epochs, labels=labels)
        free.record.write(os.path.join(args.out, f"record_free_{seed}.jsonl"))
        lab.record.write(os.path.join(args.out, f"record_labeled_{seed}.jsonl"))
        rows.append({"seed": seed, "free": free.final_val, "labeled": lab.final_val, "ratio": lab.final_val / free.final_val})
        print(json.dumps(rows[-1]), flush=True)
    summary = {"epochs": args.epochs, "n_labels": len(labels), "runs": rows,
               "median_ratio": float(np.median([r["ratio"] for r in rows]))}
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1)
    print(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
