"""Stress-displacement training: the free-expansion check and the fixed-bottom desk problem."""
import argparse
import json
import os

from lmdpinn import desk
from lmdpinn.checkpoint import load_checkpoint, save_checkpoint
from lmdpinn.training import SeriesTemperature


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("problem", choices=["free", "desk"])
    p.add_argument("--thermal", help="thermal checkpoint supplying T (desk problem); default: oracle temperature")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=desk.MECHANICAL_EPOCHS)
    p.add_argument("--out", default="runs/desk_mechanical")
    args = p.parse_args()
    os.makedirs(args.out, exist_ok=True)

    def progress(row):
        val = "" if row["val_mse"] is None else f" val_mse {row['val_mse']:.3e}"
        print(f"epoch {row['epoch']:6d} total {row['total']:.3e}{val}", flush=True)

    if args.problem == "free":
        run, err = desk.free_expansion_run(seed=args.seed, epochs=args.epochs, callback=progress)
        result = {"stress_rel_l2": err}
    else:
        s = desk.DESK_SETUP
        if args.thermal:
            thermal, temp = load_checkpoint(args.thermal), None
        else:
            thermal = desk.thermal_run(epochs=0).checkpoint
            temp = SeriesTemperature(desk.heat_oracle(s))
        run = desk.mechanical_run(thermal, s, args.seed, args.epochs, temperature=temp, callback=progress)
        result = desk.mechanical_errors(run.checkpoint.stress, run.checkpoint.scale, desk.full_oracle(s), s)
    result["wall_s"] = run.wall
    save_checkpoint(run.checkpoint, os.path.join(args.out, f"{args.problem}.ckpt"))
    run.record.write(os.path.join(args.out, f"record_{args.problem}.jsonl"))
    with open(os.path.join(args.out, f"errors_{args.problem}.json"), "w") as fh:
        json.dump(result, fh, indent=1)
    print(json.dumps(result, indent=1))


if __name__ == "__main__":
    main()
