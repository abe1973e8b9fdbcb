"""Data-free temperature training on the desk problem, scored against the FD oracle."""
import argparse
import json
import os

from lmdpinn import desk
from lmdpinn.checkpoint import save_checkpoint


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=desk.THERMAL_EPOCHS)
    p.add_argument("--out", default="runs/desk_thermal")
    args = p.parse_args()
    os.makedirs(args.out, exist_ok=True)

    def progress(row):
        print(f"epoch {row['epoch']:6d} total {row['total']:.3e} val_mse {row['val_mse']:.3e}", flush=True)

    run = desk.thermal_run(seed=args.seed, epochs=args.epochs, callback=progress)
    err = desk.thermal_errors(run.checkpoint.temperature, run.checkpoint.scale, desk.heat_oracle(), desk.DESK_SETUP)
    err["wall_s"] = run.wall
    save_checkpoint(run.checkpoint, os.path.join(args.out, "thermal.ckpt"))
    run.record.write(os.path.join(args.out, "record_thermal.jsonl"))
    with open(os.path.join(args.out, "errors.json"), "w") as fh:
        json.dump(err, fh, indent=1)
    print(json.dumps(err, indent=1))


if __name__ == "__main__":
    main()
