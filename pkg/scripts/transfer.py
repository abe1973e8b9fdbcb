"""Cold start vs warm start at (150 W, 5 mm/s) from a (100 W, 10 mm/s) checkpoint."""
import argparse
import json
import os

from lmdpinn import desk
from lmdpinn.checkpoint import load_checkpoint, save_checkpoint


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("parent", help="checkpoint holding both networks for the desk setup")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fraction", type=float, default=0.1, help="warm budget as a fraction of the cold epochs")
    p.add_argument("--out", default="runs/transfer")
    args = p.parse_args()
    os.makedirs(args.out, exist_ok=True)
    target = desk.TRANSFER_SETUP
    cold_t = desk.thermal_run(target, seed=args.seed)
    cold_m = desk.mechanical_run(cold_t.checkpoint, target, seed=args.seed)
    cold = {"thermal": cold_t, "mechanical": cold_m}
    epochs = {k: int(r.record.rows[-1]["epoch"]) for k, r in cold.items()}
    targets = {k: r.final_val for k, r in cold.items()}
    budget = {k: max(1, int(args.fraction * v)) for k, v in epochs.items()}
    ck, records = desk.transfer_run(load_checkpoint(args.parent), target, args.seed, budget["thermal"],
                                    budget["mechanical"], targets)
    save_checkpoint(ck, os.path.join(args.out, "warm.ckpt"))
    save_checkpoint(cold_m.checkpoint, os.path.join(args.out, "cold.ckpt"))
    summary = {}
    for stage in ("thermal", "mechanical"):
        cold[stage].record.write(os.path.join(args.out, f"record_cold_{stage}.jsonl"))
        records[stage].write(os.path.join(args.out, f"record_warm_{stage}.jsonl"))
        summary[stage] = {"cold_epochs": epochs[stage], "target_val_mse": targets[stage],
                          "warm_epochs_to_target": records[stage].first_epoch_below(targets[stage])}
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1)
    print(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
