"""Command line entry point: ``python3 -m lmdpinn <subcommand> [--config ...]``.

Every subcommand writes into ``--out`` (default: ``run.out_dir`` of the
config): the effective config echo, a JSON manifest of produced artifacts and
the artifacts themselves.  Exit status is 0 iff every artifact was written
and contains only finite numbers.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .autodiff import derivative_selfcheck
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config, save_config
from .network import ConfigError, forward
from .oracle import FieldSeries, Grid, export_labels, fd_heat_solve, solve_series_mechanics
from .sampling import LabeledSamples
from .training import TrainingAborted, TransferError, evaluate_fields, train_mechanical, train_thermal, warm_start

log = logging.getLogger("lmdpinn")

SUBCOMMANDS = ("oracle", "train-thermal", "train-mech", "transfer", "evaluate", "export", "selfcheck")


class RunError(RuntimeError):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lmdpinn", description="Thermoelastic PINN for laser metal deposition")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="INI run config (defaults when omitted)")
    p.add_argument("--checkpoint", help="input checkpoint (train-mech, evaluate, export, selfcheck)")
    p.add_argument("--parent", help="parent checkpoint for transfer")
    p.add_argument("--out", help="run directory (default: run.out_dir)")
    p.add_argument("--seed", type=int, help="overrides sampling and initialisation seeds")
    p.add_argument("--no-mechanics", action="store_true", help="oracle: skip the elasticity solves")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _finite_file(path: str) -> bool:
    if path.endswith(".csv"):
        data = np.genfromtxt(path, delimiter=",", skip_header=1)
        data = np.atleast_2d(data)
        # the oracle writes nan for mechanics it did not solve; a column that is
        # entirely nan is "absent", anything else must be finite
        cols = [c for c in data.T if not np.all(np.isnan(c))] if data.size else []
        return all(np.all(np.isfinite(c)) for c in cols)
    if path.endswith(".json"):
        with open(path) as fh:
            return _finite_json(json.load(fh))
    if path.endswith(".ckpt"):
        ck = load_checkpoint(path)
        return all(net.is_finite() for _, net in ck.nets())
    return os.path.exists(path)


def _finite_json(obj) -> bool:
    if isinstance(obj, float):
        return bool(np.isfinite(obj))
    if isinstance(obj, dict):
        return all(_finite_json(v) for v in obj.values())
    if isinstance(obj, list):
        return all(_finite_json(v) for v in obj)
    return True


def _load_reference(cfg: RunConfig, path: str | None = None) -> FieldSeries | None:
    path = path or cfg.run.reference or cfg.data.series
    if not path:
        return None
    if not os.path.exists(path):
        raise RunError(f"reference series {path!r} not found")
    return FieldSeries.from_csv(path)


def _validation_samples(series: FieldSeries, cfg: RunConfig, names) -> LabeledSamples:
    full = export_labels(series, names=[n for n in names if n in series.names()])
    n = min(cfg.run.n_validation, len(full))
    idx = np.sort(np.random.default_rng([cfg.run.seed, 99]).choice(len(full), n, replace=False))
    return LabeledSamples(full.points[idx], {k: v[idx] for k, v in full.fields.items()})


def _attach(cfg: RunConfig, stage_names) -> RunConfig:
    ref = _load_reference(cfg)
    labels = None
    if cfg.data.series and cfg.weights.data > 0:
        series = ref if not cfg.run.reference else FieldSeries.from_csv(cfg.data.series)
        t1 = cfg.data.window_fraction * float(series.times[-1])
        labels = export_labels(series, (float(series.times[0]), t1), cfg.data.stride,
                               [n for n in stage_names if n in series.names()])
    val = _validation_samples(ref, cfg, stage_names) if ref is not None else None
    return replace(cfg, labels=labels, validation=val)


def _progress(row) -> None:
    val = "" if row["val_mse"] is None else f" val_mse={row['val_mse']:.4e}"
    log.info("epoch %d total=%.4e%s", row["epoch"], row["total"], val)


def cmd_oracle(cfg: RunConfig, args, out: str) -> list[str]:
    o = cfg.oracle
    grid = Grid.for_setup(cfg.process, (o.nx, o.ny, o.nz))
    series = fd_heat_solve(grid, cfg.process, output_rate=o.output_rate, safety=o.safety)
    if not args.no_mechanics:
        series = solve_series_mechanics(series, cfg.process, fixing=cfg.run.fixing)
    path = os.path.join(out, "series.csv")
    series.to_csv(path)
    info = os.path.join(out, "oracle_info.json")
    with open(info, "w") as fh:
        json.dump({k: v for k, v in series.info.items()}, fh, indent=1, sort_keys=True, default=float)
    return [path, info]


def cmd_train_thermal(cfg: RunConfig, args, out: str) -> list[str]:
    cfg = _attach(cfg, ("T",))
    ck, rec = train_thermal(cfg, callback=_progress)
    return _write_stage(ck, rec, out, "thermal")


def cmd_train_mech(cfg: RunConfig, args, out: str) -> list[str]:
    if not args.checkpoint:
        raise RunError("train-mech needs --checkpoint (a thermal checkpoint)")
    parent = load_checkpoint(args.checkpoint)
    cfg = _attach(cfg, cfg.stress_net.outputs)
    ck, rec = train_mechanical(parent, cfg, callback=_progress)
    return _write_stage(ck, rec, out, "mechanical")


def cmd_transfer(cfg: RunConfig, args, out: str) -> list[str]:
    if not args.parent:
        raise RunError("transfer needs --parent")
    parent = load_checkpoint(args.parent)
    ref = _load_reference(cfg)
    ck, recs = warm_start(parent, cfg.process, cfg, callback=_progress)
    paths = []
    for stage, rec in recs.items():
        p = os.path.join(out, f"record_{stage}.jsonl")
        rec.write(p)
        paths.append(p)
    p = os.path.join(out, "model.ckpt")
    save_checkpoint(ck, p)
    paths.append(p)
    if ref is not None:
        paths.append(_write_metrics(ck, ref, cfg, out))
    return paths


def _write_stage(ck, rec, out, stage) -> list[str]:
    rp = os.path.join(out, f"record_{stage}.jsonl")
    rec.write(rp)
    cp = os.path.join(out, "model.ckpt")
    save_checkpoint(ck, cp)
    return [rp, cp]


def _write_metrics(ck, series: FieldSeries, cfg: RunConfig, out: str) -> str:
    names = []
    if ck.temperature is not None:
        names.append("T")
    if ck.stress is not None and series.has_mechanics:
        names.extend(ck.stress.config.outputs)
    samples = _validation_samples(series, cfg, names)
    metrics = evaluate_fields(ck, samples, names)
    for n, row in metrics.items():
        row["reported"] = cfg.run.temperature_metric if n == "T" else cfg.run.stress_metric
    path = os.path.join(out, "metrics.json")
    with open(path, "w") as fh:
        json.dump({"checkpoint": ck.id, "n_samples": len(samples), "fields": metrics}, fh, indent=1, sort_keys=True)
    return path


def cmd_evaluate(cfg: RunConfig, args, out: str) -> list[str]:
    if not args.checkpoint:
        raise RunError("evaluate needs --checkpoint")
    ref = _load_reference(cfg)
    if ref is None:
        raise RunError("evaluate needs run.reference (an oracle series CSV) in the config")
    return [_write_metrics(load_checkpoint(args.checkpoint), ref, cfg, out)]


def centerline_points(setup, nx: int, times) -> np.ndarray:
    """Top-surface centerline (y = Ly/2, z = Lz) at every requested time."""
    Lx, Ly, Lz = setup.domain
    x = np.linspace(0.0, Lx, nx)
    return np.concatenate([np.column_stack([x, np.full(nx, Ly / 2), np.full(nx, Lz), np.full(nx, t)]) for t in times])


def cmd_export(cfg: RunConfig, args, out: str) -> list[str]:
    if not args.checkpoint:
        raise RunError("export needs --checkpoint")
    ck = load_checkpoint(args.checkpoint)
    o = cfg.oracle
    times = np.arange(int(round(ck.setup.scan_duration * o.output_rate)) + 1) / o.output_rate
    pts = centerline_points(ck.setup, o.nx, times)
    x = ck.scale.scale_input(pts)
    cols = {}
    for _, net in ck.nets():
        cols.update(forward(net, ck.scale, x))
    path = os.path.join(out, "centerline.csv")
    names = list(cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "z"] + names)
        for i, p in enumerate(pts):
            w.writerow([repr(float(p[3])), repr(float(p[0])), repr(float(p[1])), repr(float(p[2]))] + [repr(float(cols[n][i])) for n in names])
    return [path]


def cmd_selfcheck(cfg: RunConfig, args, out: str) -> list[str]:
    from .network import init_glorot

    if args.checkpoint:
        nets = load_checkpoint(args.checkpoint).nets()
    else:
        nets = [("temperature", init_glorot(cfg.temperature_net)), ("stress", init_glorot(cfg.stress_net))]
    report = {}
    for name, net in nets:
        r = derivative_selfcheck(net, seed=cfg.run.seed)
        report[name] = {"max_rel_err_d1": r.max_rel_err_d1, "max_rel_err_d2": r.max_rel_err_d2, "ok": r.ok}
        if r.flagged():
            log.warning("%s: derivative self-check above 1e-2 (d1 %.2e, d2 %.2e)", name, r.max_rel_err_d1, r.max_rel_err_d2)
    path = os.path.join(out, "selfcheck.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    return [path]


COMMANDS = {
    "oracle": cmd_oracle,
    "train-thermal": cmd_train_thermal,
    "train-mech": cmd_train_mech,
    "transfer": cmd_transfer,
    "evaluate": cmd_evaluate,
    "export": cmd_export,
    "selfcheck": cmd_selfcheck,
}


def run(subcommand: str, cfg: RunConfig, args, out: str) -> int:
    """Execute one subcommand; returns the process exit status."""
    os.makedirs(out, exist_ok=True)
    save_config(cfg, os.path.join(out, "config.ini"))
    manifest = {"subcommand": subcommand, "argv": sys.argv[1:], "status": "failed", "artifacts": {}}
    code = 1
    try:
        paths = COMMANDS[subcommand](cfg, args, out)
        finite = {os.path.basename(p): bool(_finite_file(p)) for p in paths}
        manifest["artifacts"] = finite
        code = 0 if paths and all(finite.values()) else 1
        manifest["status"] = "ok" if code == 0 else "non-finite artifact"
    except TrainingAborted as exc:
        manifest["status"] = f"training aborted: {exc}"
        manifest["breakdown"] = exc.breakdown
        if exc.record is not None:
            exc.record.write(os.path.join(out, "record_aborted.jsonl"))
        log.error("%s", exc)
    except (RunError, ConfigError, CheckpointError, TransferError, ValueError) as exc:
        manifest["status"] = f"error: {exc}"
        log.error("%s", exc)
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True, default=str)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        cfg = parse_config(args.config) if args.config else RunConfig()
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = args.out or cfg.run.out_dir
    if args.out:
        cfg = replace(cfg, run=replace(cfg.run, out_dir=args.out))
    return run(args.subcommand, cfg, args, out)


if __name__ == "__main__":
    sys.exit(main())
