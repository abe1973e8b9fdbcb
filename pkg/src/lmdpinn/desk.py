"""Desk-scale problems: the reduced 18 x 8 x 4 mm, 0.5 s scan compared against the oracle.

Shared by the experiment scripts and the acceptance suite so that both run
exactly the same configurations.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .config import RunConfig
from .network import DISPLACEMENTS, STRESSES, MlpParams, ScaleSet, forward
from .oracle import FieldSeries, Grid, fd_heat_solve, export_labels, solve_series_mechanics
from .physics import ProcessSetup
from .sampling import LabeledSamples, SamplingPlan
from .training import (
    Checkpoint,
    LossWeights,
    TrainRecord,
    TrainSettings,
    UniformTemperature,
    train_mechanical,
    train_thermal,
    validation_error,
    warm_start,
)

DESK_SETUP = ProcessSetup(scan_duration=0.5)
TRANSFER_SETUP = replace(DESK_SETUP, P=150.0, v=5e-3)
DESK_GRID = (37, 17, 9)
DESK_PLAN = SamplingPlan(n_interior=2000, n_refined=1000, n_boundary_per_face=200, n_initial=500)
THERMAL_EPOCHS = 20000
MECHANICAL_EPOCHS = 20000
HOLDOUT_SIZE = 4000
HOLDOUT_SEED = 5


def desk_config(setup: ProcessSetup = DESK_SETUP, seed: int = 0, thermal_epochs: int = THERMAL_EPOCHS,
                mechanical_epochs: int = MECHANICAL_EPOCHS, data_weight: float = 0.0,
                log_every: int = 100) -> RunConfig:
    """Data-free by default; float32 jets, paper learning rate and loss weights otherwise."""
    cfg = RunConfig(
        process=setup,
        sampling=DESK_PLAN,
        weights=LossWeights(data=data_weight),
        thermal_training=TrainSettings(epochs=thermal_epochs, log_every=log_every, compute_dtype="float32"),
        mechanical_training=TrainSettings(epochs=mechanical_epochs, log_every=log_every, compute_dtype="float32"),
    )
    return cfg.with_seed(seed)


@lru_cache(maxsize=8)
def heat_oracle(setup: ProcessSetup = DESK_SETUP) -> FieldSeries:
    return fd_heat_solve(Grid.for_setup(setup, DESK_GRID), setup)


@lru_cache(maxsize=8)
def full_oracle(setup: ProcessSetup = DESK_SETUP, fixing: str = "bottom") -> FieldSeries:
    return solve_series_mechanics(heat_oracle(setup), setup, fixing=fixing)


def peak_rise(series: FieldSeries, setup: ProcessSetup) -> float:
    return float(series.T.max() - setup.T0)


def holdout(series: FieldSeries, names=("T",), n: int = HOLDOUT_SIZE, seed: int = HOLDOUT_SEED) -> LabeledSamples:
    """Random oracle nodes x output times; collocation points never coincide with them by construction."""
    full = export_labels(series, names=names)
    idx = np.sort(np.random.default_rng(seed).choice(len(full), min(n, len(full)), replace=False))
    return LabeledSamples(full.points[idx], {k: v[idx] for k, v in full.fields.items()})


def top_centerline(series: FieldSeries, t: float | None = None) -> LabeledSamples:
    """Oracle nodes on y = Ly/2, z = Lz at time ``t`` (default: the last output)."""
    it = len(series.times) - 1 if t is None else series.time_index(t)
    g = series.grid
    j, k = (g.shape[1] - 1) // 2, g.shape[2] - 1
    x = g.axes()[0]
    Ly, Lz = g.lengths[1], g.lengths[2]
    if not np.isclose(g.axes()[1][j], Ly / 2):
        raise ValueError("grid has no node row on the centerline y = Ly/2")
    pts = np.column_stack([x, np.full_like(x, Ly / 2), np.full_like(x, Lz), np.full_like(x, series.times[it])])
    return LabeledSamples(pts, {"T": series.T[it][:, j, k].copy()})


def thermal_errors(net: MlpParams, scale: ScaleSet, series: FieldSeries, setup: ProcessSetup) -> dict:
    """RMSE on the held-out sample and on the final top centerline, in K and as fractions of the peak rise."""
    rise = peak_rise(series, setup)
    out = {"peak_rise": rise}
    for key, samples in (("holdout", holdout(series)), ("centerline", top_centerline(series))):
        pred = forward(net, scale, scale.scale_input(samples.points))["T"]
        rmse = validation_error(pred, samples.fields["T"], "rmse")
        out[f"{key}_rmse"] = rmse
        out[f"{key}_fraction"] = rmse / rise
    return out


def beam_mask(points: np.ndarray, setup: ProcessSetup, spacing) -> np.ndarray:
    """True for points within one grid cell of the beam centre on the top surface."""
    xc, yc = setup.beam_center(points[:, 3])
    return ((np.abs(points[:, 0] - xc) <= spacing[0] + 1e-12) & (np.abs(points[:, 1] - yc) <= spacing[1] + 1e-12)
            & (points[:, 2] >= setup.domain[2] - spacing[2] - 1e-12))


def mechanical_errors(net: MlpParams, scale: ScaleSet, series: FieldSeries, setup: ProcessSetup,
                      exclude_beam: bool = True) -> dict:
    """Relative L2 of the displacement vector and of each stress component over all nodes at t > 0."""
    full = export_labels(series, (float(series.times[1]), float(series.times[-1])), names=DISPLACEMENTS + STRESSES)
    keep = ~beam_mask(full.points, setup, series.grid.spacing) if exclude_beam else np.ones(len(full), bool)
    pts = full.points[keep]
    pred = forward(net, scale, scale.scale_input(pts))
    ref = {n: full.fields[n][keep] for n in DISPLACEMENTS + STRESSES}
    out = {"displacement": validation_error(np.concatenate([pred[n] for n in DISPLACEMENTS]),
                                            np.concatenate([ref[n] for n in DISPLACEMENTS]), "relative_l2")}
    for n in STRESSES:
        out[n] = validation_error(pred[n], ref[n], "relative_l2")
    out["n_points"] = int(keep.sum())
    return out


def free_expansion_error(net: MlpParams, scale: ScaleSet, setup: ProcessSetup, dT, n: int = 4000, seed: int = 11) -> float:
    """||sigma||_2 / ||E alpha dT(t)||_2 over random interior points with t > 0 (exact stress is zero)."""
    rng = np.random.default_rng(seed)
    hi = np.array(list(setup.domain) + [setup.scan_duration])
    pts = rng.uniform(0, 1, (n, 4)) * hi
    pts[:, 3] = np.maximum(pts[:, 3], 1e-3 * hi[3])
    pred = forward(net, scale, scale.scale_input(pts))
    s = np.concatenate([pred[c] for c in STRESSES])
    ref = setup.E * setup.alpha * np.tile(dT(pts) - setup.T_ref, len(STRESSES))
    return float(np.linalg.norm(s) / np.linalg.norm(ref))


# ---------------------------------------------------------------------------
# experiment runners
# ---------------------------------------------------------------------------

@dataclass
class StageRun:
    checkpoint: Checkpoint
    record: TrainRecord
    wall: float

    @property
    def final_val(self) -> float:
        return float(self.record.column("val_mse")[-1])


def _with_validation(cfg: RunConfig, series: FieldSeries, names) -> RunConfig:
    return replace(cfg, validation=holdout(series, names))


def thermal_run(setup: ProcessSetup = DESK_SETUP, seed: int = 0, epochs: int = THERMAL_EPOCHS,
                labels: LabeledSamples | None = None, callback=None) -> StageRun:
    """Temperature net on the desk problem; data-free unless ``labels`` are given (then w_data = 1)."""
    cfg = desk_config(setup, seed, thermal_epochs=epochs, data_weight=1.0 if labels is not None else 0.0)
    cfg = replace(_with_validation(cfg, heat_oracle(setup), ("T",)), labels=labels)
    t0 = time.perf_counter()
    ck, rec = train_thermal(cfg, callback=callback)
    return StageRun(ck, rec, time.perf_counter() - t0)


def window_labels(series: FieldSeries, fraction: float = 0.7, stride: int = 1) -> LabeledSamples:
    """Oracle temperature labels for t <= fraction * t_max."""
    return export_labels(series, (float(series.times[0]), fraction * float(series.times[-1])), stride, ("T",))


def mechanical_run(thermal: Checkpoint, setup: ProcessSetup = DESK_SETUP, seed: int = 0,
                   epochs: int = MECHANICAL_EPOCHS, temperature=None, fixing: str = "bottom",
                   validate: bool = True, callback=None) -> StageRun:
    """Stress-displacement net with the temperature frozen (the thermal net unless ``temperature`` is given)."""
    cfg = desk_config(setup, seed, mechanical_epochs=epochs)
    cfg = replace(cfg, run=replace(cfg.run, fixing=fixing))
    if validate:
        cfg = _with_validation(cfg, full_oracle(setup, fixing), DISPLACEMENTS + STRESSES)
    t0 = time.perf_counter()
    ck, rec = train_mechanical(thermal, cfg, temperature=temperature, callback=callback)
    return StageRun(ck, rec, time.perf_counter() - t0)


def free_expansion_run(dT: float = 100.0, seed: int = 0, epochs: int = MECHANICAL_EPOCHS, callback=None):
    """Uniform temperature ramp with only rigid motion removed; the exact stress is zero."""
    setup = DESK_SETUP
    temp = UniformTemperature(setup.T_ref, dT, setup.scan_duration)
    thermal = Checkpoint(setup, desk_config(setup).scale, DESK_PLAN, LossWeights(data=0.0))
    run = mechanical_run(thermal, setup, seed, epochs, temperature=temp, fixing="minimal", validate=False,
                         callback=callback)
    return run, free_expansion_error(run.checkpoint.stress, run.checkpoint.scale, setup, temp)


def transfer_run(parent: Checkpoint, setup: ProcessSetup = TRANSFER_SETUP, seed: int = 0,
                 thermal_epochs: int = THERMAL_EPOCHS, mechanical_epochs: int = MECHANICAL_EPOCHS,
                 targets: dict | None = None, callback=None) -> tuple[Checkpoint, dict]:
    """Warm start both networks from ``parent``; ``targets`` (stage -> val_mse) stop each stage early."""
    targets = targets or {}
    cfg = desk_config(setup, seed, thermal_epochs, mechanical_epochs)
    cfg = replace(cfg,
                  thermal_training=replace(cfg.thermal_training, target_val_mse=targets.get("thermal")),
                  mechanical_training=replace(cfg.mechanical_training, target_val_mse=targets.get("mechanical")))
    cfg = _with_validation(cfg, full_oracle(setup), ("T",) + DISPLACEMENTS + STRESSES)
    return warm_start(parent, setup, cfg, callback=callback)
