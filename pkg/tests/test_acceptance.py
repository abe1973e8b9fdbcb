"""Acceptance criteria A1-A8.

Each test prints one PASS/FAIL line through the ``report`` fixture before
asserting.  The training criteria (A3-A6) share their expensive runs through
session fixtures; the full module takes a few hours on one CPU core.
"""
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from lmdpinn import desk
from lmdpinn.autodiff import derivative_selfcheck, loss_param_gradient
from lmdpinn.checkpoint import from_bytes, to_bytes
from lmdpinn.config import RunConfig, default_config_text
from lmdpinn.network import NetworkConfig, ScaleSet, init_glorot
from lmdpinn.oracle import Grid, build_elastic_system, fd_heat_solve
from lmdpinn import physics as ph
from lmdpinn.physics import MechanicalState, ProcessSetup, ThermalState
from lmdpinn.sampling import LabeledSamples, SamplingPlan, make_batch
from lmdpinn.training import (
    LossWeights,
    MechanicalLoss,
    SeriesTemperature,
    ThermalLoss,
    TrainSettings,
    attach_data,
    total_loss,
    train_thermal,
)

GOLDEN = Path(__file__).parent / "golden" / "default_config.ini"
MATCHED_EPOCHS = int(0.35 * desk.THERMAL_EPOCHS)
SEEDS = (0, 1, 2)


# --- A1 derivative exactness ----------------------------------------------------------

def _random_nets(n=50):
    for k in range(n):
        cfg = NetworkConfig.temperature(100 + k) if k % 2 == 0 else NetworkConfig.stress_displacement(100 + k)
        yield k, init_glorot(cfg)


def _staged_problems():
    s = desk.DESK_SETUP
    sc = ScaleSet.from_setup(s)
    b = make_batch(SamplingPlan(n_interior=16, n_refined=8, n_boundary_per_face=4, n_initial=8, seed=1), s)
    bt = attach_data(b, LabeledSamples(b.interior[:8], {"T": np.linspace(300.0, 900.0, 8)}), s)
    bm = attach_data(b, LabeledSamples(b.interior[:8], {"u": np.full(8, 1e-6), "sxx": np.full(8, -2e7)}), s)
    temp = lambda p: 300.0 + 2e4 * p[:, 0] * p[:, 3]
    return ThermalLoss(s, sc, bt), MechanicalLoss(s, sc, bm, temp)


def test_a1_derivative_exactness(report):
    t0 = time.perf_counter()
    worst1 = worst2 = 0.0
    for k, net in _random_nets():
        rep = derivative_selfcheck(net, samples=32, seed=k)
        worst1, worst2 = max(worst1, rep.max_rel_err_d1), max(worst2, rep.max_rel_err_d2)

    thermal, mechanical = _staged_problems()
    w = LossWeights()
    rel = []
    for k, net in _random_nets():
        prob = thermal if k % 2 == 0 else mechanical
        acts = net.activations

        def loss_fn(pv):
            comps = prob.components(pv[0], acts)
            return total_loss(comps, w), comps

        grad = loss_param_gradient(loss_fn, [net]).grads[0]
        flat = net.flat()
        h = 1e-5
        for i in np.random.default_rng(k).choice(len(flat), 40, replace=False):
            vals = []
            for step in (2, 1, -1, -2):
                p = flat.copy()
                p[i] += step * h
                vals.append(loss_param_gradient(loss_fn, [net.with_flat(p)]).loss)
            fd = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
            rel.append(abs(grad[i] - fd) / max(abs(fd), 1e-300))
    frac = float(np.mean(np.asarray(rel) <= 1e-5))
    wall = time.perf_counter() - t0
    ok = worst1 <= 1e-5 and worst2 <= 1e-3 and frac >= 0.99 and wall <= 120
    report("A1", ok, f"d1 {worst1:.2e} (<=1e-5), d2 {worst2:.2e} (<=1e-3), "
                     f"param grads {100 * frac:.2f}% of {len(rel)} coords within 1e-5 (>=99%), {wall:.0f} s (<=120)")
    assert ok


# --- A2 residual correctness ----------------------------------------------------------

def _linear_mech(A, T, s):
    grad = tuple(tuple(A[i][j] for j in range(3)) for i in range(3))
    mech = MechanicalState(disp=(0.0, 0.0, 0.0), disp_grad=grad)
    sig = ph.stress_from_strain(ph.strain_from_displacement(mech, T, s), s)
    return MechanicalState(disp=(0.0, 0.0, 0.0), disp_grad=grad, stress=sig, stress_grad=((0.0,) * 3,) * 6)


def test_a2_residual_correctness(report):
    t0 = time.perf_counter()
    s = ProcessSetup()
    rt = 1e-10
    close = lambda a, b: abs(a - b) <= rt * abs(b)
    checks = {}
    checks["uniform"] = ph.energy_residual(ThermalState(T=777.0), s) == 0.0
    r_t = ph.energy_residual(ThermalState(T=s.T0 + 3.0, T_t=1.0), s)
    checks["linear-in-t"] = close(r_t, s.rho * s.cp) and abs(r_t - 3.4254e6) <= 1e-4 * 3.4254e6
    r_x = ph.energy_residual(ThermalState(T=s.T0, T_xx=2.0), s)
    checks["quadratic-in-x"] = close(r_x, -2 * s.kappa) and close(r_x, -70.0)
    peak = ph.laser_peak_flux(s)
    checks["laser peak"] = close(peak, 2 * s.eta * s.P / (np.pi * s.r_b**2)) and abs(peak - 1.1318e7) <= 1e-4 * 1.1318e7
    # sigma_xx = a x, sigma_xy = b x, sigma_yy = c y has divergence (a, b + c, 0)
    a, b, c = 3e6, -2e6, 5e5
    sg = [[0.0] * 3 for _ in range(6)]
    sg[0][0], sg[3][0], sg[1][1] = a, b, c
    eq = ph.equilibrium_residual(MechanicalState(stress_grad=tuple(tuple(r) for r in sg)), s)
    checks["linear stress"] = close(eq[0], -a) and close(eq[1], -(b + c)) and eq[2] == 0.0
    dT = 150.0
    mech = _linear_mech(np.eye(3) * s.alpha * dT, s.T_ref + dT, s)
    scale = s.E * s.alpha * dT
    checks["free expansion"] = (all(abs(v) <= rt * scale for v in mech.stress)
                                and all(abs(v) <= rt * scale for v in ph.constitutive_consistency_residual(mech, s.T_ref + dT, s)))
    wall = time.perf_counter() - t0
    ok = all(checks.values()) and wall <= 10
    bad = [k for k, v in checks.items() if not v]
    report("A2", ok, f"{len(checks) - len(bad)}/{len(checks)} closed forms at rtol 1e-10"
                     + (f" (failed: {', '.join(bad)})" if bad else "") + f", {wall:.2f} s (<=10)")
    assert ok


# --- shared desk runs -----------------------------------------------------------------

@pytest.fixture(scope="session")
def a3_run():
    return desk.thermal_run(desk.DESK_SETUP, seed=0, epochs=desk.THERMAL_EPOCHS)


@pytest.fixture(scope="session")
def a4b_run(a3_run):
    temp = SeriesTemperature(desk.heat_oracle(desk.DESK_SETUP))
    return desk.mechanical_run(a3_run.checkpoint, desk.DESK_SETUP, seed=0, temperature=temp)


# --- A3 thermal PINN vs oracle --------------------------------------------------------

def test_a3_holdout_rmse(report, a3_run):
    ck = a3_run.checkpoint
    err = desk.thermal_errors(ck.temperature, ck.scale, desk.heat_oracle(desk.DESK_SETUP), desk.DESK_SETUP)
    ok = err["holdout_fraction"] <= 0.02 and a3_run.wall <= 45 * 60
    report("A3 holdout", ok, f"RMSE {err['holdout_rmse']:.2f} K = {100 * err['holdout_fraction']:.2f}% of "
                             f"{err['peak_rise']:.1f} K rise (<=2%), {a3_run.wall / 60:.1f} min (<=45)")
    assert ok


def test_a3_top_centerline_rmse(report, a3_run):
    ck = a3_run.checkpoint
    err = desk.thermal_errors(ck.temperature, ck.scale, desk.heat_oracle(desk.DESK_SETUP), desk.DESK_SETUP)
    ok = err["centerline_fraction"] <= 0.01
    report("A3 centerline", ok, f"final-time top centerline RMSE {err['centerline_rmse']:.2f} K = "
                                f"{100 * err['centerline_fraction']:.2f}% of rise (<=1%)")
    assert ok


# --- A4 mechanical PINN sanity --------------------------------------------------------

def test_a4a_free_expansion(report):
    run, err = desk.free_expansion_run(dT=100.0, seed=0)
    ok = err <= 0.05 and run.wall <= 2 * 3600
    report("A4a", ok, f"free-expansion stress / (E alpha dT) relative L2 {100 * err:.2f}% (<=5%), {run.wall / 60:.1f} min")
    assert ok


def test_a4b_fixed_bottom(report, a4b_run):
    ck = a4b_run.checkpoint
    err = desk.mechanical_errors(ck.stress, ck.scale, desk.full_oracle(desk.DESK_SETUP), desk.DESK_SETUP)
    worst = max(err[n] for n in ("sxx", "syy", "szz", "sxy", "syz", "szx"))
    ok = err["displacement"] <= 0.10 and worst <= 0.15 and a4b_run.wall <= 2 * 3600
    comps = ", ".join(f"{n} {100 * err[n]:.1f}%" for n in ("sxx", "syy", "szz", "sxy", "syz", "szx"))
    report("A4b", ok, f"displacement {100 * err['displacement']:.1f}% (<=10%), stresses {comps} (<=15%), "
                      f"{a4b_run.wall / 60:.1f} min")
    assert ok


# --- A5 data acceleration -------------------------------------------------------------

def _val_at(record, epoch):
    for row in record.rows:
        if row["epoch"] == epoch:
            return row["val_mse"]
    raise KeyError(epoch)


def test_a5_data_acceleration(report, a3_run):
    series = desk.heat_oracle(desk.DESK_SETUP)
    labels = desk.window_labels(series, 0.7)
    ratios = []
    for seed in SEEDS:
        if seed == 0:
            free = _val_at(a3_run.record, MATCHED_EPOCHS)
        else:
            free = desk.thermal_run(seed=seed, epochs=MATCHED_EPOCHS).final_val
        lab = desk.thermal_run(seed=seed, epochs=MATCHED_EPOCHS, labels=labels).final_val
        ratios.append(lab / free)
    med = float(np.median(ratios))
    ok = med <= 0.5
    report("A5", ok, f"labeled/data-free val MSE at epoch {MATCHED_EPOCHS}: "
                     + ", ".join(f"{r:.3f}" for r in ratios) + f"; median {med:.3f} (<=0.5)")
    assert ok


# --- A6 transfer ----------------------------------------------------------------------

def test_a6_transfer(report, a4b_run):
    target = desk.TRANSFER_SETUP
    cold_t = desk.thermal_run(target, seed=0)
    cold_m = desk.mechanical_run(cold_t.checkpoint, target, seed=0)
    cold_epochs = {"thermal": int(cold_t.record.rows[-1]["epoch"]), "mechanical": int(cold_m.record.rows[-1]["epoch"])}
    targets = {"thermal": cold_t.final_val, "mechanical": cold_m.final_val}
    budget = {k: max(1, int(0.1 * v)) for k, v in cold_epochs.items()}
    _, records = desk.transfer_run(a4b_run.checkpoint, target, seed=0, thermal_epochs=budget["thermal"],
                                   mechanical_epochs=budget["mechanical"], targets=targets)
    parts, ok = [], True
    for stage in ("thermal", "mechanical"):
        hit = records[stage].first_epoch_below(targets[stage])
        good = hit is not None and hit <= 0.1 * cold_epochs[stage]
        ok &= good
        parts.append(f"{stage} reached {targets[stage]:.3e} at "
                     f"{'never' if hit is None else hit} of <= {budget[stage]} (cold {cold_epochs[stage]})")
    report("A6", ok, "; ".join(parts))
    assert ok


# --- A7 oracle integrity --------------------------------------------------------------

def test_a7_oracle_integrity(report):
    s = desk.DESK_SETUP
    series = desk.full_oracle(s)
    info = series.info
    balance = abs(info["enthalpy_change"] - info["energy_in"]) / abs(info["energy_in"])
    quiet = ProcessSetup(scan_duration=0.5, P=0.0, h=0.0, emissivity=0.0)
    ambient = np.max(np.abs(fd_heat_solve(Grid((9, 5, 5), quiet.domain), quiet).T - quiet.T0))
    cg = max(info["cg_residuals"])
    g = Grid((9, 5, 5), (4e-3, 2e-3, 2e-3))
    system = build_elastic_system(g, s, "bottom")
    x, y = np.random.default_rng(0).normal(size=(2, int(system.free.sum())))
    ab, ba = system.apply(x) @ y, x @ system.apply(y)
    sym = abs(ab - ba) / abs(ab)
    coarse = series.T[-1].max() - s.T0
    fine = fd_heat_solve(Grid.for_setup(s, desk.DESK_GRID).refined(2), s).T[-1].max() - s.T0
    halving = abs(coarse - fine) / fine
    ok = balance <= 1e-6 and ambient == 0.0 and cg <= 1e-8 and sym <= 1e-10 and halving < 0.05
    report("A7", ok, f"enthalpy balance {balance:.1e} (<=1e-6), insulated drift {ambient:.1e} K, CG residual "
                     f"{cg:.1e} (<=1e-8), symmetry {sym:.1e} (<=1e-10), grid halving {100 * halving:.2f}% (<5%)")
    assert ok


# --- A8 determinism and round trips ---------------------------------------------------

def test_a8_determinism_and_round_trips(report):
    cfg = RunConfig(process=desk.DESK_SETUP, temperature_net=NetworkConfig(2, 16, 4, 1, "tanh", "softplus", 7, ("T",)),
                    sampling=SamplingPlan(n_interior=60, n_refined=30, n_boundary_per_face=10, n_initial=20, seed=7),
                    weights=LossWeights(data=0.0))
    cfg = replace(cfg, thermal_training=TrainSettings(epochs=30, log_every=5, early_stop=False))
    ck1, rec1 = train_thermal(cfg)
    ck2, rec2 = train_thermal(cfg)
    same_record = rec1.deterministic_rows() == rec2.deterministic_rows()
    same_net = np.array_equal(ck1.temperature.flat(), ck2.temperature.flat())
    blob = to_bytes(ck1)
    back = from_bytes(blob)
    round_trip = np.array_equal(back.temperature.flat(), ck1.temperature.flat()) and to_bytes(back) == blob
    golden = default_config_text() == GOLDEN.read_text()
    d = RunConfig()
    values = ((d.weights.data, d.weights.pde, d.weights.bc, d.weights.ic) == (1.0, 1.0, 1.0, 1e-4)
              and d.optimizer.lr == 2e-4 and d.temperature_net.sizes == [4, 64, 64, 64, 1]
              and d.stress_net.sizes == [4] + [64] * 10 + [9])
    ok = same_record and same_net and round_trip and golden and values
    report("A8", ok, f"bit-identical records {same_record}, nets {same_net}, checkpoint round trip {round_trip}, "
                     f"golden config {golden}, default values {values}")
    assert ok
