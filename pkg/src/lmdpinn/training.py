"""Loss assembly, Adam, staged thermal -> mechanical training, data and transfer workflows."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .autodiff import NonFiniteError, Var, loss_param_gradient, mlp_jets, value_of
from .network import DISPLACEMENTS, STRESSES, ConfigError, MlpParams, ScaleSet, forward, init_glorot
from .physics import (
    Face,
    MechanicalState,
    ProcessSetup,
    ThermalState,
    check_on_face,
    constitutive_consistency_residual,
    energy_residual,
    equilibrium_residual,
    mechanical_bc_residual,
    thermal_bc_residual,
)
from .sampling import CollocationBatch, LabeledSamples, SamplingPlan, make_batch, resampled

CHECKPOINT_VERSION = 1


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, record: "TrainRecord | None" = None, breakdown: dict | None = None):
        super().__init__(message)
        self.record = record
        self.breakdown = breakdown or {}


class TransferError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    data: float = 1.0
    pde: float = 1.0
    bc: float = 1.0
    ic: float = 1e-4

    def validate(self) -> None:
        if min(self.data, self.pde, self.bc, self.ic) < 0:
            raise ConfigError("loss weights must be >= 0")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr: float = 2e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)


@dataclass(frozen=True)
class OptimizerSettings:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("need lr > 0, 0 <= beta1, beta2 < 1 and eps > 0")

    def fresh(self, n: int) -> AdamState:
        return AdamState.zeros(n, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; inputs are not modified."""
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != params.shape or g.shape != state.m.shape:
        raise ConfigError(f"shape mismatch: params {params.shape}, grads {g.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteError(f"non-finite gradient at step {state.step + 1}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    mhat = m / (1.0 - b1**t)
    vhat = v / (1.0 - b2**t)
    new = params - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return new, replace(state, m=m, v=v, step=t)


def total_loss(components, weights: LossWeights):
    """w_data*L_data + w_pde*L_pde + w_bc*L_bc + w_ic*L_ic (terms with zero weight are skipped)."""
    out = 0.0
    for name in ("data", "pde", "bc", "ic"):
        w = getattr(weights, name)
        if w != 0.0:
            out = components[name] * w + out
    return out


# ---------------------------------------------------------------------------
# frozen temperature providers for the mechanical stage
# ---------------------------------------------------------------------------

class NetTemperature:
    def __init__(self, net: MlpParams, scale: ScaleSet):
        self.net, self.scale = net, scale

    def __call__(self, points) -> np.ndarray:
        return forward(self.net, self.scale, self.scale.scale_input(points, check=False))["T"]


class UniformTemperature:
    """T = T_ref + dT * ramp(t); ``ramp_time`` None means a step at t = 0."""

    def __init__(self, T_ref: float, dT: float, ramp_time: float | None = None):
        self.T_ref, self.dT, self.ramp_time = T_ref, dT, ramp_time

    def __call__(self, points) -> np.ndarray:
        t = np.asarray(points)[:, 3]
        f = np.ones_like(t) if self.ramp_time is None else np.clip(t / self.ramp_time, 0.0, 1.0)
        return self.T_ref + self.dT * f


class SeriesTemperature:
    def __init__(self, series):
        self.series = series

    def __call__(self, points) -> np.ndarray:
        return self.series.temperature_at(points)


# ---------------------------------------------------------------------------
# loss assembly
# ---------------------------------------------------------------------------

def _sum_squares(terms) -> Var:
    out = None
    for r in terms:
        s = (r * r).sum()
        out = s if out is None else out + s
    return out


class ThermalLoss:
    """Energy, flux/Dirichlet boundary, initial and data terms for the temperature net."""

    def __init__(self, setup: ProcessSetup, scale: ScaleSet, batch: CollocationBatch, dtype=np.float64):
        self.setup, self.scale, self.dtype = setup, scale, dtype
        h = scale.half
        self.h = [float(v) for v in h]
        self.Ts = float(scale.T_scale)
        self.T_off = float(scale.T_offset)
        self.pde_x = scale.scale_input(batch.pde_points)
        self.faces = []
        for face, pts in batch.boundary.items():
            if len(pts):
                check_on_face(face, pts, setup)
                self.faces.append((face, pts, scale.scale_input(pts)))
        self.n_bc = sum(len(p) for _, p, _ in self.faces)
        self.ic_x = scale.scale_input(batch.initial)
        self.data = None
        if batch.data is not None and len(batch.data) and "T" in batch.data.fields:
            self.data = (scale.scale_input(batch.data.points), np.asarray(batch.data.fields["T"], dtype=float))
        self.r_pde = setup.rho * setup.cp * self.Ts / scale.t_scale
        self.r_flux = setup.kappa * self.Ts / scale.L_char

    def counts(self) -> dict:
        return {"data": 0 if self.data is None else len(self.data[1]), "pde": len(self.pde_x), "bc": self.n_bc, "ic": len(self.ic_x)}

    def _T(self, y):
        return y * self.Ts + self.T_off

    def components(self, pv, acts, need=("data", "pde", "bc", "ic")) -> dict:
        s, Ts, h, dt = self.setup, self.Ts, self.h, self.dtype
        comps = {}
        if "pde" in need and len(self.pde_x):
            # seeds of 1/half-width make the summed second jet the physical Laplacian
            v, d1, d2 = mlp_jets(pv, acts, self.pde_x, axes=(0, 1, 2, 3), second=(0, 1, 2), dtype=dt,
                                 second_sum=True, axis_scale=[1.0 / hk for hk in h])
            st = ThermalState(T=self._T(v[:, 0]), T_t=d1[:, 3, 0] * Ts, T_xx=d2[:, 0, 0] * Ts)
            r = energy_residual(st, s) * (1.0 / self.r_pde)
            comps["pde"] = (r * r).mean()
        if "bc" in need and self.n_bc:
            terms = []
            for face, pts, x in self.faces:
                if face is Face.BOTTOM:
                    v, _, _ = mlp_jets(pv, acts, x, dtype=dt)
                    st = ThermalState(T=self._T(v[:, 0]))
                    terms.append(thermal_bc_residual(face, pts, st, s, check=False) * (1.0 / Ts))
                else:
                    v, d1, _ = mlp_jets(pv, acts, x, axes=(face.axis,), dtype=dt)
                    g = d1[:, 0, 0] * (Ts / h[face.axis])
                    grads = {0: {"T_x": g}, 1: {"T_y": g}, 2: {"T_z": g}}[face.axis]
                    st = ThermalState(T=self._T(v[:, 0]), **grads)
                    terms.append(thermal_bc_residual(face, pts, st, s, check=False) * (1.0 / self.r_flux))
            comps["bc"] = _sum_squares(terms) * (1.0 / self.n_bc)
        if "ic" in need and len(self.ic_x):
            v, _, _ = mlp_jets(pv, acts, self.ic_x, dtype=dt)
            r = (self._T(v[:, 0]) - s.T0) * (1.0 / Ts)
            comps["ic"] = (r * r).mean()
        if "data" in need and self.data is not None:
            x, T = self.data
            v, _, _ = mlp_jets(pv, acts, x, dtype=dt)
            r = (self._T(v[:, 0]) - T) * (1.0 / Ts)
            comps["data"] = (r * r).mean()
        return comps


class MechanicalLoss:
    """Equilibrium + constitutive consistency, fixed bottom / traction-free faces,
    zero initial state and optional labels for the stress-displacement net."""

    def __init__(self, setup: ProcessSetup, scale: ScaleSet, batch: CollocationBatch, temperature: Callable,
                 dtype=np.float64, fixing: str = "bottom"):
        self.setup, self.scale, self.dtype = setup, scale, dtype
        self.h = [float(v) for v in scale.half]
        self.us = float(scale.u_scale)
        self.ss = float(scale.sigma_scale)
        pde = batch.pde_points
        self.pde_x = scale.scale_input(pde)
        self.pde_T = np.asarray(temperature(pde), dtype=float)
        self.faces = []
        for face, pts in batch.boundary.items():
            if not len(pts):
                continue
            if face is Face.BOTTOM and fixing != "bottom":
                continue
            check_on_face(face, pts, setup)
            self.faces.append((face, len(pts)))
        bpts = [batch.boundary[f] for f, _ in self.faces]
        self.bc_x = scale.scale_input(np.concatenate(bpts)) if bpts else np.zeros((0, 4))
        self.n_bc = len(self.bc_x)
        self.ic_x = scale.scale_input(batch.initial)
        self.data = None
        if batch.data is not None and len(batch.data):
            names = [n for n in DISPLACEMENTS + STRESSES if n in batch.data.fields]
            if names:
                self.data = (scale.scale_input(batch.data.points), names,
                             {n: scale.to_network(n, batch.data.fields[n]) for n in names})
        self.r_eq = self.ss / scale.L_char

    def counts(self) -> dict:
        return {"data": 0 if self.data is None else len(self.data[0]), "pde": len(self.pde_x), "bc": self.n_bc, "ic": len(self.ic_x)}

    def components(self, pv, acts, need=("data", "pde", "bc", "ic")) -> dict:
        s, h, us, ss, dt = self.setup, self.h, self.us, self.ss, self.dtype
        comps = {}
        if "pde" in need and len(self.pde_x):
            inertia = s.inertia_enabled
            axes = (0, 1, 2, 3) if inertia else (0, 1, 2)
            v, d1, d2 = mlp_jets(pv, acts, self.pde_x, axes=axes, second=(3,) if inertia else (), dtype=dt)
            disp = tuple(v[:, i] * us for i in range(3))
            dgrad = tuple(tuple(d1[:, j, i] * (us / h[j]) for j in range(3)) for i in range(3))
            stress = tuple(v[:, 3 + c] * ss for c in range(6))
            sgrad = tuple(tuple(d1[:, j, 3 + c] * (ss / h[j]) for j in range(3)) for c in range(6))
            accel = tuple(d2[:, 0, i] * (us / h[3] ** 2) for i in range(3)) if inertia else None
            mech = MechanicalState(disp, dgrad, stress, sgrad, accel)
            eq = [r * (1.0 / self.r_eq) for r in equilibrium_residual(mech, s)]
            cons = [r * (1.0 / ss) for r in constitutive_consistency_residual(mech, self.pde_T, s)]
            comps["pde"] = _sum_squares(eq + cons) * (1.0 / len(self.pde_x))
        if "bc" in need and self.n_bc:
            v, _, _ = mlp_jets(pv, acts, self.bc_x, dtype=dt)
            terms, k = [], 0
            for face, n in self.faces:
                blk = v[k:k + n]
                k += n
                mech = MechanicalState(disp=tuple(blk[:, i] for i in range(3)), stress=tuple(blk[:, 3 + c] for c in range(6)))
                # outputs are already in network units: u/u_s and sigma/sigma_s
                terms.extend(mechanical_bc_residual(face, None, mech, check=False))
            comps["bc"] = _sum_squares(terms) * (1.0 / self.n_bc)
        if "ic" in need and len(self.ic_x):
            v, _, _ = mlp_jets(pv, acts, self.ic_x, dtype=dt)
            comps["ic"] = (v * v).sum() * (1.0 / len(self.ic_x))
        if "data" in need and self.data is not None:
            x, names, labels = self.data
            v, _, _ = mlp_jets(pv, acts, x, dtype=dt)
            out = list(DISPLACEMENTS + STRESSES)
            terms = [v[:, out.index(n)] - labels[n] for n in names]
            comps["data"] = _sum_squares(terms) * (1.0 / len(x))
        return comps


def loss_components(nets, batch: CollocationBatch, setup: ProcessSetup, scale: ScaleSet, stage: str,
                    weights: LossWeights | None = None, temperature: Callable | None = None) -> dict:
    """(L_data, L_pde, L_bc, L_ic) as floats for ``stage`` in {'thermal', 'mechanical'}.

    ``nets`` is the network being trained for that stage.  Terms with a
    nonzero weight but no points raise :class:`ConfigError`.
    """
    net = nets[0] if isinstance(nets, (list, tuple)) else nets
    problem = _make_problem(stage, setup, scale, batch, temperature)
    if weights is not None:
        _check_counts(problem, weights)
    comps = problem.components(_const_vars(net), net.activations)
    out = {k: 0.0 for k in ("data", "pde", "bc", "ic")}
    out.update({k: float(value_of(c)) for k, c in comps.items()})
    bad = {k: v for k, v in out.items() if not np.isfinite(v)}
    if bad:
        raise NonFiniteError(f"non-finite loss components {bad}", breakdown=out)
    return out


def _const_vars(net: MlpParams):
    return [Var(a) for a in net.arrays()]


def _make_problem(stage, setup, scale, batch, temperature=None, dtype=np.float64, fixing="bottom"):
    if stage == "thermal":
        return ThermalLoss(setup, scale, batch, dtype)
    if stage == "mechanical":
        if temperature is None:
            raise ConfigError("mechanical stage needs a temperature provider")
        return MechanicalLoss(setup, scale, batch, temperature, dtype, fixing)
    raise ConfigError(f"unknown stage {stage!r}")


def _check_counts(problem, weights: LossWeights) -> None:
    counts = problem.counts()
    for name in ("data", "pde", "bc", "ic"):
        if getattr(weights, name) > 0 and counts[name] == 0:
            raise ConfigError(f"loss term {name!r} has weight {getattr(weights, name)} but no points")


# ---------------------------------------------------------------------------
# records, validation
# ---------------------------------------------------------------------------

RECORD_FIELDS = ("epoch", "L_data", "L_pde", "L_bc", "L_ic", "total", "val_mse", "wall")


@dataclass
class TrainRecord:
    rows: list = field(default_factory=list)

    def append(self, **row) -> None:
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise ValueError("epochs must be strictly increasing")
        self.rows.append({k: row.get(k) for k in RECORD_FIELDS})

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r[name] is None else r[name] for r in self.rows], dtype=float)

    def deterministic_rows(self) -> list:
        """Rows without the wall-clock column (for reproducibility checks)."""
        return [{k: v for k, v in r.items() if k != "wall"} for r in self.rows]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.rows)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def read(cls, path) -> "TrainRecord":
        rec = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    rec.rows.append(json.loads(line))
        return rec

    def first_epoch_below(self, value: float) -> int | None:
        for r in self.rows:
            if r["val_mse"] is not None and r["val_mse"] <= value:
                return int(r["epoch"])
        return None


def validation_error(pred, ref, metric: str = "mse") -> float:
    """mse: mean squared difference; rmse: its root; relative_l2: ||p - f|| / ||f||."""
    p = np.asarray(pred, dtype=float).ravel()
    f = np.asarray(ref, dtype=float).ravel()
    if p.shape != f.shape or f.size == 0:
        raise ValueError("prediction and reference must be nonempty and the same size")
    d = p - f
    if metric == "mse":
        return float(np.mean(d * d))
    if metric == "rmse":
        return float(np.sqrt(np.mean(d * d)))
    if metric == "relative_l2":
        nf = float(np.linalg.norm(f))
        if nf == 0.0:
            raise ValueError("relative_l2 undefined for a zero reference")
        return float(np.linalg.norm(d) / nf)
    raise ValueError(f"unknown metric {metric!r}")


@dataclass
class ValidationSet:
    """Reference samples; the logged error is the MSE in network units averaged over fields."""

    samples: LabeledSamples
    names: tuple

    def error(self, net: MlpParams, scale: ScaleSet) -> float:
        pred = forward(net, scale, scale.scale_input(self.samples.points, check=False))
        errs = [validation_error(scale.to_network(n, pred[n]), scale.to_network(n, self.samples.fields[n])) for n in self.names]
        return float(np.mean(errs))


# ---------------------------------------------------------------------------
# optimisation loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 25000
    log_every: int = 100
    plateau_window: int = 2000
    plateau_tol: float = 1e-4
    early_stop: bool = True
    divergence: float = 1e6
    compute_dtype: str = "float64"
    target_val_mse: float | None = None

    def validate(self) -> None:
        if self.epochs < 0 or self.log_every < 1:
            raise ConfigError("epochs >= 0 and log_every >= 1 required")
        if self.compute_dtype not in ("float32", "float64"):
            raise ConfigError("compute_dtype must be float32 or float64")


@dataclass
class StageResult:
    net: MlpParams
    optimizer: AdamState
    record: TrainRecord
    epochs_run: int
    stop_reason: str


def run_stage(stage: str, net: MlpParams, setup: ProcessSetup, scale: ScaleSet, plan: SamplingPlan,
              weights: LossWeights, settings: TrainSettings, data: LabeledSamples | None = None,
              temperature: Callable | None = None, validation: ValidationSet | None = None,
              optimizer: AdamState | None = None, fixing: str = "bottom",
              callback: Callable | None = None, adam: OptimizerSettings | None = None) -> StageResult:
    """Full-batch Adam on one network.  An epoch is one update over all points."""
    settings.validate()
    weights.validate()
    dtype = np.float32 if settings.compute_dtype == "float32" else np.float64

    def build(p: SamplingPlan):
        b = make_batch(p, setup)
        b.data = data if weights.data > 0 else None
        prob = _make_problem(stage, setup, scale, b, temperature, dtype, fixing)
        _check_counts(prob, weights)
        return prob

    current_plan = plan
    problem = build(plan)
    need = tuple(k for k in ("data", "pde", "bc", "ic") if getattr(weights, k) > 0)
    acts = net.activations

    def loss_fn(pvars):
        comps = problem.components(pvars[0], acts, need)
        return total_loss(comps, weights), comps

    opt = optimizer if optimizer is not None else (adam or OptimizerSettings()).fresh(net.n_params)
    record = TrainRecord()
    flat = net.flat()
    t0 = time.perf_counter()
    best: list[tuple[int, float]] = []
    reason = "epochs"
    epoch = 0
    for epoch in range(settings.epochs + 1):
        if plan.resample_every > 0 and epoch > 0 and epoch % plan.resample_every == 0:
            nxt = resampled(plan, epoch)
            if nxt != current_plan:
                current_plan = nxt
                problem = build(nxt)
        cur = net.with_flat(flat)
        log_now = epoch % settings.log_every == 0 or epoch == settings.epochs
        if epoch == settings.epochs and not log_now:
            break
        try:
            res = loss_param_gradient(loss_fn, [cur])
        except NonFiniteError as exc:
            raise TrainingAborted(str(exc), record, exc.breakdown) from exc
        if log_now:
            val = validation.error(cur, scale) if validation is not None else None
            comps = {k: res.components.get(k, 0.0) for k in ("data", "pde", "bc", "ic")}
            record.append(epoch=epoch, L_data=comps["data"], L_pde=comps["pde"], L_bc=comps["bc"], L_ic=comps["ic"],
                          total=res.loss, val_mse=val, wall=time.perf_counter() - t0)
            if callback is not None:
                callback(record.rows[-1])
            if res.loss > settings.divergence:
                raise TrainingAborted(f"diverged: total loss {res.loss:.3e} at epoch {epoch}", record, res.components)
            prev = best[-1][1] if best else np.inf
            best.append((epoch, min(prev, res.loss)))
            if settings.target_val_mse is not None and val is not None and val <= settings.target_val_mse:
                reason = "target"
                break
            if settings.early_stop and _plateaued(best, settings):
                reason = "plateau"
                break
        if epoch == settings.epochs:
            break
        try:
            flat, opt = adam_step(flat, res.grads[0], opt)
        except NonFiniteError as exc:
            raise TrainingAborted(str(exc), record, res.components) from exc
    return StageResult(net.with_flat(flat), opt, record, epoch, reason)


def _plateaued(best, settings: TrainSettings) -> bool:
    e_now, l_now = best[-1]
    if e_now < settings.plateau_window:
        return False
    for e, l in reversed(best):
        if e <= e_now - settings.plateau_window:
            return (l - l_now) < settings.plateau_tol * l
    return False


# ---------------------------------------------------------------------------
# checkpoints and workflows
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    setup: ProcessSetup
    scale: ScaleSet
    plan: SamplingPlan
    weights: LossWeights
    temperature: MlpParams | None = None
    stress: MlpParams | None = None
    optimizers: dict = field(default_factory=dict)  # "temperature"/"stress" -> AdamState
    provenance: list = field(default_factory=list)
    created: str = ""
    notes: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    def nets(self) -> list[tuple[str, MlpParams]]:
        return [(k, n) for k, n in (("temperature", self.temperature), ("stress", self.stress)) if n is not None]

    @property
    def id(self) -> str:
        hsh = hashlib.sha256()
        for name, net in self.nets():
            hsh.update(name.encode())
            hsh.update(net.flat().astype("<f8").tobytes())
        hsh.update(json.dumps(asdict(self.setup), sort_keys=True).encode())
        hsh.update(json.dumps(self.provenance).encode())
        return hsh.hexdigest()[:16]

    @property
    def parent(self) -> str | None:
        return self.provenance[-1] if self.provenance else None


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


def attach_data(batch: CollocationBatch, samples: LabeledSamples | None, setup: ProcessSetup,
                window: tuple | None = None) -> CollocationBatch:
    """Return a copy of ``batch`` carrying labels, optionally restricted to a time window."""
    if samples is None or len(samples) == 0:
        return replace(batch, data=None)
    pts = np.asarray(samples.points, dtype=float)
    hi = np.array(list(setup.domain) + [setup.scan_duration])
    bad = np.flatnonzero(np.any((pts < -1e-9) | (pts > hi + 1e-9), axis=1))
    if len(bad):
        raise ValueError(f"labeled sample {int(bad[0])} at {pts[bad[0]].tolist()} lies outside the domain")
    if window is not None:
        samples = samples.window(*window)
    return replace(batch, data=samples)


def _validation_for(bundle, stage: str) -> ValidationSet | None:
    ref = getattr(bundle, "validation", None)
    if ref is None:
        return None
    names = ("T",) if stage == "thermal" else tuple(n for n in DISPLACEMENTS + STRESSES if n in ref.fields)
    if not names or any(n not in ref.fields for n in names):
        return None
    return ValidationSet(ref.select(names), names)


def train_thermal(bundle, init: MlpParams | None = None, provenance=None, callback=None) -> tuple[Checkpoint, TrainRecord]:
    """Optimise the temperature net of ``bundle`` (a :class:`~lmdpinn.config.RunConfig`)."""
    setup, scale = bundle.setup, bundle.scale
    net = init if init is not None else init_glorot(bundle.temperature_net)
    data = bundle.thermal_labels()
    res = run_stage("thermal", net, setup, scale, bundle.sampling, bundle.weights, bundle.thermal_training,
                    data=data, validation=_validation_for(bundle, "thermal"), callback=callback, adam=bundle.optimizer)
    ck = Checkpoint(setup, scale, bundle.sampling, bundle.weights, temperature=res.net,
                    optimizers={"temperature": res.optimizer}, provenance=list(provenance or []), created=_now(),
                    notes={"thermal_epochs": res.epochs_run, "thermal_stop": res.stop_reason})
    return ck, res.record


def train_mechanical(thermal: Checkpoint, bundle, init: MlpParams | None = None, temperature: Callable | None = None,
                     callback=None) -> tuple[Checkpoint, TrainRecord]:
    """Optimise the stress-displacement net with the temperature net frozen."""
    if thermal.temperature is None and temperature is None:
        raise ConfigError("mechanical training needs a trained temperature network")
    setup, scale = bundle.setup, thermal.scale
    temp = temperature or NetTemperature(thermal.temperature, scale)
    net = init if init is not None else init_glorot(bundle.stress_net)
    data = bundle.mechanical_labels()
    res = run_stage("mechanical", net, setup, scale, bundle.sampling, bundle.weights, bundle.mechanical_training,
                    data=data, temperature=temp, validation=_validation_for(bundle, "mechanical"),
                    fixing=bundle.fixing, callback=callback, adam=bundle.optimizer)
    opts = dict(thermal.optimizers)
    opts["stress"] = res.optimizer
    notes = dict(thermal.notes, mechanical_epochs=res.epochs_run, mechanical_stop=res.stop_reason)
    ck = Checkpoint(setup, scale, bundle.sampling, bundle.weights, temperature=thermal.temperature, stress=res.net,
                    optimizers=opts, provenance=list(thermal.provenance), created=_now(), notes=notes)
    return ck, res.record


def check_transferable(parent: Checkpoint, new_setup: ProcessSetup) -> None:
    if tuple(parent.setup.domain) != tuple(new_setup.domain) or parent.setup.scan_duration != new_setup.scan_duration:
        raise TransferError("geometry or time horizon differs from the parent checkpoint; its scale set would be invalid")
    if parent.version != CHECKPOINT_VERSION:
        raise TransferError(f"checkpoint version {parent.version} is not supported")


def warm_start(parent: Checkpoint, new_setup: ProcessSetup, bundle, stages=("thermal", "mechanical"),
               callback=None) -> tuple[Checkpoint, dict]:
    """Retrain both networks for ``new_setup`` starting from ``parent``'s weights.

    Optimiser state starts fresh; the result's provenance lists every ancestor.
    """
    check_transferable(parent, new_setup)
    if bundle.setup == new_setup:
        # labels and validation already belong to the new setup
        bundle = replace(bundle, scale_override=parent.scale)
    else:
        bundle = bundle.with_setup(new_setup, scale=parent.scale)
    records = {}
    prov = list(parent.provenance) + [parent.id]
    ck = replace(parent, setup=new_setup, optimizers={}, provenance=prov)
    if "thermal" in stages and parent.temperature is not None:
        ck_t, records["thermal"] = train_thermal(bundle, init=parent.temperature, provenance=prov, callback=callback)
        ck = replace(ck_t, stress=parent.stress)
    if "mechanical" in stages and parent.stress is not None:
        ck, records["mechanical"] = train_mechanical(ck, bundle, init=parent.stress, callback=callback)
    ck.provenance = prov
    ck.notes = dict(ck.notes, parent=parent.id)
    return ck, records


def evaluate_fields(ck: Checkpoint, samples: LabeledSamples, names=None, metrics=("mse", "rmse", "relative_l2")) -> dict:
    """Per-field metrics of a checkpoint against reference samples (physical units)."""
    out = {}
    x = ck.scale.scale_input(samples.points, check=False)
    preds = {}
    if ck.temperature is not None:
        preds.update(forward(ck.temperature, ck.scale, x))
    if ck.stress is not None:
        preds.update(forward(ck.stress, ck.scale, x))
    names = names or [n for n in samples.fields if n in preds]
    for n in names:
        row = {}
        for m in metrics:
            try:
                row[m] = validation_error(preds[n], samples.fields[n], m)
            except ValueError:
                row[m] = None
        out[n] = row
    return out
