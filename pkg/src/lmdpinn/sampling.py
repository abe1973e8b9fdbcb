"""Collocation point generation: top-biased interior, moving refined box, faces, t = 0 slab."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .network import ConfigError
from .physics import Face, ProcessSetup


@dataclass(frozen=True)
class SamplingPlan:
    n_interior: int = 8000
    n_boundary_per_face: int = 1500
    n_initial: int = 2000
    n_refined: int = 4000
    depth_bias: float = 3.0
    refined_box_halfwidth: float = 1e-3
    seed: int = 0
    resample_every: int = 0
    n_top_refined: int = 0

    def validate(self) -> None:
        for name in ("n_interior", "n_boundary_per_face", "n_initial", "n_refined", "resample_every", "n_top_refined"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not self.depth_bias > 0:
            raise ConfigError("depth_bias must be > 0")
        if self.refined_box_halfwidth < 0:
            raise ConfigError("refined_box_halfwidth must be >= 0")


@dataclass
class LabeledSamples:
    """Physical-unit labels at space-time points: ``fields[name]`` has one value per point."""

    points: np.ndarray
    fields: dict

    def __len__(self) -> int:
        return len(self.points)

    def window(self, t0: float, t1: float, tol: float = 1e-9) -> "LabeledSamples":
        keep = (self.points[:, 3] >= t0 - tol) & (self.points[:, 3] <= t1 + tol)
        return LabeledSamples(self.points[keep], {k: v[keep] for k, v in self.fields.items()})

    def select(self, names) -> "LabeledSamples":
        return LabeledSamples(self.points, {k: self.fields[k] for k in names if k in self.fields})


@dataclass
class CollocationBatch:
    interior: np.ndarray
    refined: np.ndarray
    boundary: dict  # Face -> (n, 4)
    initial: np.ndarray
    data: LabeledSamples | None = None

    @property
    def pde_points(self) -> np.ndarray:
        return np.concatenate([self.interior, self.refined])

    def counts(self) -> dict:
        out = {"interior": len(self.interior), "refined": len(self.refined), "initial": len(self.initial)}
        out.update({f.label: len(p) for f, p in self.boundary.items()})
        out["data"] = 0 if self.data is None else len(self.data)
        return out

    def tagged(self):
        """Yield ``(tag, points)`` pairs for every point set."""
        yield "interior", self.interior
        yield "refined", self.refined
        for f, p in self.boundary.items():
            yield f.label, p
        yield "initial", self.initial
        if self.data is not None:
            yield "data", self.data.points


def _rng(plan: SamplingPlan, stream: int) -> np.random.Generator:
    return np.random.default_rng([plan.seed, stream])


def _top_biased_z(rng, n, Lz, bias):
    return Lz * (1.0 - rng.uniform(0.0, 1.0, n) ** bias)


def sample_interior(plan: SamplingPlan, setup: ProcessSetup) -> np.ndarray:
    """Uniform in x, y, t; z = Lz * (1 - U**depth_bias) so density grows toward the top."""
    plan.validate()
    Lx, Ly, Lz = setup.domain
    if min(Lx, Ly, Lz) <= 0:
        raise ConfigError("zero-volume domain")
    rng = _rng(plan, 1)
    n = plan.n_interior
    x = rng.uniform(0.0, Lx, n)
    y = rng.uniform(0.0, Ly, n)
    z = _top_biased_z(rng, n, Lz, plan.depth_bias)
    t = rng.uniform(0.0, setup.scan_duration, n)
    return np.column_stack([x, y, z, t])


def _beam_box(rng, plan: SamplingPlan, setup: ProcessSetup, n: int):
    Lx, Ly, _ = setup.domain
    hw = plan.refined_box_halfwidth
    t = rng.uniform(0.0, setup.scan_duration, n)
    xc, yc = setup.beam_center(t)
    x = np.clip(xc + rng.uniform(-hw, hw, n), 0.0, Lx)
    y = np.clip(yc + rng.uniform(-hw, hw, n), 0.0, Ly)
    return x, y, t


def sample_refined(plan: SamplingPlan, setup: ProcessSetup) -> np.ndarray:
    """Points in a square box that travels with the beam centre, clamped to the domain."""
    rng = _rng(plan, 2)
    n = plan.n_refined
    x, y, t = _beam_box(rng, plan, setup, n)
    z = _top_biased_z(rng, n, setup.domain[2], plan.depth_bias)
    return np.column_stack([x, y, z, t])


def sample_boundary(plan: SamplingPlan, setup: ProcessSetup) -> dict:
    rng = _rng(plan, 3)
    n = plan.n_boundary_per_face
    out = {}
    for face in Face:
        pts = np.column_stack([
            rng.uniform(0.0, setup.domain[0], n),
            rng.uniform(0.0, setup.domain[1], n),
            rng.uniform(0.0, setup.domain[2], n),
            rng.uniform(0.0, setup.scan_duration, n),
        ])
        pts[:, face.axis] = face.coordinate(setup)
        out[face] = pts
    if plan.n_top_refined:
        # extra top-face points in the moving beam box, where the flux varies fastest
        x, y, t = _beam_box(_rng(plan, 5), plan, setup, plan.n_top_refined)
        extra = np.column_stack([x, y, np.full_like(x, setup.domain[2]), t])
        out[Face.TOP] = np.concatenate([out[Face.TOP], extra])
    return out


def sample_initial(plan: SamplingPlan, setup: ProcessSetup) -> np.ndarray:
    rng = _rng(plan, 4)
    n = plan.n_initial
    return np.column_stack([
        rng.uniform(0.0, setup.domain[0], n),
        rng.uniform(0.0, setup.domain[1], n),
        rng.uniform(0.0, setup.domain[2], n),
        np.zeros(n),
    ])


def make_batch(plan: SamplingPlan, setup: ProcessSetup) -> CollocationBatch:
    plan.validate()
    return CollocationBatch(
        interior=sample_interior(plan, setup),
        refined=sample_refined(plan, setup),
        boundary=sample_boundary(plan, setup),
        initial=sample_initial(plan, setup),
    )


def resampled(plan: SamplingPlan, epoch: int) -> SamplingPlan:
    """Plan for periodic resampling: a new seed stream per resampling period."""
    if plan.resample_every <= 0:
        return plan
    k = epoch // plan.resample_every
    return replace(plan, seed=int(plan.seed) * 1_000_003 + k)


def write_points_csv(batch: CollocationBatch, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "t", "tag"])
        for tag, pts in batch.tagged():
            for p in pts:
                w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(p[3])), tag])
