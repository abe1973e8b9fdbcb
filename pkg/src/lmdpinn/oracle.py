"""Reference solutions on a structured grid.

* :func:`fd_heat_solve` -- explicit vertex-centred finite differences for the
  transient heat equation with laser/convection/radiation flux on the top and
  lateral faces and a fixed ambient temperature on the bottom.  Boundary nodes
  own half (edge: quarter, corner: eighth) cells, which is the same update the
  ghost-node treatment of the flux condition gives, and makes the scheme exactly
  conservative.
* :func:`elastic_solve` -- quasi-static thermoelasticity with trilinear hexahedra
  and Jacobi-preconditioned conjugate gradients.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .network import ConfigError, DISPLACEMENTS, STRESSES
from .physics import ProcessSetup, laser_flux, stress_from_strain, strain_from_displacement
from .sampling import LabeledSamples


class SolverError(RuntimeError):
    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history or []


@dataclass(frozen=True)
class Grid:
    shape: tuple = (37, 17, 9)
    lengths: tuple = (18e-3, 8e-3, 4e-3)

    def __post_init__(self):
        if len(self.shape) != 3 or min(self.shape) < 2:
            raise ConfigError(f"grid needs at least 2 nodes per axis, got {self.shape}")
        if min(self.lengths) <= 0:
            raise ConfigError("grid lengths must be positive")

    @classmethod
    def for_setup(cls, setup: ProcessSetup, shape=(37, 17, 9)) -> "Grid":
        return cls(tuple(int(n) for n in shape), tuple(float(L) for L in setup.domain))

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(tuple((n - 1) * factor + 1 for n in self.shape), self.lengths)

    @property
    def spacing(self) -> tuple:
        return tuple(L / (n - 1) for L, n in zip(self.lengths, self.shape))

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(0.0, L, n) for L, n in zip(self.lengths, self.shape)]

    def coords(self) -> np.ndarray:
        """(n_nodes, 3) node coordinates in C order over (x, y, z)."""
        X, Y, Z = np.meshgrid(*self.axes(), indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def node_weights(self) -> list[np.ndarray]:
        out = []
        for n in self.shape:
            w = np.ones(n)
            w[0] = w[-1] = 0.5
            out.append(w)
        return out

    def cell_volumes(self) -> np.ndarray:
        (wx, wy, wz), (dx, dy, dz) = self.node_weights(), self.spacing
        return (wx * dx)[:, None, None] * (wy * dy)[None, :, None] * (wz * dz)[None, None, :]


@dataclass
class FieldSeries:
    grid: Grid
    times: np.ndarray
    T: np.ndarray  # (nt, nx, ny, nz)
    disp: np.ndarray | None = None  # (nt, 3, nx, ny, nz)
    stress: np.ndarray | None = None  # (nt, 6, nx, ny, nz)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.T.shape != (len(self.times),) + tuple(self.grid.shape):
            raise ValueError("temperature array does not match grid/times")

    @property
    def has_mechanics(self) -> bool:
        return self.disp is not None and self.stress is not None

    def field(self, name: str) -> np.ndarray:
        """(nt, nx, ny, nz) array for a named field."""
        if name == "T":
            return self.T
        if name in DISPLACEMENTS:
            return self.disp[:, DISPLACEMENTS.index(name)]
        if name in STRESSES:
            return self.stress[:, STRESSES.index(name)]
        raise KeyError(name)

    def names(self) -> list[str]:
        return ["T"] + (list(DISPLACEMENTS + STRESSES) if self.has_mechanics else [])

    def time_index(self, t: float, tol: float = 1e-9) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol:
            raise KeyError(f"no output at t = {t}")
        return i

    def temperature_at(self, points) -> np.ndarray:
        """Trilinear-in-space, linear-in-time interpolation of T at (x, y, z, t) points."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator(
            (self.times, *self.grid.axes()), self.T, bounds_error=False, fill_value=None
        )
        q = np.column_stack([np.clip(p[:, 3], self.times[0], self.times[-1]), p[:, 0], p[:, 1], p[:, 2]])
        return interp(q)

    def to_csv(self, path) -> None:
        xyz = self.grid.coords()
        cols = ["t", "x", "y", "z", "T"] + list(DISPLACEMENTS + STRESSES)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for it, t in enumerate(self.times):
                block = [np.full(len(xyz), t), xyz[:, 0], xyz[:, 1], xyz[:, 2], self.T[it].ravel()]
                for name in DISPLACEMENTS + STRESSES:
                    block.append(self.field(name)[it].ravel() if self.has_mechanics else np.full(len(xyz), np.nan))
                for row in np.column_stack(block):
                    w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "FieldSeries":
        data = np.genfromtxt(path, delimiter=",", names=True)
        t = np.unique(data["t"])
        axes = [np.unique(data[c]) for c in ("x", "y", "z")]
        shape = tuple(len(a) for a in axes)
        grid = Grid(shape, tuple(float(a[-1]) for a in axes))
        nt = len(t)
        order = np.lexsort((data["z"], data["y"], data["x"], data["t"]))
        data = data[order]
        T = data["T"].reshape((nt,) + shape)
        disp = stress = None
        if not np.all(np.isnan(data["u"])):
            disp = np.stack([data[n].reshape((nt,) + shape) for n in DISPLACEMENTS], axis=1)
            stress = np.stack([data[n].reshape((nt,) + shape) for n in STRESSES], axis=1)
        return cls(grid, t, T, disp, stress)


def stable_dt(grid: Grid, setup: ProcessSetup, safety: float = 0.9) -> float:
    inv = sum(1.0 / d**2 for d in grid.spacing)
    return safety * (setup.rho * setup.cp / setup.kappa) / inv / 2.0


def fd_heat_solve(grid: Grid, setup: ProcessSetup, t_end: float | None = None, output_rate: float = 10.0, safety: float = 0.9,
                  T_init=None, insulated_bottom: bool = False) -> FieldSeries:
    """Explicit transient heat conduction from a uniform ambient start.

    ``T_init`` (nodal array) and ``insulated_bottom`` are test-mode options for
    analytic checks; the defaults are the process model (ambient start, bottom
    held at T0).

    ``info`` of the result carries the enthalpy bookkeeping: ``energy_in``
    (J, time-integrated heat entering the free nodes across the boundary,
    including conduction from the fixed bottom nodes) and ``enthalpy_change``
    (J, sum of rho*cp*dT*V over free nodes).
    """
    t_end = setup.scan_duration if t_end is None else float(t_end)
    interval = 1.0 / output_rate
    n_out = int(round(t_end / interval))
    if abs(n_out * interval - t_end) > 1e-9 * max(t_end, 1.0):
        raise ConfigError(f"t_end {t_end} is not a multiple of the output interval {interval}")
    dt_max = stable_dt(grid, setup, safety)
    sub = max(1, math.ceil(interval / dt_max - 1e-12))
    dt = interval / sub
    if not (dt > 0 and dt <= dt_max * (1 + 1e-12)):
        raise ConfigError(f"cannot satisfy explicit stability limit (dt = {dt}, limit {dt_max})")

    nx, ny, nz = grid.shape
    dx, dy, dz = grid.spacing
    wx, wy, wz = grid.node_weights()
    V = grid.cell_volumes()
    C = setup.rho * setup.cp * V
    k = setup.kappa
    Gx = k * ((wy * dy)[:, None] * (wz * dz)[None, :])[None] / dx
    Gy = k * ((wx * dx)[:, None] * (wz * dz)[None, :])[:, None, :] / dy
    Gz = k * ((wx * dx)[:, None] * (wy * dy)[None, :])[:, :, None] / dz
    xs, ys, zs = grid.axes()
    A_top = (wx * dx)[:, None] * (wy * dy)[None, :]
    A_x = (wy * dy)[:, None] * (wz * dz)[None, :]
    A_y = (wx * dx)[:, None] * (wz * dz)[None, :]
    Xt, Yt = np.meshgrid(xs, ys, indexing="ij")

    free = np.ones(grid.shape, dtype=bool)
    if not insulated_bottom:
        free[:, :, 0] = False
    if T_init is None:
        T = np.full(grid.shape, float(setup.T0))
    else:
        T = np.array(T_init, dtype=float).reshape(grid.shape)
    outputs = [T.copy()]
    energy_in = 0.0

    def surface_loss(Ts):
        return setup.h * (Ts - setup.T0) + setup.sigma_sb * setup.emissivity * (Ts**4 - setup.T0**4)

    for step in range(n_out * sub):
        t = step * dt
        Q = np.zeros(grid.shape)
        q = Gx * (T[1:] - T[:-1])
        Q[:-1] += q
        Q[1:] -= q
        q = Gy * (T[:, 1:] - T[:, :-1])
        Q[:, :-1] += q
        Q[:, 1:] -= q
        q = Gz * (T[:, :, 1:] - T[:, :, :-1])
        Q[:, :, :-1] += q
        Q[:, :, 1:] -= q
        B = np.zeros(grid.shape)
        ql = laser_flux(Xt, Yt, np.full_like(Xt, t), setup)
        B[:, :, -1] -= (ql + surface_loss(T[:, :, -1])) * A_top
        B[0] -= surface_loss(T[0]) * A_x
        B[-1] -= surface_loss(T[-1]) * A_x
        B[:, 0] -= surface_loss(T[:, 0]) * A_y
        B[:, -1] -= surface_loss(T[:, -1]) * A_y
        net = Q + B
        # heat crossing into the free region: boundary flux on free nodes plus
        # conduction out of the fixed bottom layer
        energy_in += dt * float(B[free].sum())
        if not insulated_bottom:
            energy_in += dt * float((Gz[:, :, 0] * (T[:, :, 0] - T[:, :, 1])).sum())
        T = T + np.where(free, dt * net / C, 0.0)
        if (step + 1) % sub == 0:
            outputs.append(T.copy())

    T_all = np.stack(outputs)
    dH = float((C[free] * (T_all[-1][free] - T_all[0][free])).sum())
    times = np.arange(n_out + 1) * interval
    info = {"dt": dt, "substeps": sub, "energy_in": energy_in, "enthalpy_change": dH}
    return FieldSeries(grid, times, T_all, info=info)


# ---------------------------------------------------------------------------
# elasticity
# ---------------------------------------------------------------------------

_GAUSS = np.array([-1.0, 1.0]) / math.sqrt(3.0)
_CORNERS = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=float)


def elasticity_matrix(E: float, nu: float) -> np.ndarray:
    """Voigt stiffness for engineering shear strains, order xx, yy, zz, xy, yz, zx."""
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[[0, 1, 2], [0, 1, 2]] += 2 * mu
    D[[3, 4, 5], [3, 4, 5]] = mu
    return D


def _hex_element(spacing, D):
    """Stiffness (24x24) and thermal-load map (24x8) of one trilinear brick."""
    h = np.asarray(spacing)
    Ke = np.zeros((24, 24))
    Ge = np.zeros((24, 8))
    m = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    detJ = np.prod(h) / 8.0
    for gx in _GAUSS:
        for gy in _GAUSS:
            for gz in _GAUSS:
                g = np.array([gx, gy, gz])
                s = 2 * _CORNERS - 1  # corner signs in reference coords
                N = np.prod(0.5 * (1 + s * g), axis=1)
                dN = np.empty((8, 3))
                for a in range(3):
                    o = [b for b in range(3) if b != a]
                    dN[:, a] = 0.5 * s[:, a] * np.prod(0.5 * (1 + s[:, o] * g[o]), axis=1) * 2.0 / h[a]
                B = np.zeros((6, 24))
                for n in range(8):
                    bx, by, bz = dN[n]
                    c = 3 * n
                    B[0, c] = bx
                    B[1, c + 1] = by
                    B[2, c + 2] = bz
                    B[3, c], B[3, c + 1] = by, bx
                    B[4, c + 1], B[4, c + 2] = bz, by
                    B[5, c], B[5, c + 2] = bz, bx
                Ke += B.T @ D @ B * detJ
                Ge += np.outer(B.T @ D @ m, N) * detJ
    return Ke, Ge


def _element_nodes(grid: Grid) -> np.ndarray:
    nx, ny, nz = grid.shape
    I, J, K = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), np.arange(nz - 1), indexing="ij")
    I, J, K = I.ravel(), J.ravel(), K.ravel()
    cols = []
    for ci, cj, ck in _CORNERS.astype(int):
        cols.append(((I + ci) * ny + (J + cj)) * nz + (K + ck))
    return np.column_stack(cols)


@dataclass
class ElasticSystem:
    grid: Grid
    K: sp.csr_matrix
    Ge: np.ndarray
    elems: np.ndarray
    fixed: np.ndarray  # boolean over dofs

    @property
    def free(self) -> np.ndarray:
        return ~self.fixed

    def load(self, dT_nodes: np.ndarray, alpha: float) -> np.ndarray:
        th = alpha * dT_nodes.ravel()[self.elems]  # (n_el, 8)
        fe = th @ self.Ge.T  # (n_el, 24)
        dofs = (3 * self.elems[:, :, None] + np.arange(3)[None, None, :]).reshape(len(self.elems), 24)
        f = np.zeros(3 * self.grid.n_nodes)
        np.add.at(f, dofs.ravel(), fe.ravel())
        return f

    def apply(self, d: np.ndarray) -> np.ndarray:
        """Stiffness action restricted to free dofs (fixed dofs held at zero)."""
        full = np.zeros(self.K.shape[0])
        full[self.free] = d
        return (self.K @ full)[self.free]


def build_elastic_system(grid: Grid, setup: ProcessSetup, fixing: str = "bottom") -> ElasticSystem:
    D = elasticity_matrix(setup.E, setup.nu)
    Ke, Ge = _hex_element(grid.spacing, D)
    elems = _element_nodes(grid)
    dofs = (3 * elems[:, :, None] + np.arange(3)[None, None, :]).reshape(len(elems), 24)
    rows = np.repeat(dofs, 24, axis=1).ravel()
    cols = np.tile(dofs, (1, 24)).ravel()
    vals = np.tile(Ke.ravel(), len(elems))
    ndof = 3 * grid.n_nodes
    K = sp.coo_matrix((vals, (rows, cols)), shape=(ndof, ndof)).tocsr()
    K.sum_duplicates()
    fixed = np.zeros(ndof, dtype=bool)
    nx, ny, nz = grid.shape
    node = lambda i, j, k: (i * ny + j) * nz + k
    if fixing == "bottom":
        bottom = np.array([node(i, j, 0) for i in range(nx) for j in range(ny)])
        for c in range(3):
            fixed[3 * bottom + c] = True
    elif fixing == "minimal":
        # 3-2-1 support: removes rigid motion without restraining expansion
        a, b, c = node(0, 0, 0), node(nx - 1, 0, 0), node(0, ny - 1, 0)
        fixed[[3 * a, 3 * a + 1, 3 * a + 2, 3 * b + 1, 3 * b + 2, 3 * c + 2]] = True
    else:
        raise ConfigError(f"unknown fixing {fixing!r}")
    return ElasticSystem(grid, K, Ge, elems, fixed)


def conjugate_gradient(apply, b, diag, rtol=1e-8, max_iter=20000):
    """Jacobi-preconditioned CG; returns (x, history of relative residuals)."""
    x = np.zeros_like(b)
    nb = np.linalg.norm(b)
    if nb == 0:
        return x, [0.0]
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = r @ z
    hist = [1.0]
    for _ in range(max_iter):
        Ap = apply(p)
        a = rz / (p @ Ap)
        x += a * p
        r -= a * Ap
        rel = np.linalg.norm(r) / nb
        hist.append(rel)
        if rel <= rtol:
            return x, hist
        z = r / diag
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not reach {rtol} in {max_iter} iterations (last {hist[-1]:.3e})", hist)


@dataclass
class ElasticSolution:
    disp: np.ndarray  # (3, nx, ny, nz)
    stress: np.ndarray  # (6, nx, ny, nz)
    residual: float
    history: list


def elastic_solve(grid: Grid, setup: ProcessSetup, T_nodes, fixing: str = "bottom", rtol: float = 1e-8,
                  system: ElasticSystem | None = None) -> ElasticSolution:
    """Static equilibrium under thermal strain; stresses recovered at nodes."""
    T_nodes = np.asarray(T_nodes, dtype=float).reshape(grid.shape)
    system = system or build_elastic_system(grid, setup, fixing)
    f = system.load(T_nodes - setup.T_ref, setup.alpha)
    free = system.free
    ff = f[free]
    diag = system.K.diagonal()[free]
    d, hist = conjugate_gradient(system.apply, ff, diag, rtol=rtol)
    nf = np.linalg.norm(ff)
    res = float(np.linalg.norm(system.apply(d) - ff) / nf) if nf > 0 else 0.0
    full = np.zeros(3 * grid.n_nodes)
    full[free] = d
    disp = full.reshape(grid.shape + (3,)).transpose(3, 0, 1, 2).copy()
    stress = recover_stress(grid, setup, disp, T_nodes)
    return ElasticSolution(disp, stress, res, hist)


def recover_stress(grid: Grid, setup: ProcessSetup, disp: np.ndarray, T_nodes: np.ndarray) -> np.ndarray:
    """Nodal stresses from central differences of displacement (one-sided on faces)."""
    from .physics import MechanicalState

    grads = [np.gradient(disp[i], *grid.spacing) for i in range(3)]
    mech = MechanicalState(disp_grad=tuple(tuple(grads[i][j] for j in range(3)) for i in range(3)))
    eps = strain_from_displacement(mech, T_nodes, setup)
    return np.stack(stress_from_strain(eps, setup))


def solve_series_mechanics(series: FieldSeries, setup: ProcessSetup, fixing: str = "bottom", rtol: float = 1e-8) -> FieldSeries:
    """Quasi-static displacement/stress at every output time of a heat solution."""
    system = build_elastic_system(series.grid, setup, fixing)
    disp, stress, res = [], [], []
    for it in range(len(series.times)):
        sol = elastic_solve(series.grid, setup, series.T[it], rtol=rtol, system=system)
        disp.append(sol.disp)
        stress.append(sol.stress)
        res.append(sol.residual)
    info = dict(series.info)
    info["cg_residuals"] = res
    return FieldSeries(series.grid, series.times, series.T, np.stack(disp), np.stack(stress), info)


def export_labels(series: FieldSeries, window=None, stride: int = 1, names=None) -> LabeledSamples:
    """Grid-node samples (physical units) for every output time inside ``window``."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    t0, t1 = (series.times[0], series.times[-1]) if window is None else window
    tol = 1e-9
    if t0 < series.times[0] - tol or t1 > series.times[-1] + tol or t1 < t0:
        raise ValueError(f"window [{t0}, {t1}] outside series [{series.times[0]}, {series.times[-1]}]")
    sel = np.flatnonzero((series.times >= t0 - tol) & (series.times <= t1 + tol))
    if len(sel) == 0:
        raise ValueError(f"window [{t0}, {t1}] contains no output times")
    names = list(names) if names is not None else series.names()
    xyz = series.grid.coords()[::stride]
    pts, vals = [], {n: [] for n in names}
    for it in sel:
        pts.append(np.column_stack([xyz, np.full(len(xyz), series.times[it])]))
        for n in names:
            vals[n].append(series.field(n)[it].ravel()[::stride])
    return LabeledSamples(np.concatenate(pts), {n: np.concatenate(v) for n, v in vals.items()})
