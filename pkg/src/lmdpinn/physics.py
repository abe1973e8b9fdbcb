"""Pointwise residuals of the thermoelastic laser-deposition model, in SI units.

Every function is elementwise and works on floats, numpy arrays, or tape
:class:`~lmdpinn.autodiff.Var` objects, so the same code serves the training
losses, the oracle and the tests.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, fields

import numpy as np

from .autodiff import value_of

STEFAN_BOLTZMANN = 5.670374419e-8
# (i, j) -> Voigt index in (xx, yy, zz, xy, yz, zx)
VOIGT = {(0, 0): 0, (1, 1): 1, (2, 2): 2, (0, 1): 3, (1, 0): 3, (1, 2): 4, (2, 1): 4, (2, 0): 5, (0, 2): 5}


class GeometryError(ValueError):
    pass


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class ProcessSetup:
    """Laser, material (Ti-6Al-4V), environment, geometry and scan constants, SI units."""

    P: float = 100.0
    eta: float = 0.4
    r_b: float = 1.5e-3
    v: float = 10e-3
    rho: float = 4122.0
    cp: float = 831.0
    kappa: float = 35.0
    emissivity: float = 0.4
    E: float = 209e9
    nu: float = 0.28
    alpha: float = 9.0e-6
    h: float = 20.0
    sigma_sb: float = STEFAN_BOLTZMANN
    T0: float = 298.0
    T_ref: float = 298.0
    scan_start: tuple = (4e-3, 4e-3)
    scan_duration: float = 1.0
    domain: tuple = (18e-3, 8e-3, 4e-3)
    inertia_enabled: bool = False
    laser_mode: str = "radial"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.nu < 0.5:
            raise MaterialError(f"nu (Poisson ratio) must lie in (0, 0.5), got {self.nu}")
        for name in ("rho", "cp", "kappa", "E", "alpha", "r_b", "scan_duration", "T0", "T_ref"):
            if not getattr(self, name) > 0:
                raise MaterialError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("P", "eta", "v", "h", "emissivity", "sigma_sb"):
            if getattr(self, name) < 0:
                raise MaterialError(f"{name} must be non-negative, got {getattr(self, name)}")
        if len(self.domain) != 3 or min(self.domain) <= 0:
            raise MaterialError(f"domain must be three positive lengths, got {self.domain}")
        if self.laser_mode not in ("radial", "line"):
            raise MaterialError(f"laser_mode must be 'radial' or 'line', got {self.laser_mode!r}")

    @property
    def diffusivity(self) -> float:
        return self.kappa / (self.rho * self.cp)

    def beam_center(self, t):
        t = np.asarray(t, dtype=float)
        return self.scan_start[0] + self.v * t, np.full_like(t, self.scan_start[1])

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class Face(enum.Enum):
    TOP = ("top", 2, 1)
    BOTTOM = ("bottom", 2, -1)
    XMIN = ("-x", 0, -1)
    XMAX = ("+x", 0, 1)
    YMIN = ("-y", 1, -1)
    YMAX = ("+y", 1, 1)

    @property
    def label(self) -> str:
        return self.value[0]

    @property
    def axis(self) -> int:
        return self.value[1]

    @property
    def sign(self) -> int:
        return self.value[2]

    @property
    def normal(self) -> np.ndarray:
        n = np.zeros(3)
        n[self.axis] = self.sign
        return n

    def coordinate(self, setup: ProcessSetup) -> float:
        return float(setup.domain[self.axis]) if self.sign > 0 else 0.0

    @classmethod
    def from_label(cls, label: str) -> "Face":
        for f in cls:
            if f.label == label:
                return f
        raise KeyError(label)


def check_on_face(face: Face, point, setup: ProcessSetup, tol: float = 1e-9) -> None:
    p = np.atleast_2d(np.asarray(point, dtype=float))
    off = np.abs(p[:, face.axis] - face.coordinate(setup))
    if np.any(off > tol):
        i = int(np.argmax(off))
        raise GeometryError(f"point {p[i, :3].tolist()} is {off[i]:.3g} m off the {face.label} face")


# ---------------------------------------------------------------------------
# thermal
# ---------------------------------------------------------------------------

def laser_peak_flux(setup: ProcessSetup) -> float:
    return 2.0 * setup.eta * setup.P / (np.pi * setup.r_b**2)


def laser_flux(x, y, t, setup: ProcessSetup):
    """Gaussian beam flux in W/m^2, negative (into the body); zero after the scan ends."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    xc = setup.scan_start[0] + setup.v * t
    r2 = (x - xc) ** 2
    if setup.laser_mode == "radial":
        r2 = r2 + (np.asarray(y, dtype=float) - setup.scan_start[1]) ** 2
    q = -laser_peak_flux(setup) * np.exp(-2.0 * r2 / setup.r_b**2)
    return np.where((t >= 0) & (t <= setup.scan_duration), q, 0.0)


def convective_flux(T, setup: ProcessSetup):
    return setup.h * (T - setup.T0)


def radiative_flux(T, setup: ProcessSetup):
    if np.any(np.asarray(value_of(T)) < 0):
        raise ValueError("negative absolute temperature in radiative flux")
    return setup.sigma_sb * setup.emissivity * (T**4 - setup.T0**4)


@dataclass
class ThermalState:
    T: object
    T_t: object = 0.0
    T_x: object = 0.0
    T_y: object = 0.0
    T_z: object = 0.0
    T_xx: object = 0.0
    T_yy: object = 0.0
    T_zz: object = 0.0

    def grad(self, axis: int):
        return (self.T_x, self.T_y, self.T_z)[axis]


def energy_residual(state: ThermalState, setup: ProcessSetup):
    """rho*cp*dT/dt - kappa*laplacian(T), W/m^3."""
    return setup.rho * setup.cp * state.T_t - setup.kappa * (state.T_xx + state.T_yy + state.T_zz)


def thermal_bc_residual(face: Face, point, state: ThermalState, setup: ProcessSetup, check: bool = True):
    """Flux balance on top/lateral faces (W/m^2); T - T0 on the bottom face (K)."""
    if check:
        check_on_face(face, point, setup)
    if face is Face.BOTTOM:
        return state.T - setup.T0
    p = np.atleast_2d(np.asarray(point, dtype=float))
    dTdn = state.grad(face.axis) * float(face.sign)
    q = convective_flux(state.T, setup) + radiative_flux(state.T, setup)
    if face is Face.TOP:
        ql = laser_flux(p[:, 0], p[:, 1], p[:, 3], setup)
        if np.ndim(value_of(state.T)) == 0:
            ql = ql[0]
        q = q + ql
    return -setup.kappa * dTdn - q


# ---------------------------------------------------------------------------
# mechanical
# ---------------------------------------------------------------------------

@dataclass
class MechanicalState:
    """Displacements, their gradients, stresses (Voigt order) and stress gradients.

    ``disp_grad[i][j]`` is d u_i / d x_j; ``stress_grad[c][j]`` is
    d sigma_c / d x_j; ``accel`` holds second time derivatives of u, v, w.
    """

    disp: tuple = (0.0, 0.0, 0.0)
    disp_grad: tuple = ((0.0, 0.0, 0.0),) * 3
    stress: tuple = (0.0,) * 6
    stress_grad: tuple = ((0.0, 0.0, 0.0),) * 6
    accel: tuple | None = None


def strain_from_displacement(mech: MechanicalState, T, setup: ProcessSetup) -> tuple:
    """Mechanical strains with the thermal part removed from the normal components."""
    g = mech.disp_grad
    th = setup.alpha * (T - setup.T_ref)
    return (
        g[0][0] - th,
        g[1][1] - th,
        g[2][2] - th,
        0.5 * (g[0][1] + g[1][0]),
        0.5 * (g[1][2] + g[2][1]),
        0.5 * (g[0][2] + g[2][0]),
    )


def stress_from_strain(strains, setup: ProcessSetup) -> tuple:
    """Isotropic linear elasticity with tensor shear strains."""
    E, nu = setup.E, setup.nu
    if not nu < 0.5:
        raise MaterialError("nu >= 0.5 makes the constitutive law singular")
    exx, eyy, ezz, exy, eyz, ezx = strains
    c = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
    g = E / (1.0 + nu)
    return (
        c * (exx * (1.0 - nu) + nu * (eyy + ezz)),
        c * (eyy * (1.0 - nu) + nu * (exx + ezz)),
        c * (ezz * (1.0 - nu) + nu * (exx + eyy)),
        g * exy,
        g * eyz,
        g * ezx,
    )


def equilibrium_residual(mech: MechanicalState, setup: ProcessSetup) -> tuple:
    """rho*u_tt - div(sigma) per axis, N/m^3; inertia only when enabled."""
    sg = mech.stress_grad
    out = []
    for i in range(3):
        div = sg[VOIGT[(i, 0)]][0] + sg[VOIGT[(i, 1)]][1] + sg[VOIGT[(i, 2)]][2]
        r = -div
        if setup.inertia_enabled and mech.accel is not None:
            r = setup.rho * mech.accel[i] + r
        out.append(r)
    return tuple(out)


def constitutive_consistency_residual(mech: MechanicalState, T, setup: ProcessSetup) -> tuple:
    """Network stresses minus the stresses implied by its displacements and T."""
    implied = stress_from_strain(strain_from_displacement(mech, T, setup), setup)
    return tuple(s - m for s, m in zip(mech.stress, implied))


def traction(face: Face, stress) -> tuple:
    return tuple(stress[VOIGT[(i, face.axis)]] * float(face.sign) for i in range(3))


def mechanical_bc_residual(face: Face, point, mech: MechanicalState, setup: ProcessSetup | None = None, check: bool = True) -> tuple:
    """Fixed bottom: (u, v, w).  Other faces: traction sigma . n (stress free)."""
    if check and setup is not None:
        check_on_face(face, point, setup)
    if face is Face.BOTTOM:
        return tuple(mech.disp)
    return traction(face, mech.stress)
