"""Fully connected temperature and stress-displacement networks, input/output scaling."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import mlp_jet_forward

DISPLACEMENTS = ("u", "v", "w")
STRESSES = ("sxx", "syy", "szz", "sxy", "syz", "szx")
AXES = ("x", "y", "z", "t")


class ConfigError(ValueError):
    pass


class DomainError(ValueError):
    """A point lies outside the scaled space-time box."""

    def __init__(self, message: str, axis: str | None = None):
        super().__init__(message)
        self.axis = axis


@dataclass(frozen=True)
class NetworkConfig:
    hidden_layers: int = 3
    width: int = 64
    input_dim: int = 4
    output_dim: int = 1
    hidden_activation: str = "tanh"
    output_transform: str = "softplus"
    init_seed: int = 0
    outputs: tuple = ("T",)

    @classmethod
    def temperature(cls, seed: int = 0) -> "NetworkConfig":
        return cls(3, 64, 4, 1, "tanh", "softplus", seed, ("T",))

    @classmethod
    def stress_displacement(cls, seed: int = 1) -> "NetworkConfig":
        return cls(10, 64, 4, 9, "tanh", "linear", seed, DISPLACEMENTS + STRESSES)

    @classmethod
    def displacement(cls, seed: int = 1) -> "NetworkConfig":
        # two-network variant with a displacement-only head; not used for training here
        return cls(10, 64, 4, 3, "tanh", "linear", seed, DISPLACEMENTS)

    def validate(self) -> None:
        if self.hidden_layers < 1 or self.width < 1:
            raise ConfigError(f"network needs at least one hidden layer of width >= 1, got {self.hidden_layers}x{self.width}")
        if self.input_dim != 4:
            raise ConfigError("input_dim must be 4 (x, y, z, t)")
        if self.output_dim != len(self.outputs):
            raise ConfigError(f"output_dim {self.output_dim} does not match outputs {self.outputs}")
        if self.hidden_activation != "tanh":
            raise ConfigError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_transform not in ("softplus", "linear"):
            raise ConfigError(f"unsupported output transform {self.output_transform!r}")

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [self.width] * self.hidden_layers + [self.output_dim]

    @property
    def activations(self) -> tuple[str, ...]:
        return (self.hidden_activation,) * self.hidden_layers + (self.output_transform,)


@dataclass
class MlpParams:
    config: NetworkConfig
    weights: list
    biases: list

    def __post_init__(self):
        sizes = self.config.sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ConfigError("layer count does not match config")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ConfigError(f"layer {i} has shape {W.shape}/{b.shape}, expected {(sizes[i], sizes[i + 1])}")

    @property
    def activations(self) -> tuple[str, ...]:
        return self.config.activations

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec) -> "MlpParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_params:
            raise ConfigError(f"expected {self.n_params} parameters, got {vec.size}")
        Ws, bs, k = [], [], 0
        for W, b in zip(self.weights, self.biases):
            Ws.append(vec[k:k + W.size].reshape(W.shape).copy())
            k += W.size
            bs.append(vec[k:k + b.size].copy())
            k += b.size
        return MlpParams(self.config, Ws, bs)

    def copy(self) -> "MlpParams":
        return self.with_flat(self.flat())

    def apply(self, x_scaled, dtype=np.float64) -> np.ndarray:
        """Transformed network output in network units, shape (n, output_dim)."""
        (v, _, _), _ = mlp_jet_forward(self.weights, self.biases, self.activations, np.atleast_2d(x_scaled), dtype=dtype, keep=False)
        return v

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_glorot(config: NetworkConfig) -> MlpParams:
    """Glorot-uniform weights, zero biases, deterministic per ``config.init_seed``."""
    config.validate()
    rng = np.random.default_rng(config.init_seed)
    sizes = config.sizes
    Ws, bs = [], []
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        bound = glorot_bound(fi, fo)
        Ws.append(rng.uniform(-bound, bound, size=(fi, fo)))
        bs.append(np.zeros(fo))
    return MlpParams(config, Ws, bs)


def zero_params(config: NetworkConfig) -> MlpParams:
    config.validate()
    s = config.sizes
    return MlpParams(config, [np.zeros((a, b)) for a, b in zip(s[:-1], s[1:])], [np.zeros(b) for b in s[1:]])


@dataclass(frozen=True)
class ScaleSet:
    """Affine maps between physical quantities and network units.

    Inputs: each of (x, y, z, t) maps [lower, upper] onto [-1, 1].
    Outputs: T = T_offset + T_scale * y, displacement = u_scale * y,
    stress = sigma_scale * y.
    """

    lower: tuple = (0.0, 0.0, 0.0, 0.0)
    upper: tuple = (18e-3, 8e-3, 4e-3, 1.0)
    T_offset: float = 298.0
    T_scale: float = 100.0
    u_scale: float = 9.0e-6 * 100.0 * 1e-3
    sigma_scale: float = 209e9 * 9.0e-6 * 100.0
    L_char: float = 1e-3
    tol: float = 1e-9

    @classmethod
    def from_setup(cls, setup, T_scale: float = 100.0, L_char: float = 1e-3) -> "ScaleSet":
        Lx, Ly, Lz = setup.domain
        return cls(
            lower=(0.0, 0.0, 0.0, 0.0),
            upper=(float(Lx), float(Ly), float(Lz), float(setup.scan_duration)),
            T_offset=float(setup.T0),
            T_scale=float(T_scale),
            u_scale=float(setup.alpha * T_scale * L_char),
            sigma_scale=float(setup.E * setup.alpha * T_scale),
            L_char=float(L_char),
        )

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    @property
    def half(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.upper) - np.asarray(self.lower))

    @property
    def t_scale(self) -> float:
        return float(self.half[3])

    def scale_input(self, points, check: bool = True) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        if check:
            lo, hi = np.asarray(self.lower), np.asarray(self.upper)
            tol = self.tol + 1e-12 * np.abs(hi)
            for k in range(4):
                col = p[..., k]
                if np.any(col < lo[k] - tol[k]) or np.any(col > hi[k] + tol[k]):
                    bad = col[(col < lo[k] - tol[k]) | (col > hi[k] + tol[k])].ravel()[0]
                    raise DomainError(f"{AXES[k]} = {bad!r} outside [{lo[k]}, {hi[k]}]", axis=AXES[k])
        return (p - self.center) / self.half

    def unscale_input(self, xs) -> np.ndarray:
        return np.asarray(xs) * self.half + self.center

    def output_scale(self, name: str) -> float:
        if name == "T":
            return self.T_scale
        if name in DISPLACEMENTS:
            return self.u_scale
        if name in STRESSES:
            return self.sigma_scale
        raise KeyError(name)

    def output_offset(self, name: str) -> float:
        return self.T_offset if name == "T" else 0.0

    def to_network(self, name: str, q):
        return (np.asarray(q) - self.output_offset(name)) / self.output_scale(name)

    def from_network(self, name: str, y):
        return self.output_offset(name) + self.output_scale(name) * np.asarray(y)


def forward(net: MlpParams, scale: ScaleSet, x_scaled, dtype=np.float64) -> dict:
    """Physical outputs keyed by name (``T`` in K, ``u``.. in m, ``sxx``.. in Pa)."""
    y = net.apply(x_scaled, dtype=dtype)
    if y.shape[1] != len(net.config.outputs):
        raise ConfigError("output shape does not match config")
    return {name: scale.from_network(name, y[:, i]) for i, name in enumerate(net.config.outputs)}


def forward_physical(net: MlpParams, scale: ScaleSet, points) -> dict:
    """Like :func:`forward` but takes physical (x, y, z, t) points."""
    return forward(net, scale, scale.scale_input(points))


def with_seed(config: NetworkConfig, seed: int) -> NetworkConfig:
    return replace(config, init_seed=int(seed))
