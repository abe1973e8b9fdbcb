"""RunConfig: every knob of a run, read from and written to a sectioned INI file."""
from __future__ import annotations

import configparser
import io
import re
from dataclasses import dataclass, field, fields, replace

from .network import ConfigError, NetworkConfig, ScaleSet
from .physics import MaterialError, ProcessSetup
from .sampling import LabeledSamples, SamplingPlan
from .training import LossWeights, OptimizerSettings, TrainSettings


@dataclass(frozen=True)
class ScaleSettings:
    T_scale: float = 100.0
    L_char: float = 1e-3


@dataclass(frozen=True)
class OracleSettings:
    nx: int = 37
    ny: int = 17
    nz: int = 9
    output_rate: float = 10.0
    safety: float = 0.9


@dataclass(frozen=True)
class DataSettings:
    """Labels from an oracle series CSV; ``window_fraction`` keeps t <= fraction * t_max."""

    series: str = ""
    window_fraction: float = 0.7
    stride: int = 1


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    out_dir: str = "runs/default"
    fixing: str = "bottom"
    temperature_metric: str = "rmse"
    stress_metric: str = "relative_l2"
    n_validation: int = 4000
    reference: str = ""


SECTIONS = {
    "process": ProcessSetup,
    "temperature_net": NetworkConfig,
    "stress_net": NetworkConfig,
    "sampling": SamplingPlan,
    "weights": LossWeights,
    "optimizer": OptimizerSettings,
    "thermal_training": TrainSettings,
    "mechanical_training": TrainSettings,
    "scales": ScaleSettings,
    "oracle": OracleSettings,
    "data": DataSettings,
    "run": RunSettings,
}


@dataclass
class RunConfig:
    process: ProcessSetup = field(default_factory=ProcessSetup)
    temperature_net: NetworkConfig = field(default_factory=NetworkConfig.temperature)
    stress_net: NetworkConfig = field(default_factory=NetworkConfig.stress_displacement)
    sampling: SamplingPlan = field(default_factory=SamplingPlan)
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    thermal_training: TrainSettings = field(default_factory=TrainSettings)
    mechanical_training: TrainSettings = field(default_factory=TrainSettings)
    scales: ScaleSettings = field(default_factory=ScaleSettings)
    oracle: OracleSettings = field(default_factory=OracleSettings)
    data: DataSettings = field(default_factory=DataSettings)
    run: RunSettings = field(default_factory=RunSettings)
    # runtime attachments, never serialized
    labels: LabeledSamples | None = field(default=None, compare=False, repr=False)
    validation: LabeledSamples | None = field(default=None, compare=False, repr=False)
    scale_override: ScaleSet | None = field(default=None, compare=False, repr=False)

    # -- views used by the training workflows ---------------------------------
    @property
    def setup(self) -> ProcessSetup:
        return self.process

    @property
    def scale(self) -> ScaleSet:
        if self.scale_override is not None:
            return self.scale_override
        return ScaleSet.from_setup(self.process, T_scale=self.scales.T_scale, L_char=self.scales.L_char)

    @property
    def fixing(self) -> str:
        return self.run.fixing

    def thermal_labels(self) -> LabeledSamples | None:
        if self.labels is None or "T" not in self.labels.fields:
            return None
        return self.labels.select(("T",))

    def mechanical_labels(self) -> LabeledSamples | None:
        if self.labels is None:
            return None
        names = [n for n in self.stress_net.outputs if n in self.labels.fields]
        return self.labels.select(names) if names else None

    def with_setup(self, setup: ProcessSetup, scale: ScaleSet | None = None) -> "RunConfig":
        return replace(self, process=setup, scale_override=scale, labels=None, validation=None)

    def with_seed(self, seed: int) -> "RunConfig":
        """Seed sampling and both initialisations from one integer."""
        seed = int(seed)
        return replace(
            self,
            sampling=replace(self.sampling, seed=seed),
            temperature_net=replace(self.temperature_net, init_seed=seed),
            stress_net=replace(self.stress_net, init_seed=seed + 1),
            run=replace(self.run, seed=seed),
        )

    def validate(self) -> None:
        self.process.validate()
        self.temperature_net.validate()
        self.stress_net.validate()
        if self.temperature_net.outputs != ("T",):
            raise ConfigError("temperature_net.outputs must be T")
        self.sampling.validate()
        self.weights.validate()
        self.optimizer.validate()
        self.thermal_training.validate()
        self.mechanical_training.validate()
        if self.run.fixing not in ("bottom", "minimal"):
            raise ConfigError("run.fixing must be 'bottom' or 'minimal'")
        for m in (self.run.temperature_metric, self.run.stress_metric):
            if m not in ("mse", "rmse", "relative_l2"):
                raise ConfigError(f"unknown metric {m!r}")
        if not 0 < self.data.window_fraction <= 1 or self.data.stride < 1:
            raise ConfigError("data.window_fraction in (0, 1] and data.stride >= 1 required")
        if min(self.oracle.nx, self.oracle.ny, self.oracle.nz) < 2 or self.oracle.output_rate <= 0:
            raise ConfigError("oracle grid needs >= 2 nodes per axis and a positive output rate")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def to_ini(cfg: RunConfig) -> str:
    """Deterministic text form; the default config gives a byte-stable file."""
    out = io.StringIO()
    for i, (section, _) in enumerate(SECTIONS.items()):
        if i:
            out.write("\n")
        out.write(f"[{section}]\n")
        obj = getattr(cfg, section)
        for f in fields(obj):
            out.write(f"{f.name} = {_fmt(getattr(obj, f.name))}\n")
    return out.getvalue()


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(to_ini(cfg))


def _line_of(text: str, section: str, key: str | None) -> int | None:
    cur = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            cur = m.group(1).strip()
            if key is None and cur == section:
                return n
            continue
        if cur == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return n
    return None


def _where(text, section, key=None) -> str:
    line = _line_of(text, section, key)
    name = section if key is None else f"{section}.{key}"
    return f"{name} (line {line})" if line else name


def _convert(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if default and isinstance(default[0], (int, float)):
                return tuple(float(p) for p in parts)
            return tuple(parts)
        if default is None:
            return None if raw.lower() in ("", "none") else float(raw)
        return raw
    except ValueError:
        kind = "none or a number" if default is None else type(default).__name__
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind}") from None


def parse_config_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, strict=True, empty_lines_in_values=False)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    base = RunConfig()
    updates = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}] (line {_line_of(text, section, None)})")
        obj = getattr(base, section)
        known = {f.name: getattr(obj, f.name) for f in fields(obj)}
        kw = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {_where(text, section, key)}")
            kw[key] = _convert(raw, known[key], _where(text, section, key))
        try:
            updates[section] = replace(obj, **kw)
        except (ConfigError, MaterialError, ValueError) as exc:
            raise ConfigError(f"[{section}] {_locate(exc, text, section, kw)}: {exc}") from None
    cfg = replace(base, **updates)
    try:
        cfg.validate()
    except (ConfigError, MaterialError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _locate(exc, text, section, kw) -> str:
    msg = str(exc)
    for key in kw:
        if re.search(rf"\b{re.escape(key)}\b", msg):
            return _where(text, section, key)
    return section


def parse_config(path) -> RunConfig:
    """Read an INI file; missing sections/keys take the defaults."""
    with open(path) as fh:
        return parse_config_text(fh.read())


def default_config_text() -> str:
    return to_ini(RunConfig())


__all__ = ["RunConfig", "parse_config", "parse_config_text", "to_ini", "save_config", "default_config_text"]
