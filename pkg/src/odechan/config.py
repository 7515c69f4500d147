"""Versioned YAML run configuration with a default for every field."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unknown configuration field; ``field`` holds its dotted name."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class SceneSection:
    path: str | None = None  # existing scene file; otherwise built from the preset
    preset: str = "toy"  # toy | default
    seed: int | None = None  # scene seed; falls back to the run seed


@dataclass
class OdeSection:
    solver: str = "rk4"
    step: float | None = None  # meters; null means wavelength / 10
    max_steps: int = 1000


@dataclass
class ScgnetSection:
    scattering_hidden: list = field(default_factory=lambda: [128, 128])
    direction_hidden: list = field(default_factory=lambda: [128, 128])
    combine_mode: str = "corrected_analytic"
    output_activation: str = "tanh"
    rate_gain: float = 2.0


@dataclass
class ScgnetTrainSection:
    steps: int = 2000
    batch_size: int = 20
    z: int = 4
    lr: float = 1e-3
    lr_final: float | None = 1e-4
    clip_norm: float | None = 1.0
    curriculum_start: float | None = 0.03
    curriculum_steps: int = 1500


@dataclass
class PositionerSection:
    hidden: list = field(default_factory=lambda: [256, 128])
    input_mode: str = "column_per_cell"


@dataclass
class PositionerTrainSection:
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-3
    clip_norm: float = 5.0
    val_fraction: float = 0.2


@dataclass
class LstmSection:
    hidden: int = 384
    seq_len: int = 10
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    clip_norm: float = 5.0


@dataclass
class IterationSection:
    eta: float = 0.1
    max_iterations: int = 20


@dataclass
class DopplerSection:
    phi: float = 0.0


@dataclass
class TrajectorySection:
    n: int = 100
    length: int = 11
    interval_s: float = 1e-3
    speed_range: list = field(default_factory=lambda: [10.0, 40.0])


@dataclass
class BenchmarkSection:
    task: str = "trajectory"
    methods: list = field(default_factory=lambda: ["proposed", "nn_db", "lstm", "ar"])
    seq_len: int = 10
    ar_window: int = 7
    n_test_positions: int = 200


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    dims: list = field(default_factory=lambda: [8, 8])
    density: float = 100.0
    output_dir: str = "runs/toy"
    scene: SceneSection = field(default_factory=SceneSection)
    ode: OdeSection = field(default_factory=OdeSection)
    scgnet: ScgnetSection = field(default_factory=ScgnetSection)
    train_scgnet: ScgnetTrainSection = field(default_factory=ScgnetTrainSection)
    positioner: PositionerSection = field(default_factory=PositionerSection)
    train_positioner: PositionerTrainSection = field(default_factory=PositionerTrainSection)
    lstm: LstmSection = field(default_factory=LstmSection)
    iteration: IterationSection = field(default_factory=IterationSection)
    doppler: DopplerSection = field(default_factory=DopplerSection)
    trajectories: TrajectorySection = field(default_factory=TrajectorySection)
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    def validate(self) -> "RunConfig":
        checks = [
            ("version", self.version == CONFIG_VERSION, f"unsupported version (expected {CONFIG_VERSION})"),
            ("dims", len(self.dims) == 2 and all(isinstance(d, int) and d >= 1 for d in self.dims),
             "must be two positive integers [N_t, N_c]"),
            ("density", self.density > 0, "must be > 0"),
            ("scene.preset", self.scene.preset in ("toy", "default"), "must be toy or default"),
            ("ode.solver", self.ode.solver in ("euler", "rk4"), "must be euler or rk4"),
            ("ode.step", self.ode.step is None or self.ode.step > 0, "must be > 0 or null"),
            ("ode.max_steps", self.ode.max_steps >= 1, "must be >= 1"),
            ("scgnet.combine_mode", self.scgnet.combine_mode in ("corrected_analytic", "paper_literal"),
             "must be corrected_analytic or paper_literal"),
            ("train_scgnet.steps", self.train_scgnet.steps >= 0, "must be >= 0"),
            ("train_scgnet.batch_size", self.train_scgnet.batch_size >= 1, "must be >= 1"),
            ("train_scgnet.z", self.train_scgnet.z >= 1, "must be >= 1"),
            ("train_scgnet.lr", self.train_scgnet.lr > 0, "must be > 0"),
            ("positioner.input_mode", self.positioner.input_mode in ("column_per_cell", "full_matrix_per_cell"),
             "must be column_per_cell or full_matrix_per_cell"),
            ("positioner.hidden", len(self.positioner.hidden) == 2, "must list two layer sizes"),
            ("train_positioner.val_fraction", 0 <= self.train_positioner.val_fraction < 1, "must be in [0, 1)"),
            ("iteration.eta", self.iteration.eta > 0, "must be > 0"),
            ("iteration.max_iterations", self.iteration.max_iterations >= 1, "must be >= 1"),
            ("trajectories.interval_s", self.trajectories.interval_s > 0, "must be > 0"),
            ("trajectories.speed_range", len(self.trajectories.speed_range) == 2
             and 0 <= self.trajectories.speed_range[0] <= self.trajectories.speed_range[1],
             "must be [low, high] with 0 <= low <= high"),
            ("benchmark.task", self.benchmark.task in ("static", "trajectory"), "must be static or trajectory"),
            ("benchmark.seq_len", 2 <= self.benchmark.seq_len < self.trajectories.length,
             "must be >= 2 and shorter than trajectories.length"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(name, msg)
        return self


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix or "<root>", "expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = f"{prefix}.{key}" if prefix else key
        if key not in fields:
            raise ConfigError(name, "unknown field")
        default = fields[key].default_factory() if fields[key].default_factory is not dataclasses.MISSING \
            else fields[key].default
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value or {}, name)
        else:
            kwargs[key] = _coerce(name, value, default, str(fields[key].type))
    return cls(**kwargs)


def _coerce(name: str, value, default, annotation: str):
    if value is None:
        return value
    if default is None:
        # optional field: infer the expected type from its annotation
        default = 0.0 if "float" in annotation else 0 if "int" in annotation else "" if "str" in annotation else None
        if default is None:
            return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(name, f"expected a string, got {value!r}")
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(name, f"expected a list, got {value!r}")
    return value


def config_from_dict(data: dict | None) -> RunConfig:
    return _build(RunConfig, data or {}, "").validate()


def load_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"not valid YAML: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.to_text())
