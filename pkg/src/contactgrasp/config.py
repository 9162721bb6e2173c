"""Pipeline configuration: one dataclass per section, stored as INI text.

Precedence when running the CLI is flag > file > default.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields

from .camera import CameraBounds, CameraIntrinsics
from .grasping import EpsilonParams, GripperModel
from .render import NoiseParams


EXECUTION_ONLY = (("run", "jobs"),)


class ConfigError(ValueError):
    pass


@dataclass
class SamplerConfig:
    max_grasps: int = 100
    k: int = 6
    delta: float = 0.5
    epsilon_trials: int = 100
    contact_sigma: float = 0.0025
    mu_mean: float = 0.5
    mu_std: float = 0.1
    mu_min: float = 0.05
    max_attempts: int = 2000

    def epsilon_params(self):
        return EpsilonParams(self.epsilon_trials, self.contact_sigma, self.mu_mean, self.mu_std, self.mu_min)


@dataclass
class GripperConfig:
    max_width: float = 0.08
    finger_half: tuple = (0.01, 0.01, 0.02)
    palm_half: tuple = (0.05, 0.02, 0.01)
    tcp_to_palm: float = 0.04
    friction: float = 0.5
    hinge_steps: int = 24
    # extra clearance on every box when labelling, so small decode offsets stay collision-free
    label_margin: float = 0.002

    def model(self):
        return GripperModel(self.max_width, tuple(self.finger_half), tuple(self.palm_half),
                            self.tcp_to_palm, self.friction)


@dataclass
class ObjectConfig:
    width_min: float = 0.06
    width_max: float = 0.10
    max_poses: int = 25
    pose_samples: int = 10000


@dataclass
class CameraConfig:
    fx: float = 262.5
    fy: float = 262.5
    cx: float = 159.5
    cy: float = 119.5
    width: int = 320
    height: int = 240
    radius: tuple = (0.5, 1.0)
    polar_deg: tuple = (5.0, 70.0)
    azimuth_deg: tuple = (0.0, 360.0)
    jitter: float = 0.02

    def intrinsics(self):
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, int(self.width), int(self.height))

    def bounds(self):
        return CameraBounds(tuple(self.radius), tuple(self.polar_deg), tuple(self.azimuth_deg), self.jitter)


@dataclass
class NoiseConfig:
    enabled: bool = True
    axial_a0: float = 0.0012
    axial_a2: float = 0.0019
    lateral_sigma: float = 0.8

    def params(self):
        if not self.enabled:
            return NoiseParams(0.0, 0.0, 0.0)
        return NoiseParams(self.axial_a0, self.axial_a2, self.lateral_sigma)


@dataclass
class DatasetConfig:
    images_per_pose: int = 20
    visibility_tau: float = 0.005


@dataclass
class DecodeConfig:
    gamma: float = 0.4
    peak_distance: int = 4
    max_proposals: int = 10


@dataclass
class SimConfig:
    approach: float = 0.15
    step: float = 0.005
    mu_sim: float = 0.5
    trials_per_object: int = 100
    workspace: tuple = (0.30, 0.30)


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1


@dataclass
class PipelineConfig:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    gripper: GripperConfig = field(default_factory=GripperConfig)
    object: ObjectConfig = field(default_factory=ObjectConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def to_ini(self) -> str:
        """Effective settings as INI text; worker count is left out since it never changes results."""
        cp = configparser.ConfigParser()
        for name, values in self.to_dict().items():
            cp[name] = {k: _format(v) for k, v in values.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def to_dict(self):
        d = dataclasses.asdict(self)
        for section, key in EXECUTION_ONLY:
            d[section].pop(key)
        return d

    def set(self, section, key, value):
        """Set one value, parsing strings with the field's declared type."""
        sec = getattr(self, section, None)
        if sec is None or section not in {f.name for f in fields(self)}:
            raise ConfigError(f"unknown config section [{section}]")
        types = {f.name: f for f in fields(sec)}
        if key not in types:
            raise ConfigError(f"unknown config key {section}.{key}")
        current = getattr(sec, key)
        setattr(sec, key, _parse(value, current, f"{section}.{key}") if isinstance(value, str) else value)

    def validate(self):
        if self.object.width_min <= 0 or self.object.width_max < self.object.width_min:
            raise ConfigError("object width range is invalid")
        if not 0.0 <= self.decode.gamma <= 1.0:
            raise ConfigError("decode.gamma must lie in [0, 1]")
        if self.sim.step <= 0 or self.sim.approach < 0:
            raise ConfigError("sim.step must be positive and sim.approach non-negative")
        if self.run.jobs < 1:
            raise ConfigError("run.jobs must be >= 1")
        try:
            self.camera.intrinsics()
            self.camera.bounds().validate()
            self.gripper.model()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self


def _format(value):
    if isinstance(value, (tuple, list)):
        return ", ".join(repr(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse(text, current, name):
    try:
        if isinstance(current, bool):
            low = text.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(current, tuple):
            parts = [p.strip() for p in text.split(",") if p.strip()]
            if len(parts) != len(current):
                raise ValueError(f"expected {len(current)} values")
            return tuple(type(c)(float(p)) for c, p in zip(current, parts))
        if isinstance(current, int):
            return int(text)
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


def load_config(path=None, text=None) -> PipelineConfig:
    """Load and validate a config file; unknown sections or keys are rejected."""
    cfg = PipelineConfig()
    if path is None and text is None:
        return cfg
    cp = configparser.ConfigParser()
    try:
        if text is not None:
            cp.read_string(text)
        else:
            with open(path) as fh:
                cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for section in cp.sections():
        for key, value in cp[section].items():
            cfg.set(section, key, value)
    return cfg.validate()
