"""Run configuration: every knob has a default; a JSON file overrides
defaults and command-line flags override the file."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .evalharness import PAPER_CONDITIONS
from .nn import LossWeights
from .pipeline import FilterSpec

FILTER_KINDS = ("pencil", "sobel", "canny", "none")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    # input filter
    filter: str = "pencil"
    ellipse_size: int = 5
    canny_low: float = 50.0
    canny_high: float = 150.0
    # labels / decoding
    d_max: float = 12.0
    conf_thresh: float = 0.5
    # loss
    lambda_xy: float = 1.0
    lambda_d: float = 1.0
    lambda_theta: float = 1.0
    lambda_c: float = 1.0
    alpha: float = 0.5
    # optimisation
    epochs: int = 10
    batch_size: int = 32
    base_lr: float = 0.01
    lr_decay: float = 0.1
    lr_milestones: list = field(default_factory=lambda: [5, 8])
    # data generation
    n: int = 2000
    light_min: float = 0.3
    light_max: float = 1.0
    supersample: int = 2
    camera: dict | None = None  # intrinsics; None means the built-in fish-eye
    # evaluation
    conditions: list = field(default_factory=lambda: [list(c) for c in PAPER_CONDITIONS])
    blur_angle: float = 0.0
    fps_frames: int = 30
    # mapping replay
    flight_gates: int = 4
    flight_frames_per_gate: int = 25

    def validate(self) -> "RunConfig":
        if self.filter not in FILTER_KINDS:
            raise ConfigError(f"filter must be one of {FILTER_KINDS}, got {self.filter!r}")
        if not 0.0 <= self.conf_thresh <= 1.0:
            raise ConfigError(f"conf_thresh must be in [0, 1], got {self.conf_thresh}")
        if not 0 <= self.canny_low <= self.canny_high <= 255:
            raise ConfigError("canny thresholds must satisfy 0 <= low <= high <= 255")
        if self.ellipse_size < 1 or self.ellipse_size % 2 == 0:
            raise ConfigError("ellipse_size must be an odd integer >= 1")
        if self.d_max <= 0:
            raise ConfigError("d_max must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if not 0 < self.light_min <= self.light_max <= 1:
            raise ConfigError("light range must satisfy 0 < light_min <= light_max <= 1")
        for c in self.conditions:
            if len(c) != 2 or not 0 < float(c[0]) <= 1 or int(c[1]) < 0:
                raise ConfigError(f"condition {c!r} must be [light_scale in (0,1], blur_len >= 0]")
        if self.camera is not None:
            self.camera_model()
        LossWeights(self.lambda_xy, self.lambda_d, self.lambda_theta, self.lambda_c, self.alpha)
        return self

    @property
    def filter_spec(self) -> FilterSpec:
        return FilterSpec(self.filter, self.ellipse_size, self.canny_low, self.canny_high)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_xy, self.lambda_d, self.lambda_theta, self.lambda_c, self.alpha)

    def camera_model(self):
        from .camera import CameraModel, default_camera

        if self.camera is None:
            return default_camera()
        try:
            return CameraModel.from_dict(self.camera)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad camera block: {exc}") from None

    def lr_fn(self):
        from .nn import lr_at_epoch

        milestones = tuple(self.lr_milestones)
        return lambda epoch: lr_at_epoch(epoch, self.base_lr, self.lr_decay, milestones)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, out_dir: str | Path) -> Path:
        path = Path(out_dir) / "effective_config.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def known_keys() -> set[str]:
    return {f.name for f in fields(RunConfig)}


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file at ``path``, then non-None ``overrides``."""
    values: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        unknown = set(data) - known_keys()
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        values.update(data)
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    return RunConfig(**values).validate()
