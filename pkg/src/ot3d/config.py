"""Pipeline configuration: defaults, presets, strict JSON parsing."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .refine import RefineConfig
from .tracker import TrackerConfig


@dataclass
class DbscanConfig:
    eps: float = 0.08
    min_pts: int = 10

    def validate(self) -> None:
        if not self.eps > 0:
            raise ConfigError(f"dbscan eps must be positive, got {self.eps}")
        if self.min_pts < 1:
            raise ConfigError(f"dbscan min_pts must be >= 1, got {self.min_pts}")


@dataclass
class ClassifyConfig:
    top_k: int = 3
    backend: str = "oracle"
    label_set: list[str] | None = None
    task: str | None = None
    embeddings: str | None = None  # JSON path for the descriptor backend
    descriptor_floor: float = 0.25

    def validate(self) -> None:
        if self.top_k < 1:
            raise ConfigError(f"classify top_k must be >= 1, got {self.top_k}")
        known = self.backend in ("oracle", "descriptor") or self.backend.startswith(
            "external:"
        )
        if not known:
            raise ConfigError(f"unknown classify backend {self.backend!r}")
        if self.label_set is not None and self.task is not None:
            raise ConfigError("label_set and task are mutually exclusive")


@dataclass
class PipelineConfig:
    stride: int = 1
    depth_range: tuple[float, float] = (0.05, 20.0)
    dbscan: DbscanConfig = field(default_factory=DbscanConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)

    def validate(self) -> None:
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        d_min, d_max = self.depth_range
        if not (0 <= d_min < d_max):
            raise ConfigError(f"depth_range must satisfy 0 <= min < max: {self.depth_range}")
        self.dbscan.validate()
        self.tracker.validate()
        self.refine.validate()
        self.classify.validate()

    def to_dict(self) -> dict:
        out = asdict(self)
        out["depth_range"] = list(self.depth_range)
        return out


PRESETS = {
    "default": {},
    # Fully-visible fine-element scenes: no expansion, strict visibility,
    # single best view per proposal.
    "scenefun3d": {
        "refine": {"tau_exp": 0.0, "tau_vis": 0.8},
        "classify": {"top_k": 1},
    },
}


def preset_config(name: str) -> PipelineConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    return config_from_dict(PRESETS[name])


def config_from_dict(raw: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    """Build a config from nested dicts; unknown keys are rejected."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = base if base is not None else PipelineConfig()
    sections = {
        "dbscan": DbscanConfig,
        "tracker": TrackerConfig,
        "refine": RefineConfig,
        "classify": ClassifyConfig,
    }
    top_level = {"stride", "depth_range", *sections}
    unknown = set(raw) - top_level
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    updates: dict = {}
    if "stride" in raw:
        if not isinstance(raw["stride"], int):
            raise ConfigError("stride must be an integer")
        updates["stride"] = raw["stride"]
    if "depth_range" in raw:
        dr = raw["depth_range"]
        if (
            not isinstance(dr, (list, tuple))
            or len(dr) != 2
            or not all(isinstance(v, (int, float)) for v in dr)
        ):
            raise ConfigError("depth_range must be [min, max]")
        updates["depth_range"] = (float(dr[0]), float(dr[1]))
    for name, cls in sections.items():
        if name not in raw:
            continue
        section = raw[name]
        if not isinstance(section, dict):
            raise ConfigError(f"config section '{name}' must be an object")
        allowed = {f.name for f in fields(cls)}
        bad = set(section) - allowed
        if bad:
            raise ConfigError(f"unknown keys in '{name}': {sorted(bad)}")
        updates[name] = replace(getattr(cfg, name), **section)
    cfg = replace(cfg, **updates)
    cfg.validate()
    return cfg


def load_config(
    path: Path | str | None = None, preset: str | None = None
) -> PipelineConfig:
    """Resolve preset then overlay the JSON config file, validating both."""
    cfg = preset_config(preset) if preset else PipelineConfig()
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg = config_from_dict(raw, base=cfg)
    cfg.validate()
    return cfg
