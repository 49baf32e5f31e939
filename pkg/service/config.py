"""
Generation settings.

Precedence (lowest to highest): dataclass defaults, BLANKETGEN_* environment
variables (a project .env is loaded first), a flat key=value config file,
explicit CLI flags.
"""
import os
from dataclasses import dataclass, fields, asdict, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from dotenv import load_dotenv, dotenv_values

from errors import ConfigError

PROJECT_ROOT = Path(__file__).parent.parent
ENV_PREFIX = "BLANKETGEN_"

load_dotenv(PROJECT_ROOT / ".env")

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


@dataclass(frozen=True)
class GenerationConfig:
    seed: int = 0
    grid_res: int = 76
    substeps: int = 15
    collision_iters: int = 10
    constraint_iters: int = 10
    margin: float = 0.0005
    warmup: int = 24
    min_restart_gap: int = 48
    detach_threshold: float = 0.30
    encoder: str = "png"
    jpeg_quality: int = 90
    jobs: int = 1

    bed_gap: float = 0.02
    blanket_offset: float = 0.05
    blanket_width: float = 1.6
    blanket_length: float = 2.2
    bed_width: float = 2.0
    bed_length: float = 3.0
    bed_thickness: float = 0.3
    sun_direction: Optional[Tuple[float, float, float]] = None

    blanket_mass: float = 0.3
    gravity: float = 9.81
    damping: float = 0.02
    stretch_stiffness: float = 1.0
    bend_stiffness: float = 0.5
    stretch_compliance: float = 0.0
    penetration_depth: float = 0.05
    relaxation: float = 1.5

    ambient: float = 0.15
    supersample: bool = False
    render_subdivisions: int = 1
    pose_blendshapes: bool = True
    telemetry: bool = False
    body_model: Optional[str] = None

    def validate(self) -> "GenerationConfig":
        if self.grid_res < 2:
            raise ConfigError(f"grid_res must be >= 2, got {self.grid_res}")
        if self.substeps < 1:
            raise ConfigError(f"substeps must be >= 1, got {self.substeps}")
        for key in ("collision_iters", "constraint_iters", "warmup", "min_restart_gap", "render_subdivisions"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0, got {getattr(self, key)}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        for key in ("margin", "detach_threshold", "bed_gap", "blanket_offset", "blanket_width",
                    "blanket_length", "bed_width", "bed_length", "bed_thickness", "blanket_mass",
                    "penetration_depth"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be > 0, got {getattr(self, key)}")
        for key in ("stretch_stiffness", "bend_stiffness", "ambient"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ConfigError(f"{key} must be in [0, 1], got {getattr(self, key)}")
        if not 0.0 <= self.damping < 1.0:
            raise ConfigError(f"damping must be in [0, 1), got {self.damping}")
        if not 0.0 < self.relaxation < 2.0:
            raise ConfigError(f"relaxation must be in (0, 2), got {self.relaxation}")
        if self.stretch_compliance < 0:
            raise ConfigError(f"stretch_compliance must be >= 0, got {self.stretch_compliance}")
        if self.encoder not in ("png", "jpeg"):
            raise ConfigError(f"encoder must be 'png' or 'jpeg', got '{self.encoder}'")
        if not 1 <= self.jpeg_quality <= 100:
            raise ConfigError(f"jpeg_quality must be in [1, 100], got {self.jpeg_quality}")
        if self.sun_direction is not None:
            if sum(c * c for c in self.sun_direction) < 1e-18:
                raise ConfigError("sun_direction must be a non-zero vector")
        return self

    def with_overrides(self, overrides: Dict[str, object], source: str = "overrides") -> "GenerationConfig":
        return replace(self, **_coerce_all(overrides, source)).validate()

    def to_env_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(repr(float(c)) for c in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"


FIELD_NAMES = tuple(f.name for f in fields(GenerationConfig))
_FIELD_TYPES = {f.name: f.type for f in fields(GenerationConfig)}


def normalize_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def _coerce(key: str, raw, source: str):
    kind = _FIELD_TYPES[key]
    if raw is None:
        return None
    if not isinstance(raw, str):
        if kind == Optional[Tuple[float, float, float]]:
            return tuple(float(c) for c in raw)
        return raw
    text = raw.strip()
    try:
        if kind is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind == Optional[Tuple[float, float, float]]:
            if text == "" or text.lower() == "none":
                return None
            parts = [float(p) for p in text.replace(" ", "").split(",")]
            if len(parts) != 3:
                raise ValueError(text)
            return tuple(parts)
        if kind == Optional[str]:
            return text or None
        return text.lower() if key == "encoder" else text
    except ValueError:
        raise ConfigError(f"Invalid value '{raw}' for '{key}' in {source}")


def _coerce_all(values: Dict[str, object], source: str) -> Dict[str, object]:
    out = {}
    for raw_key, raw in values.items():
        key = normalize_key(raw_key)
        if key not in _FIELD_TYPES:
            raise ConfigError(f"Unknown configuration key '{raw_key}' in {source}")
        out[key] = _coerce(key, raw, source)
    return out


def env_overrides(environ=None) -> Dict[str, str]:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            key = normalize_key(name[len(ENV_PREFIX):])
            if key in _FIELD_TYPES:
                out[key] = value
    return out


def read_config_file(path: Path) -> Dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    return {k: v for k, v in dotenv_values(path).items() if v is not None}


def load_config(config_file: Path = None, cli_overrides: Dict[str, object] = None, environ=None) -> GenerationConfig:
    """Resolve the effective configuration from every source."""
    config = GenerationConfig()
    config = config.with_overrides(env_overrides(environ), source="environment")
    if config_file is not None:
        config = config.with_overrides(read_config_file(config_file), source=str(config_file))
    if cli_overrides:
        flags = {k: v for k, v in cli_overrides.items() if v is not None}
        config = config.with_overrides(flags, source="command line")
    return config.validate()
