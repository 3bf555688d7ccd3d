"""
utils_config.py - configuration for tubeness commands.

Values are layered, highest first:
    1. command-line flags
    2. a config file given with --config (`key = value` lines, # comments)
    3. environment variables TUBENESS_<KEY>, loaded from .env
    4. the defaults below
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import dataclasses
import os
import pathlib
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Tuple

# Import external packages
from dotenv import load_dotenv

# Import functions from local modules
from tubeness.errors import ConfigError
from utils.utils_logger import logger

#####################################
# Load Environment Variables
#####################################

load_dotenv()

ENV_PREFIX = "TUBENESS_"

#####################################
# Getter Functions for .env Variables
#####################################


def get_thread_count() -> int:
    """Fetch worker thread count from environment or use every available core."""
    raw = os.getenv(f"{ENV_PREFIX}THREADS", "").strip()
    threads = _convert("threads", raw) if raw else (os.cpu_count() or 1)
    logger.info(f"Worker threads: {threads}")
    return threads


def get_seed() -> int:
    """Fetch the PRNG seed from environment or use the default."""
    raw = os.getenv(f"{ENV_PREFIX}SEED", "").strip()
    seed = _convert("seed", raw) if raw else Config.seed
    logger.info(f"PRNG seed: {seed}")
    return seed


#####################################
# Config
#####################################

Range = Tuple[float, float, float]


@dataclass(frozen=True)
class Config:
    # vesselness; the scale and threshold defaults are the cohort optimum
    s_min: float = 1.4
    s_max: float = 3.2
    s_step: float = 0.2
    alpha: float = 0.5
    beta_f: float = 0.5
    c: float = 500.0
    t1: float = 0.96
    t2: float = 0.35

    # grid search ranges as start, stop, step
    grid_s_min: Range = (0.2, 2.0, 0.2)
    grid_s_max: Range = (2.0, 4.0, 0.2)
    grid_t1: Range = (0.90, 0.99, 0.01)
    grid_t2: Range = (0.05, 0.50, 0.05)

    scale: str = "wardlaw"
    count_kind: str = "auto"
    fusion: str = "intersection"
    seed: int = 7
    threads: int = 1

    min_length_mm: float = 3.0
    max_length_mm: float = 50.0
    axis: str = "z"
    target_spacing: float = 1.0

    # synthetic calibration data
    n: int = 1000
    lognormal_mu: float = 2.3
    lognormal_sigma: float = 0.9
    rating_from: str = "pc"

    def validate(self) -> "Config":
        checks = [
            (0 < self.s_min <= self.s_max, "need 0 < s_min <= s_max"),
            (self.s_step > 0, "s_step must be positive"),
            (self.alpha > 0 and self.beta_f > 0 and self.c > 0, "alpha, beta_f and c must be positive"),
            (0 < self.t1 < 1 and 0 < self.t2 < 1, "t1 and t2 must lie in (0, 1)"),
            (self.scale in ("wardlaw", "patankar"), "scale must be wardlaw or patankar"),
            (self.count_kind in ("slice", "total", "auto"), "count_kind must be slice, total or auto"),
            (self.fusion in ("intersection", "union", "t1", "t2"), "fusion must be intersection, union, t1 or t2"),
            (self.threads >= 1, "threads must be at least 1"),
            (0 <= self.min_length_mm <= self.max_length_mm, "need 0 <= min_length_mm <= max_length_mm"),
            (self.axis in ("x", "y", "z"), "axis must be x, y or z"),
            (self.target_spacing > 0, "target_spacing must be positive"),
            (self.n >= 1, "n must be at least 1"),
            (self.lognormal_sigma > 0, "lognormal_sigma must be positive"),
            (self.rating_from in ("pc", "npc"), "rating_from must be pc or npc"),
        ]
        for name in ("grid_s_min", "grid_s_max", "grid_t1", "grid_t2"):
            start, stop, step = getattr(self, name)
            checks.append((start <= stop and step > 0, f"{name} needs start <= stop and a positive step"))
        for name in ("grid_t1", "grid_t2"):
            start, stop, _ = getattr(self, name)
            checks.append((0 < start and stop < 1, f"{name} thresholds must lie in (0, 1)"))
        for ok, message in checks:
            if not ok:
                logger.error(f"Invalid configuration: {message}")
                raise ConfigError(message)
        return self

    def resolved_count_kind(self) -> str:
        if self.count_kind != "auto":
            return self.count_kind
        return "slice" if self.scale == "wardlaw" else "total"


FIELDS = {f.name: f for f in dataclasses.fields(Config)}


def _convert(key: str, raw: Any) -> Any:
    default = FIELDS[key].default
    if not isinstance(raw, str):
        return tuple(float(v) for v in raw) if isinstance(default, tuple) else type(default)(raw)
    text = raw.strip()
    try:
        if isinstance(default, tuple):
            values = tuple(float(v) for v in text.replace(",", " ").split())
            if len(values) != 3:
                raise ValueError(f"expected start, stop, step, got {text!r}")
            return values
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}") from None


def load_config_file(path) -> Dict[str, Any]:
    """Parse `key = value` lines; blank lines and # comments are skipped."""
    path = pathlib.Path(path)
    values: Dict[str, Any] = {}
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path} line {line_no}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in FIELDS:
            logger.error(f"Unknown key {key!r} in {path}")
            raise ConfigError(f"{path} line {line_no}: unknown key {key!r}")
        values[key] = _convert(key, value)
    logger.info(f"Read {len(values)} settings from {path}")
    return values


def _environment() -> Dict[str, Any]:
    values: Dict[str, Any] = {"threads": get_thread_count(), "seed": get_seed()}
    for key in FIELDS:
        if key in values:
            continue
        raw = os.getenv(ENV_PREFIX + key.upper(), "").strip()
        if raw:
            values[key] = _convert(key, raw)
    return values


def resolve_config(
    overrides: Optional[Mapping[str, Any]] = None, config_path: Optional[str] = None
) -> Config:
    """Merge defaults, environment, config file and CLI overrides (None means unset)."""
    values = _environment()
    if config_path:
        values.update(load_config_file(config_path))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in FIELDS:
            raise ConfigError(f"unknown setting {key!r}")
        values[key] = _convert(key, value)
    return Config(**values).validate()


def format_config(values: Mapping[str, Any]) -> str:
    """Render settings as `key = value` lines that load_config_file reads back."""
    lines = []
    for key, value in values.items():
        if isinstance(value, tuple):
            value = ", ".join(f"{v:g}" for v in value)
        elif isinstance(value, float):
            value = f"{value:g}"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
