"""
synthesis/config.py
===================
Typed configuration for every stage, the experiment preset registry and the
strict JSON loader.

Resolution order: defaults < preset < config file < command-line flags.
The seed falls back to the BAKESYNTH_SEED environment variable when neither
the config file nor a flag sets it.
"""

from __future__ import annotations

import os
import copy
import logging
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any, Dict, List, Optional, Tuple

from raster.geometry import KERNEL_SHAPES, StructuringElement
from data_collector.auto_annotate import AnnotationConfig
from data_collector.utils import canonical_hash, load_json

logger = logging.getLogger(__name__)

SEED_ENV_VAR = "BAKESYNTH_SEED"
BANK_NAMES = ("train_b", "train_c", "train_s")
REAL_SET_NAMES = ("train_a", "train_b", "train_c", "train_s")
PLACEMENT_MODES = ("rejection", "exhaustive")
CLAHE_RANGES = ("original", "full")

# Fields that only change how a run executes, never what it produces
NON_SEMANTIC_FIELDS = ("root", "jobs")


class ConfigError(ValueError):
    def __init__(self, problems: List[str]):
        self.problems = list(problems)
        super().__init__("Invalid configuration:\n  - " + "\n  - ".join(self.problems))


# ===========================================================================
#  Stage configs
# ===========================================================================

@dataclass
class AugmentationSpec:
    # Sequential online pipeline: four spatial transforms, then four pixel transforms
    spatial_probability: float = 0.01
    pixel_probability: float = 0.04
    rotate_limit: Tuple[float, float] = (-15.0, 15.0)
    scale_range: Tuple[float, float] = (0.9, 1.1)
    blur_kernel_range: Tuple[int, int] = (3, 7)
    median_kernel_range: Tuple[int, int] = (3, 7)
    dropout_holes: Tuple[int, int] = (1, 8)
    dropout_hole_size: Tuple[float, float] = (0.02, 0.1)
    pixel_dropout_rate: float = 0.01
    clahe_clip_limit: float = 2.0
    clahe_tile_grid: Tuple[int, int] = (8, 8)
    clahe_range: str = "original"

    # Per-object augmentation applied before pasting
    paste_rotation_range: Tuple[float, float] = (-180.0, 180.0)
    paste_scale_range: Tuple[float, float] = (0.8, 1.25)
    paste_blur_probability: float = 0.1
    paste_blur_kernels: Tuple[int, int] = (3, 5)
    paste_clahe_probability: float = 0.5

    def problems(self, prefix: str = "augmentation") -> List[str]:
        issues = []
        for name in ("spatial_probability", "pixel_probability", "pixel_dropout_rate",
                     "paste_blur_probability", "paste_clahe_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                issues.append(f"{prefix}.{name} must be in [0, 1]")
        for name in ("rotate_limit", "scale_range", "blur_kernel_range", "median_kernel_range",
                     "dropout_holes", "dropout_hole_size", "paste_rotation_range", "paste_scale_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                issues.append(f"{prefix}.{name} is an empty range")
        for name in ("scale_range", "paste_scale_range", "dropout_hole_size"):
            if getattr(self, name)[0] <= 0:
                issues.append(f"{prefix}.{name} must be positive")
        if self.dropout_hole_size[1] > 1.0:
            issues.append(f"{prefix}.dropout_hole_size must not exceed 1")
        for name in ("blur_kernel_range", "median_kernel_range"):
            if getattr(self, name)[0] < 1:
                issues.append(f"{prefix}.{name} must start at 1 or more")
        if self.dropout_holes[0] < 0:
            issues.append(f"{prefix}.dropout_holes must be non-negative")
        if any(k < 1 or k % 2 == 0 for k in self.paste_blur_kernels):
            issues.append(f"{prefix}.paste_blur_kernels must be odd and positive")
        if self.clahe_clip_limit <= 0:
            issues.append(f"{prefix}.clahe_clip_limit must be positive")
        if min(self.clahe_tile_grid) < 1:
            issues.append(f"{prefix}.clahe_tile_grid must be at least 1x1")
        if self.clahe_range not in CLAHE_RANGES:
            issues.append(f"{prefix}.clahe_range must be one of {CLAHE_RANGES}")
        return issues


@dataclass
class SynthesisConfig:
    canvas_width: int = 1280
    canvas_height: int = 960
    object_count_range: Tuple[int, int] = (16, 30)
    min_area_fraction: float = 0.03
    max_area_fraction: float = 0.25
    scale_tolerance: float = 0.02
    oversample_threshold: float = 0.03
    placement_dilation: StructuringElement = field(default_factory=lambda: StructuringElement("square", 8))
    max_placement_attempts: int = 100
    placement_mode: str = "rejection"
    max_backgrounds: int = 0
    paste_augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    seed: int = 0

    @property
    def canvas_size(self) -> Tuple[int, int]:
        return (self.canvas_width, self.canvas_height)

    @property
    def mean_object_count(self) -> float:
        lo, hi = self.object_count_range
        return (lo + hi) / 2.0

    def problems(self, prefix: str = "synthesis") -> List[str]:
        issues = []
        if self.canvas_width < 1 or self.canvas_height < 1:
            issues.append(f"{prefix}.canvas dims must be positive")
        lo, hi = self.object_count_range
        if lo < 0 or lo > hi:
            issues.append(f"{prefix}.object_count_range must be a nonempty non-negative range")
        if not 0.0 < self.min_area_fraction < self.max_area_fraction < 1.0:
            issues.append(f"{prefix}: need 0 < min_area_fraction < max_area_fraction < 1")
        if not 0.0 <= self.scale_tolerance < 1.0:
            issues.append(f"{prefix}.scale_tolerance must be in [0, 1)")
        if not 0.0 < self.oversample_threshold < 1.0:
            issues.append(f"{prefix}.oversample_threshold must be in (0, 1)")
        if self.max_placement_attempts < 1:
            issues.append(f"{prefix}.max_placement_attempts must be >= 1")
        if self.placement_mode not in PLACEMENT_MODES:
            issues.append(f"{prefix}.placement_mode must be one of {PLACEMENT_MODES}")
        if self.max_backgrounds < 0:
            issues.append(f"{prefix}.max_backgrounds must be >= 0")
        issues.extend(self.paste_augmentation.problems(f"{prefix}.paste_augmentation"))
        return issues


@dataclass
class PathsConfig:
    # All relative to RunConfig.root
    annotate_input: Optional[str] = None
    train_b: Optional[str] = None
    train_c: Optional[str] = None
    train_s: Optional[str] = None
    train_a: Optional[str] = None
    backgrounds: Optional[str] = None
    dataset: Optional[str] = None
    output: Optional[str] = None


@dataclass
class RunConfig:
    preset: str = "baseline"
    root: str = "."
    class_list: List[str] = field(default_factory=list)
    run_name: str = "synth"
    n_images: int = 2000
    jobs: int = 1
    pool: List[str] = field(default_factory=lambda: ["train_b"])
    real_sets: List[str] = field(default_factory=lambda: ["train_a", "train_b"])
    balance: bool = False
    cast_unknown: bool = False
    annotate_source: str = "train_b"
    longest_side: int = 1280
    grayscale: bool = False
    apply_dp: bool = True
    annotation: AnnotationConfig = field(default_factory=AnnotationConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def problems(self) -> List[str]:
        issues = []
        if self.preset not in PRESETS:
            issues.append(f"preset must be one of {sorted(PRESETS)}")
        if self.n_images < 1:
            issues.append("n_images must be >= 1")
        if self.jobs < 1:
            issues.append("jobs must be >= 1")
        if self.longest_side < 32:
            issues.append("longest_side must be >= 32")
        if not self.pool:
            issues.append("pool must name at least one bank")
        for name in self.pool:
            if name not in BANK_NAMES:
                issues.append(f"pool entry '{name}' must be one of {BANK_NAMES}")
        for name in self.real_sets:
            if name not in REAL_SET_NAMES:
                issues.append(f"real_sets entry '{name}' must be one of {REAL_SET_NAMES}")
        if self.annotate_source not in ("train_b", "train_c", "train_s"):
            issues.append("annotate_source must be train_b, train_c or train_s")
        if len(set(self.class_list)) != len(self.class_list):
            issues.append("class_list contains duplicates")
        if not self.run_name or any(c in self.run_name for c in "/\\ "):
            issues.append("run_name must be a nonempty name without slashes or spaces")
        issues.extend(self.annotation.problems())
        issues.extend(self.synthesis.problems())
        issues.extend(self.augmentation.problems())
        return issues

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        data = self.to_dict()
        for name in NON_SEMANTIC_FIELDS:
            data.pop(name, None)
        return canonical_hash(data)

    def resolve(self, path: Optional[str]) -> Optional[str]:
        """Resolve a configured path against root."""
        if path is None:
            return None
        return path if os.path.isabs(path) else os.path.join(self.root, path)


# ===========================================================================
#  Experiment presets: training-set compositions, up to detector training
# ===========================================================================

PRESETS: Dict[str, Dict[str, Any]] = {
    "baseline": {
        "pool": ["train_b"],
        "real_sets": ["train_a", "train_b"],
        "balance": False,
        "cast_unknown": False,
    },
    "type-balance": {
        "pool": ["train_b"],
        "real_sets": ["train_a", "train_b"],
        "balance": True,
        "cast_unknown": False,
    },
    "unknown": {
        "pool": ["train_b", "train_c"],
        "real_sets": ["train_a", "train_b", "train_c"],
        "balance": True,
        "cast_unknown": True,
    },
    "pix2pix": {
        # Generated crops have no usable background; a small train_b subset forms the mosaics
        "pool": ["train_s"],
        "real_sets": ["train_a", "train_b", "train_c", "train_s"],
        "balance": True,
        "cast_unknown": True,
        "synthesis": {"max_backgrounds": 50},
    },
    "all-data": {
        "pool": ["train_b", "train_c", "train_s"],
        "real_sets": ["train_a", "train_b", "train_c", "train_s"],
        "balance": True,
        "cast_unknown": True,
    },
}


# ===========================================================================
#  Strict loading
# ===========================================================================

def _deep_merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _coerce(value, template, path: str, problems: List[str]):
    """Convert a JSON value to the type of template, recording mismatches."""
    if is_dataclass(template):
        if isinstance(value, type(template)):
            return value
        if not isinstance(value, dict):
            problems.append(f"{path}: expected an object")
            return template
        return _build(type(template), value, path, problems)
    if template is None:
        if value is not None and not isinstance(value, str):
            problems.append(f"{path}: expected a string or null")
            return None
        return value
    if isinstance(template, bool):
        if not isinstance(value, bool):
            problems.append(f"{path}: expected true/false")
            return template
        return value
    if isinstance(template, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if _is_number(value) and float(value).is_integer():
                return int(value)
            problems.append(f"{path}: expected an integer")
            return template
        return value
    if isinstance(template, float):
        if not _is_number(value):
            problems.append(f"{path}: expected a number")
            return template
        return float(value)
    if isinstance(template, str):
        if not isinstance(value, str):
            problems.append(f"{path}: expected a string")
            return template
        return value
    if isinstance(template, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(template):
            problems.append(f"{path}: expected a list of {len(template)} numbers")
            return template
        return tuple(_coerce(v, t, f"{path}[{i}]", problems) for i, (v, t) in enumerate(zip(value, template)))
    if isinstance(template, list):
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            problems.append(f"{path}: expected a list of strings")
            return template
        return list(value)
    problems.append(f"{path}: unsupported value")
    return template


def _build(cls, data: Dict[str, Any], path: str, problems: List[str]):
    default = cls()
    names = {f.name for f in fields(cls)}
    for key in sorted(set(data) - names):
        problems.append(f"{path + '.' if path else ''}{key}: unknown key")
    kwargs = {}
    for name in names:
        template = getattr(default, name)
        sub = f"{path}.{name}" if path else name
        kwargs[name] = _coerce(data[name], template, sub, problems) if name in data else template
    if cls is StructuringElement:
        if kwargs["shape"] not in KERNEL_SHAPES or kwargs["radius"] < 1:
            problems.append(f"{path}: kernel needs shape in {KERNEL_SHAPES} and radius >= 1")
            return default
    return cls(**kwargs)


def parse_run_config(data: Dict[str, Any]) -> RunConfig:
    problems: List[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["top level: expected an object"])
    config = _build(RunConfig, data, "", problems)
    if not problems:
        problems.extend(config.problems())
    if problems:
        raise ConfigError(problems)
    return config


def default_config_dict() -> Dict[str, Any]:
    return RunConfig().to_dict()


def load_run_config(config_path: Optional[str] = None, preset: Optional[str] = None,
                    overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Resolve defaults < preset < file < overrides into a validated RunConfig.
    """
    file_data: Dict[str, Any] = {}
    if config_path:
        try:
            file_data = load_json(config_path)
        except FileNotFoundError:
            raise ConfigError([f"config file not found: {config_path}"])
        except ValueError as e:
            raise ConfigError([f"config file is not valid JSON: {e}"])
        if not isinstance(file_data, dict):
            raise ConfigError(["top level: expected an object"])
    overrides = overrides or {}

    preset_name = preset or overrides.get("preset") or file_data.get("preset") or RunConfig.preset
    if preset_name not in PRESETS:
        raise ConfigError([f"preset must be one of {sorted(PRESETS)}, got '{preset_name}'"])

    merged = _deep_merge(default_config_dict(), PRESETS[preset_name])
    merged = _deep_merge(merged, file_data)
    merged = _deep_merge(merged, overrides)
    merged["preset"] = preset_name

    seed_given = "seed" in file_data.get("synthesis", {}) if isinstance(file_data.get("synthesis"), dict) else False
    seed_given = seed_given or "seed" in overrides.get("synthesis", {})
    if not seed_given and os.environ.get(SEED_ENV_VAR):
        try:
            merged["synthesis"]["seed"] = int(os.environ[SEED_ENV_VAR])
        except ValueError:
            raise ConfigError([f"{SEED_ENV_VAR} must be an integer, got '{os.environ[SEED_ENV_VAR]}'"])

    return parse_run_config(merged)
