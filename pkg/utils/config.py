# utils/config.py

"""
Pipeline configuration: a dataclass tree mirroring config.yaml and every CLI flag.
Precedence is built-in defaults < config file < command-line flags.
"""

import os
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Any, Dict, Optional

import yaml

from evaluation.metrics import ICC_FORMS
from pipeline.cycle import MetricKind
from pipeline.errors import UsageError
from pipeline.fitting import CURVE_GRID_SIZE, DEFAULT_RESTARTS, FitMethod
from pipeline.morph import HoleMode, StructuringElement
from pipeline.noise import NoiseModel

THREADS_ENV = "VENTRIQ_THREADS"
OUTPUT_FORMATS = ("json", "csv")
HAUSDORFF_UNITS = ("mm", "voxel")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise UsageError(message)


@dataclass
class PathsConfig:
    logs: str = "logs"
    reports: str = "reports"


@dataclass
class AnalysisConfig:
    metric: MetricKind = MetricKind.MID_SLICE_AREA
    fit: FitMethod = FitMethod.GP
    # Report observed values at the snapped phases; False adds the fitted extremum values.
    snap: bool = True
    grid_size: int = CURVE_GRID_SIZE

    def __post_init__(self):
        self.metric = MetricKind(self.metric)
        self.fit = FitMethod(self.fit)
        self.snap = bool(self.snap)
        self.grid_size = int(self.grid_size)
        _require(self.grid_size >= 2, f"analysis.grid_size must be >= 2, got {self.grid_size}")


@dataclass
class PostprocessConfig:
    enabled: bool = False
    threshold: float = 0.5
    structuring_element: StructuringElement = StructuringElement.CROSS6
    iterations: int = 1
    hole_mode: HoleMode = HoleMode.FILL

    def __post_init__(self):
        self.enabled = bool(self.enabled)
        self.threshold = float(self.threshold)
        self.structuring_element = StructuringElement(self.structuring_element)
        self.iterations = int(self.iterations)
        self.hole_mode = HoleMode(self.hole_mode)
        _require(0.0 <= self.threshold <= 1.0, f"postprocess.threshold must lie in [0, 1], got {self.threshold}")
        _require(self.iterations >= 1, f"postprocess.iterations must be >= 1, got {self.iterations}")


@dataclass
class GPConfig:
    amplitude: float = 0.1
    length_scale: float = 0.5
    jitter: float = 1e-10
    restarts: int = DEFAULT_RESTARTS

    def __post_init__(self):
        self.amplitude = float(self.amplitude)
        self.length_scale = float(self.length_scale)
        self.jitter = float(self.jitter)
        self.restarts = int(self.restarts)
        _require(self.amplitude > 0 and self.length_scale > 0, "gp.amplitude and gp.length_scale must be > 0")
        _require(self.jitter >= 0, f"gp.jitter must be >= 0, got {self.jitter}")
        _require(self.restarts >= 0, f"gp.restarts must be >= 0, got {self.restarts}")


@dataclass
class NoiseConfig:
    model: NoiseModel = NoiseModel.RICIAN
    # None picks the model default (30, or 20 for mixed).
    snr: Optional[float] = None
    normalize_first: bool = False

    def __post_init__(self):
        self.model = NoiseModel(self.model)
        self.snr = None if self.snr is None else float(self.snr)
        self.normalize_first = bool(self.normalize_first)
        _require(self.snr is None or self.snr > 0, f"noise.snr must be > 0, got {self.snr}")


@dataclass
class MetricsConfig:
    hausdorff_units: str = "mm"
    icc_form: str = "2,1"

    def __post_init__(self):
        _require(self.hausdorff_units in HAUSDORFF_UNITS,
                 f"metrics.hausdorff_units must be one of {HAUSDORFF_UNITS}, got {self.hausdorff_units!r}")
        self.icc_form = str(self.icc_form)
        _require(self.icc_form in ICC_FORMS, f"metrics.icc_form must be one of {ICC_FORMS}, got {self.icc_form!r}")


SECTIONS = {
    "paths": PathsConfig,
    "analysis": AnalysisConfig,
    "postprocess": PostprocessConfig,
    "gp": GPConfig,
    "noise": NoiseConfig,
    "metrics": MetricsConfig,
}


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    max_threads: int = 1
    seed: int = 0
    output_format: str = "json"
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    gp: GPConfig = field(default_factory=GPConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def __post_init__(self):
        _require(int(self.max_threads) >= 1, f"max_threads must be >= 1, got {self.max_threads}")
        _require(self.output_format in OUTPUT_FORMATS,
                 f"output_format must be one of {OUTPUT_FORMATS}, got {self.output_format!r}")
        self.max_threads = int(self.max_threads)
        self.seed = int(self.seed)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "PipelineConfig":
        data = data or {}
        _require(isinstance(data, dict), "Configuration must be a mapping")
        allowed = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - allowed)
        _require(not unknown, f"Unknown configuration key(s): {unknown}")

        kwargs: Dict[str, Any] = {}
        for key, value in data.items():
            if key in SECTIONS:
                kwargs[key] = _section_from_dict(key, value)
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as e:
            raise UsageError(f"Invalid configuration: {e}") from e

    def to_dict(self) -> Dict[str, Any]:
        return _plain(asdict(self))

    def override(self, section: str, **values) -> "PipelineConfig":
        """Copy with the non-None `values` applied to one section."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        try:
            return replace(self, **{section: replace(getattr(self, section), **values)})
        except (TypeError, ValueError) as e:
            raise UsageError(f"Invalid {section} option: {e}") from e

    def effective_threads(self) -> int:
        """VENTRIQ_THREADS wins over max_threads when set."""
        raw = os.getenv(THREADS_ENV)
        if raw:
            try:
                threads = int(raw)
            except ValueError:
                raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
            _require(threads >= 1, f"{THREADS_ENV} must be >= 1, got {threads}")
            return threads
        return self.max_threads


def _section_from_dict(name: str, value: Any):
    cls = SECTIONS[name]
    if value is None:
        return cls()
    _require(isinstance(value, dict), f"Configuration section '{name}' must be a mapping")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(value) - allowed)
    _require(not unknown, f"Unknown key(s) in '{name}': {unknown}")
    try:
        return cls(**value)
    except (TypeError, ValueError) as e:
        raise UsageError(f"Invalid '{name}' configuration: {e}") from e


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, Enum):
        return value.value
    return value


def load_config(path: Optional[str]) -> PipelineConfig:
    """YAML or JSON file; a missing path gives the defaults."""
    if not path:
        return PipelineConfig()
    try:
        with open(path, "r", encoding="utf-8") as file:
            data = yaml.safe_load(file)
    except FileNotFoundError as e:
        raise UsageError(f"Config file not found: {path}") from e
    except yaml.YAMLError as e:
        raise UsageError(f"Could not parse config file {path}: {e}") from e
    return PipelineConfig.from_dict(data)


def save_config(cfg: PipelineConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as file:
        yaml.safe_dump(cfg.to_dict(), file, sort_keys=False)
