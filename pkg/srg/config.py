"""
Configuration constants, run profiles and the key = value run-config parser
"""

import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from srg.errors import ConfigurationError

# Load environment variables from .env file
env_path = Path(__file__).parent.parent / ".env"
load_dotenv(dotenv_path=env_path)

# Parallelism cap for per-video work
SRG_THREADS = max(1, int(os.getenv("SRG_THREADS", "1") or 1))

# Logging
LOG_DIR_DEFAULT = os.getenv("SRG_LOG_DIR", "logs")
LOG_FILE_NAME = "srg_log.jsonl"

# Binary formats
FEATURE_MAGIC = b"SRGF"
FEATURE_VERSION = 1
CHECKPOINT_MAGIC = b"SRGW"
CHECKPOINT_VERSION = 1
SCORE_MAP_MAGIC = b"SRGM"
SCORE_MAP_VERSION = 1

# Label / loss constants
PROBABILITY_EPS = 1e-7
POSITIVE_TIOU = 0.5
NEGATIVE_TIOU = 0.1
MAX_OFFSET = 0.5

# Run directory layout
DATASET_DIR_NAME = "dataset"
MANIFEST_NAME = "manifest.json"
ANNOTATIONS_NAME = "annotations.tsv"
FEATURES_DIR_NAME = "features"
TIGN_CHECKPOINT = "tign.srgw"
TIEN_CHECKPOINT = "tien.srgw"
TIGN_LOSSES = "tign_losses.csv"
TIEN_LOSSES = "tien_losses.csv"
INTERVALS_NAME = "intervals.tsv"
SOURCE_SPANS_NAME = "source_spans.tsv"
PROPOSALS_NAME = "proposals.tsv"
METRICS_NAME = "metrics.csv"
ABLATION_NAME = "ablation.csv"
SCORE_MAPS_DIR_NAME = "score_maps"

PyramidLevels = List[Tuple[int, int]]


class RunConfig(BaseModel):
    """Every knob of a run; profiles supply defaults, config files override"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    profile: str = "tiny"
    seed: int = 7
    dataset_dir: Optional[str] = None
    allow_training: bool = True

    # synthetic corpus
    num_train_videos: int = Field(default=200, ge=1)
    num_test_videos: int = Field(default=50, ge=1)
    min_length: int = Field(default=96, ge=4)
    max_length: int = Field(default=256, ge=4)
    min_instances: int = Field(default=1, ge=0)
    max_instances: int = Field(default=4, ge=0)
    min_duration: int = Field(default=4, ge=1)
    max_duration: int = Field(default=32, ge=1)
    min_gap: int = Field(default=2, ge=0)
    num_classes: int = Field(default=5, ge=1)
    appearance_dim: int = Field(default=16, ge=1)
    motion_dim: int = Field(default=16, ge=1)
    signature_noise: float = Field(default=0.3, ge=0.0)
    background_noise: float = Field(default=0.3, ge=0.0)
    frames_per_snippet: int = Field(default=6, ge=1)

    # networks
    neighbors: int = Field(default=32, ge=1)
    tign_hidden: int = Field(default=32, ge=2)
    tien_hidden: int = Field(default=16, ge=2)
    tign_block: Literal["PN", "CM"] = "PN"
    tien_block: Literal["PN", "CM"] = "PN"
    tign_levels: PyramidLevels = Field(default_factory=lambda: [(3, 1), (5, 3), (7, 5), (15, 7)])
    tien_levels: PyramidLevels = Field(default_factory=lambda: [(1, 3), (3, 3), (5, 3), (7, 3)])
    head_kernel: int = Field(default=3, ge=1)
    attention_reduction: int = Field(default=8, ge=1)
    attention_kernel: int = Field(default=7, ge=1)
    actionness_head: bool = False

    # training
    tign_epochs: int = Field(default=30, ge=1)
    tign_learning_rate: float = Field(default=2e-3, gt=0.0)
    tign_decay_every: int = Field(default=200, ge=1)
    tien_steps: int = Field(default=300, ge=1)
    tien_batch_size: int = Field(default=256, ge=2)
    tien_learning_rate: float = Field(default=1e-3, gt=0.0)
    tien_decay_every: int = Field(default=50, ge=1)
    lr_decay_rate: float = Field(default=0.96, gt=0.0, le=1.0)
    offset_loss_weight: float = Field(default=0.1, ge=0.0)

    # intervals and proposals
    context_length: int = Field(default=20, ge=0)
    feature_length: int = Field(default=128, ge=2)
    tau_values: List[float] = Field(default_factory=lambda: [round(0.1 * k, 1) for k in range(1, 10)])
    interval_source: Literal["RS", "WRS", "both"] = "both"
    nms_mode: Literal["fixed", "adaptive"] = "fixed"
    nms_threshold: float = Field(default=0.83, gt=0.0, lt=1.0)
    nms_floor: float = Field(default=0.5, gt=0.0, lt=1.0)
    boost: bool = False
    dump_score_maps: bool = False

    # evaluation
    tiou_thresholds: List[float] = Field(default_factory=lambda: [round(0.5 + 0.05 * k, 2) for k in range(11)])
    an_values: List[int] = Field(default_factory=lambda: [1, 5, 10, 20, 50, 100])
    auc_max_an: int = Field(default=100, ge=1)
    an_normalization: Literal["per_video", "corpus"] = "per_video"

    # ablation
    ablate_blocks: List[str] = Field(default_factory=lambda: ["CM+CM", "CM+PN", "PN+CM", "PN+PN"])
    ablate_boost: List[bool] = Field(default_factory=lambda: [False, True])
    ablate_interval_only: bool = False

    @field_validator("tign_levels", "tien_levels", mode="before")
    @classmethod
    def _parse_levels(cls, value: Any) -> Any:
        if isinstance(value, str):
            levels = []
            for item in value.split(","):
                kernel, _, stride = item.strip().partition(":")
                levels.append((int(kernel), int(stride)))
            return levels
        return value

    @field_validator("tign_levels", "tien_levels")
    @classmethod
    def _positive_levels(cls, value: PyramidLevels) -> PyramidLevels:
        if not value:
            raise ValueError("at least one pyramid level is required")
        if any(k < 1 or s < 1 for k, s in value):
            raise ValueError("pyramid kernel and stride must be >= 1")
        return value

    @field_validator("tau_values", "tiou_thresholds", "an_values", "ablate_blocks", mode="before")
    @classmethod
    def _split_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @field_validator("ablate_boost", mode="before")
    @classmethod
    def _on_off(cls, value: Any) -> Any:
        words = {"on": True, "off": False}
        if isinstance(value, str):
            value = [item.strip() for item in value.split(",") if item.strip()]
        return [words.get(str(v).lower(), v) for v in value]

    @field_validator("tau_values")
    @classmethod
    def _tau_in_unit_interval(cls, value: List[float]) -> List[float]:
        if not value or any(not 0.0 < t < 1.0 for t in value):
            raise ValueError("tau values must lie in (0, 1)")
        return value

    @field_validator("ablate_blocks")
    @classmethod
    def _block_pairs(cls, value: List[str]) -> List[str]:
        for pair in value:
            parts = pair.upper().split("+")
            if len(parts) != 2 or any(p not in ("CM", "PN") for p in parts):
                raise ValueError(f"ablation block pair {pair!r} must look like PN+CM")
        return [pair.upper() for pair in value]

    @model_validator(mode="after")
    def _consistent(self):
        if self.min_length > self.max_length:
            raise ValueError("min_length exceeds max_length")
        if self.min_instances > self.max_instances:
            raise ValueError("min_instances exceeds max_instances")
        if self.min_duration > self.max_duration:
            raise ValueError("min_duration exceeds max_duration")
        return self


PROFILES: Dict[str, Dict[str, Any]] = {
    # Desk scale: trains end to end in minutes on one CPU thread
    "tiny": {},
    # Full-size heads (1201/602/602) for shape conformance; forward pass only
    "paperish": {
        "allow_training": False,
        "num_train_videos": 2,
        "num_test_videos": 2,
        "min_length": 200,
        "max_length": 320,
        "max_duration": 120,
        "neighbors": 600,
        "tign_learning_rate": 1e-4,
        "tign_decay_every": 10,
        "tien_learning_rate": 1e-4,
        "tien_decay_every": 10,
        "tien_steps": 10000,
    },
}


def _coerce_scalar(text: str) -> Any:
    lowered = text.lower()
    if lowered in ("true", "yes"):
        return True
    if lowered in ("false", "no"):
        return False
    return text


def parse_config_text(text: str) -> Tuple[Dict[str, Any], Dict[str, int]]:
    """
    Parse key = value lines. Returns the values and the line each key came from.
    """
    values: Dict[str, Any] = {}
    lines: Dict[str, int] = {}
    known = set(RunConfig.model_fields)
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"expected 'key = value', got {raw.strip()!r}", line=number)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in known:
            raise ConfigurationError(f"unknown key {key!r}", line=number)
        if not value:
            raise ConfigurationError(f"key {key!r} has no value", line=number)
        values[key] = _coerce_scalar(value)
        lines[key] = number
    return values, lines


def build_run_config(
    profile: Optional[str] = None,
    config_path: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """
    Merge profile defaults, an optional config file and CLI overrides, then
    validate. An explicit profile beats the file's, which beats "tiny".
    Errors name the offending line when it came from the file.
    """
    values: Dict[str, Any] = {}
    lines: Dict[str, int] = {}
    if config_path is not None:
        config_path = Path(config_path)
        if not config_path.exists():
            raise ConfigurationError(f"config file {config_path} does not exist")
        values, lines = parse_config_text(config_path.read_text(encoding="utf-8"))
        file_profile = values.pop("profile", None)
        profile = profile or file_profile
    profile = profile or "tiny"

    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r} (known: {', '.join(PROFILES)})")

    merged = {"profile": profile, **PROFILES[profile], **values, **(overrides or {})}
    try:
        config = RunConfig(**merged)
    except ValidationError as e:
        first = e.errors()[0]
        key = str(first["loc"][0]) if first["loc"] else ""
        raise ConfigurationError(f"{key}: {first['msg']}", line=lines.get(key))

    if config.dataset_dir is not None and not Path(config.dataset_dir).exists():
        raise ConfigurationError(f"dataset_dir {config.dataset_dir} does not exist", line=lines.get("dataset_dir"))
    return config
