"""
Record types shared across the pipeline
"""

from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class VideoMeta(BaseModel):
    """Timeline of one video: N_V frames grouped into snippets of N_s frames"""
    model_config = ConfigDict(frozen=True)

    video_id: str
    num_frames: int = Field(ge=1)
    frames_per_snippet: int = Field(ge=1)

    @property
    def num_snippets(self) -> int:
        return self.num_frames // self.frames_per_snippet

    @model_validator(mode="after")
    def _at_least_one_snippet(self):
        if self.num_snippets < 1:
            raise ValueError(
                f"video {self.video_id}: {self.num_frames} frames hold no snippet of {self.frames_per_snippet}"
            )
        return self


class GroundTruthInstance(BaseModel):
    """One annotated action span, inclusive snippet indices"""
    model_config = ConfigDict(frozen=True)

    start: int = Field(ge=0)
    end: int = Field(ge=0)
    class_id: int = Field(ge=0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.end < self.start:
            raise ValueError(f"instance end {self.end} precedes start {self.start}")
        return self

    @property
    def length(self) -> int:
        return self.end - self.start + 1


class SynthConfig(BaseModel):
    """Parameters of the synthetic corpus"""
    model_config = ConfigDict(frozen=True)

    num_videos: int = Field(ge=1)
    min_length: int = Field(ge=1)
    max_length: int = Field(ge=1)
    min_instances: int = Field(ge=0)
    max_instances: int = Field(ge=0)
    min_duration: int = Field(ge=1)
    max_duration: int = Field(ge=1)
    min_gap: int = Field(default=1, ge=0)
    num_classes: int = Field(ge=1)
    appearance_dim: int = Field(ge=1)
    motion_dim: int = Field(ge=1)
    signature_noise: float = Field(ge=0.0)
    background_noise: float = Field(ge=0.0)
    frames_per_snippet: int = Field(default=6, ge=1)
    seed: int = 0
    video_prefix: str = "video"

    @model_validator(mode="after")
    def _consistent_bounds(self):
        if self.min_length > self.max_length:
            raise ValueError("min_length exceeds max_length")
        if self.min_instances > self.max_instances:
            raise ValueError("min_instances exceeds max_instances")
        if self.min_duration > self.max_duration:
            raise ValueError("min_duration exceeds max_duration")
        return self


IntervalSource = Literal["RS", "WRS"]


class TemporalInterval(BaseModel):
    """Candidate span read off the score maps, before confidence scoring"""
    model_config = ConfigDict(frozen=True)

    t_s: int = Field(ge=0)
    t_e: int = Field(ge=0)
    source: IntervalSource
    tau: float
    ref_index: int

    @model_validator(mode="after")
    def _contains_reference(self):
        if not self.t_s <= self.ref_index <= self.t_e:
            raise ValueError(
                f"interval [{self.t_s}, {self.t_e}] does not contain reference snippet {self.ref_index}"
            )
        return self

    @property
    def length(self) -> int:
        return self.t_e - self.t_s + 1


class Proposal(BaseModel):
    """
    Scored, refined interval. Interval boundaries and offsets are absent when
    a proposal is read back from a proposal file, which only stores the
    refined span and the confidence.
    """
    model_config = ConfigDict(frozen=True)

    video_id: str
    refined_t_s: float
    refined_t_e: float
    c: float = Field(ge=0.0, le=1.0)
    t_s: Optional[int] = None
    t_e: Optional[int] = None
    o_s: Optional[float] = None
    o_e: Optional[float] = None

    @model_validator(mode="after")
    def _ordered(self):
        if self.refined_t_e < self.refined_t_s:
            raise ValueError(f"refined span [{self.refined_t_s}, {self.refined_t_e}] is reversed")
        return self

    @property
    def span(self) -> Tuple[float, float]:
        return (self.refined_t_s, self.refined_t_e)


class TrainingSample(BaseModel):
    """Interval labeled against ground truth for confidence/offset training"""
    model_config = ConfigDict(frozen=True)

    video_id: str
    t_s: int
    t_e: int
    c_g: float = Field(ge=0.0, le=1.0)
    positive: bool
    o_s_g: float = Field(ge=-0.5, le=0.5)
    o_e_g: float = Field(ge=-0.5, le=0.5)


class NmsConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: Literal["fixed", "adaptive"] = "fixed"
    fixed_threshold: float = Field(default=0.83, gt=0.0, lt=1.0)
    adaptive_floor: float = Field(default=0.5, gt=0.0, lt=1.0)

    def threshold_for(self, num_proposals: int) -> float:
        if self.mode == "fixed":
            return self.fixed_threshold
        return max(self.adaptive_floor, 1.0 - num_proposals * 1e-4)


def tiou_range(start: float, stop: float, step: float = 0.05) -> List[float]:
    """Inclusive threshold grid rounded to the step's precision"""
    count = int(round((stop - start) / step)) + 1
    return [round(start + k * step, 4) for k in range(count)]


class MetricConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    tiou_thresholds: List[float] = Field(default_factory=lambda: tiou_range(0.5, 1.0))
    an_values: List[int] = Field(default_factory=lambda: [1, 5, 10, 20, 50, 100])
    auc_an_range: Tuple[int, int] = (1, 100)
    an_normalization: Literal["per_video", "corpus"] = "per_video"

    @field_validator("tiou_thresholds")
    @classmethod
    def _increasing_thresholds(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("at least one tIoU threshold is required")
        if any(not 0.0 < t <= 1.0 for t in value):
            raise ValueError("tIoU thresholds must lie in (0, 1]")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("tIoU thresholds must be strictly increasing")
        return value

    @field_validator("an_values")
    @classmethod
    def _positive_an(cls, value: List[int]) -> List[int]:
        if not value or any(an < 1 for an in value):
            raise ValueError("AN values must be positive")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("AN values must be strictly increasing")
        return value

    @field_validator("auc_an_range")
    @classmethod
    def _valid_range(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        if value[0] < 1 or value[1] < value[0]:
            raise ValueError("AUC AN range must satisfy 1 <= low <= high")
        return value
